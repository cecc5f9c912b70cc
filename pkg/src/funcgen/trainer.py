"""Contrastive training of the energy model.

Each minibatch compares two phases: a positive phase that pairs every data
sample with a conditional latent draw, and a negative phase of joint model
samples (one chain per batch element, persisted in a replay buffer).  The
parameter gradient is the difference of the two phases' mean energy
gradients; descending it lowers the energy of data relative to the energy of
model samples.  The scheduling signal is the surrogate loss, mean positive
energy minus mean negative energy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .model import SpectralEnergyModel, energy, grad_energy
from .net import (
    MlpGrads,
    MlpParams,
    add_scaled_grads,
    grads_to_vector,
    params_to_vector,
    vector_to_params,
    zeros_like_grads,
)
from .sampler import (
    LangevinConfig,
    ReplayBuffer,
    sample_conditional_batch,
    sample_joint,
)
from .spectral import mesh_fingerprint

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the last model and history."""

    def __init__(self, message, model=None, history=None):
        super().__init__(message)
        self.model = model
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    lr_coeff: float = 1e-3
    lr_energy: float = 5e-4
    plateau_factor: float = 0.1
    min_lr: float = 1e-5
    patience: int = 5
    early_stop_patience: int = 15
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        for name in ("lr_coeff", "lr_energy", "min_lr"):
            val = getattr(self, name)
            if not np.isfinite(val) or val <= 0:
                raise ValueError(f"{name} must be positive, got {val}")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError(f"plateau_factor must be in (0, 1), got {self.plateau_factor}")
        if self.patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be >= 1")


@dataclass
class AdamState:
    """First/second moment accumulators over the flattened parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adam_init(params: MlpParams) -> AdamState:
    n = params_to_vector(params).size
    return AdamState(m=np.zeros(n), v=np.zeros(n), step=0)


def adam_step(params: MlpParams, grads: MlpGrads, state: AdamState, lr: float):
    """One adaptive-moment descent update; returns (new params, new state).

    The scaled-tanh head scale is re-clipped to its valid range by parameter
    construction after the update.
    """
    g = grads_to_vector(grads)
    x = params_to_vector(params)
    t = state.step + 1
    m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * g
    v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * g * g
    m_hat = m / (1.0 - ADAM_BETA1**t)
    v_hat = v / (1.0 - ADAM_BETA2**t)
    x_new = x - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return vector_to_params(x_new, params), AdamState(m=m, v=v, step=t)


@dataclass
class CdStats:
    """Contrastive gradient (positive mean minus negative mean) and energies."""

    coeff_grads: MlpGrads
    energy_grads: MlpGrads
    mean_pos_energy: float
    mean_neg_energy: float


def _group_by_mesh(batch):
    """Split samples into (mesh, stacked values) groups of identical meshes."""
    order = []
    groups = {}
    for sample in batch:
        key = mesh_fingerprint(sample.mesh)
        if key not in groups:
            groups[key] = (sample.mesh, [])
            order.append(key)
        groups[key][1].append(sample.values)
    return [(groups[k][0], np.array(groups[k][1])) for k in order]


def _phase(model, groups):
    """Summed parameter gradients and stacked energies over sample groups."""
    coeff = zeros_like_grads(model.coeff_net)
    energy_g = zeros_like_grads(model.energy_net)
    energies = []
    for values, latent, mesh in groups:
        pair = grad_energy(model, values, latent, mesh, with_param_grads=True)
        add_scaled_grads(coeff, pair.coeff_grads)
        add_scaled_grads(energy_g, pair.energy_grads)
        energies.append(energy(model, values, latent, mesh))
    return coeff, energy_g, np.concatenate(energies)


def cd_from_samples(model: SpectralEnergyModel, positives, negatives) -> CdStats:
    """Contrastive gradient from explicit phase samples.

    Each phase is a list of (values (B, M), latent (B, d), mesh) groups.
    Forcing identical phases yields an exactly zero gradient.
    """
    pos_c, pos_e, pos_energies = _phase(model, positives)
    neg_c, neg_e, neg_energies = _phase(model, negatives)
    n_pos = pos_energies.size
    n_neg = neg_energies.size
    coeff = zeros_like_grads(model.coeff_net)
    add_scaled_grads(coeff, pos_c, 1.0 / n_pos)
    add_scaled_grads(coeff, neg_c, -1.0 / n_neg)
    energy_g = zeros_like_grads(model.energy_net)
    add_scaled_grads(energy_g, pos_e, 1.0 / n_pos)
    add_scaled_grads(energy_g, neg_e, -1.0 / n_neg)
    return CdStats(
        coeff_grads=coeff,
        energy_grads=energy_g,
        mean_pos_energy=float(pos_energies.mean()),
        mean_neg_energy=float(neg_energies.mean()),
    )


def cd_gradient(
    model: SpectralEnergyModel,
    batch,
    buffer: ReplayBuffer,
    lcfg: LangevinConfig,
    rng: np.random.Generator | None = None,
) -> CdStats:
    """Contrastive gradient for a minibatch of FunctionSample.

    Positive phase: one conditional latent chain per sample, given its
    values.  Negative phase: one joint chain per sample on the same mesh,
    seeded from the replay buffer.  Samples on different meshes are grouped
    and processed per mesh.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("batch must be nonempty")
    if rng is None:
        rng = np.random.default_rng(lcfg.noise_seed)
    positives, negatives = [], []
    for mesh, values in _group_by_mesh(batch):
        z_pos = sample_conditional_batch(model, values, mesh, lcfg, rng)
        positives.append((values, z_pos, mesh))
        v_neg, z_neg = sample_joint(model, mesh, buffer, lcfg, values.shape[0], rng)
        negatives.append((v_neg, z_neg, mesh))
    return cd_from_samples(model, positives, negatives)


@dataclass
class EpochStats:
    epoch: int
    surrogate_loss: float
    lr_coeff: float
    lr_energy: float
    mean_pos_energy: float
    mean_neg_energy: float
    wall_time_s: float


HISTORY_HEADER = "epoch,surrogate_loss,lr_coeff,lr_energy,mean_pos_energy,mean_neg_energy,wall_time_s"


def write_history_csv(path, history) -> None:
    rows = [HISTORY_HEADER]
    for h in history:
        rows.append(
            f"{h.epoch},{float(h.surrogate_loss)!r},{float(h.lr_coeff)!r},"
            f"{float(h.lr_energy)!r},{float(h.mean_pos_energy)!r},"
            f"{float(h.mean_neg_energy)!r},{float(h.wall_time_s)!r}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")


def train(
    model: SpectralEnergyModel,
    dataset,
    tcfg: TrainConfig,
    lcfg: LangevinConfig,
    buffer: ReplayBuffer | None = None,
):
    """Run the full training loop; returns (best model, per-epoch history).

    Minibatches are a seeded shuffle partition (short final batch kept).  The
    plateau scheduler multiplies both learning rates by ``plateau_factor``
    after ``patience`` epochs without surrogate-loss improvement, floored at
    ``min_lr``; training stops early after ``early_stop_patience``
    non-improving epochs.  The returned model is the best-loss snapshot.
    """
    samples = list(dataset)
    if not samples:
        raise ValueError("dataset must be nonempty")
    if tcfg.epochs == 0:
        return model, []
    rng = np.random.default_rng(tcfg.seed)
    if buffer is None:
        buffer = ReplayBuffer()

    current = replace(model, coeff_net=model.coeff_net.copy(), energy_net=model.energy_net.copy())
    state_c = adam_init(current.coeff_net)
    state_e = adam_init(current.energy_net)
    lr_c, lr_e = tcfg.lr_coeff, tcfg.lr_energy

    best_loss = np.inf
    best_coeff = current.coeff_net.copy()
    best_energy = current.energy_net.copy()
    plateau_bad = 0
    stop_bad = 0
    history = []

    for epoch in range(tcfg.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(len(samples))
        pos_sum = neg_sum = 0.0
        n_seen = 0
        for start in range(0, len(samples), tcfg.batch_size):
            batch = [samples[i] for i in perm[start : start + tcfg.batch_size]]
            stats = cd_gradient(current, batch, buffer, lcfg, rng)
            new_coeff, state_c = adam_step(current.coeff_net, stats.coeff_grads, state_c, lr_c)
            new_energy, state_e = adam_step(current.energy_net, stats.energy_grads, state_e, lr_e)
            current = replace(current, coeff_net=new_coeff, energy_net=new_energy)
            pos_sum += stats.mean_pos_energy * len(batch)
            neg_sum += stats.mean_neg_energy * len(batch)
            n_seen += len(batch)

        mean_pos = pos_sum / n_seen
        mean_neg = neg_sum / n_seen
        surrogate = mean_pos - mean_neg
        history.append(
            EpochStats(
                epoch=epoch,
                surrogate_loss=surrogate,
                lr_coeff=lr_c,
                lr_energy=lr_e,
                mean_pos_energy=mean_pos,
                mean_neg_energy=mean_neg,
                wall_time_s=time.perf_counter() - t0,
            )
        )
        if not np.isfinite(surrogate):
            raise TrainingDivergedError(
                f"non-finite surrogate loss at epoch {epoch}", model=current, history=history
            )

        if surrogate < best_loss:
            best_loss = surrogate
            best_coeff = current.coeff_net.copy()
            best_energy = current.energy_net.copy()
            plateau_bad = 0
            stop_bad = 0
        else:
            plateau_bad += 1
            stop_bad += 1
            if plateau_bad >= tcfg.patience:
                lr_c = max(lr_c * tcfg.plateau_factor, tcfg.min_lr)
                lr_e = max(lr_e * tcfg.plateau_factor, tcfg.min_lr)
                plateau_bad = 0
            if stop_bad >= tcfg.early_stop_patience:
                break

    best = replace(model, coeff_net=best_coeff, energy_net=best_energy)
    return best, history

"""Unadjusted Langevin dynamics over (values, latent) plus a replay buffer.

One step moves each block half a step down its energy gradient and injects
Gaussian noise scaled by the square root of the step size; there is no
accept/reject correction.  Joint chains update both blocks simultaneously
from a single gradient evaluation.  Chains are batched: a batch of B chains
is a (B, M) values array paired with a (B, latent_dim) latent array.

The replay buffer persists final chain states across calls, keyed by mesh
fingerprint so states from different meshes never mix.  Any chain that turns
non-finite is restarted once from a fresh initialization before the draw
fails with ChainDivergedError.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    ContinuousBernoulli,
    Gaussian,
    SpectralEnergyModel,
    decode,
    energy,
    grad_energy,
)
from .net import mlp_backward
from .spectral import FunctionSample, as_mesh, mesh_fingerprint


class ChainDivergedError(RuntimeError):
    """A sampling chain produced non-finite state; carries the bad state."""

    def __init__(self, message, values=None, latent=None):
        super().__init__(message)
        self.values = values
        self.latent = latent


@dataclass(frozen=True)
class LangevinConfig:
    step_size: float = 1e-3
    n_steps: int = 100
    noise_seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.step_size) or self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be >= 0, got {self.n_steps}")


@dataclass
class ReplayBuffer:
    """Fixed-capacity FIFO store of chain states grouped by mesh key."""

    capacity: int = 8192
    reuse_prob: float = 0.9
    _entries: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")
        if not 0.0 <= self.reuse_prob <= 1.0:
            raise ValueError(f"reuse_prob must be in [0, 1], got {self.reuse_prob}")

    def __len__(self) -> int:
        return len(self._entries)

    def count_for(self, key: str) -> int:
        return sum(1 for k, _, _ in self._entries if k == key)

    def push(self, key: str, values: np.ndarray, latent: np.ndarray) -> None:
        """Append one state, evicting the oldest entry when full."""
        self._entries.append((key, np.array(values, dtype=float), np.array(latent, dtype=float)))
        if len(self._entries) > self.capacity:
            del self._entries[0]

    def draw(self, key: str, rng: np.random.Generator):
        """Uniformly pick a stored state for this mesh key, or None."""
        idx = [i for i, (k, _, _) in enumerate(self._entries) if k == key]
        if not idx:
            return None
        _, values, latent = self._entries[int(rng.choice(idx))]
        return values.copy(), latent.copy()


def _rng_of(cfg: LangevinConfig, rng) -> np.random.Generator:
    return np.random.default_rng(cfg.noise_seed) if rng is None else rng


def _clamp_values(model: SpectralEnergyModel) -> bool:
    return isinstance(model.likelihood, ContinuousBernoulli)


def langevin_step(
    model: SpectralEnergyModel,
    values,
    latent,
    mesh,
    cfg: LangevinConfig,
    rng: np.random.Generator | None = None,
    clamp_values: bool | None = None,
):
    """One joint update of (values, latent); accepts single or batched state.

    Raises ChainDivergedError if the energy gradient is non-finite anywhere.
    """
    rng = _rng_of(cfg, rng)
    if clamp_values is None:
        clamp_values = _clamp_values(model)
    y = np.asarray(values, dtype=float)
    z = np.asarray(latent, dtype=float)
    grads = grad_energy(model, y, z, mesh, with_param_grads=False)
    if not (np.all(np.isfinite(grads.d_values)) and np.all(np.isfinite(grads.d_latent))):
        raise ChainDivergedError("non-finite energy gradient", values=y, latent=z)
    lam = cfg.step_size
    scale = np.sqrt(lam)
    y_new = y - 0.5 * lam * grads.d_values + scale * rng.standard_normal(y.shape)
    z_new = z - 0.5 * lam * grads.d_latent + scale * rng.standard_normal(z.shape)
    if clamp_values:
        y_new = np.clip(y_new, 0.0, 1.0)
    return y_new, z_new


def _run_latent_chains(grad_fn, z0, cfg, rng):
    """Latent-only chain on a batch; rows that turn non-finite freeze as NaN.

    Returns (final latents, boolean mask of failed rows).
    """
    z = z0.copy()
    lam = cfg.step_size
    scale = np.sqrt(lam)
    with np.errstate(all="ignore"):
        for _ in range(cfg.n_steps):
            g = grad_fn(np.nan_to_num(z))
            bad = ~np.all(np.isfinite(g), axis=1)
            z_new = z - 0.5 * lam * g + scale * rng.standard_normal(z.shape)
            bad |= ~np.all(np.isfinite(z_new), axis=1) | np.isnan(z[:, 0])
            z = np.where(bad[:, None], np.nan, z_new)
    return z, np.isnan(z[:, 0])


def sample_conditional_batch(
    model: SpectralEnergyModel,
    values_batch,
    mesh,
    cfg: LangevinConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """One conditional latent chain per row of observed values.

    Row i of the result conditions on row i of ``values_batch``; observed
    values are never modified.  Returns (B, latent_dim).
    """
    rng = _rng_of(cfg, rng)
    yb = np.asarray(values_batch, dtype=float)
    if yb.ndim != 2:
        raise ValueError("values_batch must be 2-D (one row per chain)")

    latent, failed = _run_latent_chains(
        lambda z: grad_energy(model, yb, z, mesh, with_param_grads=False).d_latent,
        rng.standard_normal((yb.shape[0], model.latent_dim)),
        cfg,
        rng,
    )
    if failed.any():
        y_sub = yb[failed]
        retry, still_bad = _run_latent_chains(
            lambda z: grad_energy(model, y_sub, z, mesh, with_param_grads=False).d_latent,
            rng.standard_normal((y_sub.shape[0], model.latent_dim)),
            cfg,
            rng,
        )
        if still_bad.any():
            raise ChainDivergedError(
                f"{int(still_bad.sum())} conditional chain(s) diverged twice",
                values=y_sub[still_bad],
                latent=retry[still_bad],
            )
        latent[failed] = retry
    return latent


def sample_conditional(
    model: SpectralEnergyModel,
    values,
    mesh,
    cfg: LangevinConfig,
    n_chains: int,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Sample latents given one fixed set of observed values.

    Runs ``n_chains`` independent latent-block chains; the observed values
    are shared and never modified.  Returns (n_chains, latent_dim).
    """
    if n_chains < 1:
        raise ValueError(f"n_chains must be >= 1, got {n_chains}")
    y = np.asarray(values, dtype=float)
    if y.ndim != 1:
        raise ValueError("conditional sampling takes a single set of observed values")
    yb = np.broadcast_to(y, (n_chains, y.shape[0]))
    return sample_conditional_batch(model, yb, mesh, cfg, rng)


def sample_prior_latent(
    model: SpectralEnergyModel,
    cfg: LangevinConfig,
    n_chains: int,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Sample the latent marginal, whose energy is energy_net(z) + ||z||^2/2.

    The factorized likelihood integrates to one for any latent, so the joint
    density marginalizes over observations to exactly this latent law.
    """
    if n_chains < 1:
        raise ValueError(f"n_chains must be >= 1, got {n_chains}")
    rng = _rng_of(cfg, rng)

    def grad(z):
        pair = mlp_backward(model.energy_net, z, np.ones((z.shape[0], 1)), with_param_grads=False)
        return pair.grad_input + z

    latent, failed = _run_latent_chains(
        grad, rng.standard_normal((n_chains, model.latent_dim)), cfg, rng
    )
    if failed.any():
        retry, still_bad = _run_latent_chains(
            grad, rng.standard_normal((int(failed.sum()), model.latent_dim)), cfg, rng
        )
        if still_bad.any():
            raise ChainDivergedError(
                f"{int(still_bad.sum())} prior chain(s) diverged twice",
                latent=retry[still_bad],
            )
        latent[failed] = retry
    return latent


def _fresh_joint_init(model, n_points, rng, clamp):
    values = 0.1 * rng.standard_normal(n_points)
    if clamp:
        values = np.clip(values, 0.0, 1.0)
    latent = rng.standard_normal(model.latent_dim)
    return values, latent


def _run_joint_chains(model, values, latent, mesh, cfg, rng, clamp):
    """Run n_steps on a batch; non-finite rows freeze as NaN for retry logic."""
    y = values.copy()
    z = latent.copy()
    lam = cfg.step_size
    scale = np.sqrt(lam)
    with np.errstate(all="ignore"):
        for _ in range(cfg.n_steps):
            grads = grad_energy(
                model, np.nan_to_num(y), np.nan_to_num(z), mesh, with_param_grads=False
            )
            bad = ~(
                np.all(np.isfinite(grads.d_values), axis=1)
                & np.all(np.isfinite(grads.d_latent), axis=1)
            )
            y_new = y - 0.5 * lam * grads.d_values + scale * rng.standard_normal(y.shape)
            z_new = z - 0.5 * lam * grads.d_latent + scale * rng.standard_normal(z.shape)
            if clamp:
                y_new = np.clip(y_new, 0.0, 1.0)
            bad |= ~(np.all(np.isfinite(y_new), axis=1) & np.all(np.isfinite(z_new), axis=1))
            bad |= np.isnan(y[:, 0])
            y = np.where(bad[:, None], np.nan, y_new)
            z = np.where(bad[:, None], np.nan, z_new)
    failed = np.isnan(y[:, 0])
    return y, z, failed


def sample_joint(
    model: SpectralEnergyModel,
    mesh,
    buffer: ReplayBuffer,
    cfg: LangevinConfig,
    n_chains: int,
    rng: np.random.Generator | None = None,
):
    """Draw joint (values, latent) samples via batched Langevin chains.

    Each chain resumes a buffered state for this mesh with probability
    ``buffer.reuse_prob`` and otherwise starts fresh (values ~ 0.1 x standard
    normal, latent ~ standard normal).  Final states are pushed back into the
    buffer.  Returns (values (n_chains, M), latent (n_chains, latent_dim)).
    """
    if n_chains < 1:
        raise ValueError(f"n_chains must be >= 1, got {n_chains}")
    rng = _rng_of(cfg, rng)
    queries = as_mesh(mesh)
    key = mesh_fingerprint(queries)
    clamp = _clamp_values(model)
    n_points = queries.shape[0]

    values = np.empty((n_chains, n_points))
    latent = np.empty((n_chains, model.latent_dim))
    for i in range(n_chains):
        state = None
        if rng.random() < buffer.reuse_prob:
            state = buffer.draw(key, rng)
        if state is None:
            state = _fresh_joint_init(model, n_points, rng, clamp)
        values[i], latent[i] = state

    values, latent, failed = _run_joint_chains(model, values, latent, queries, cfg, rng, clamp)
    if failed.any():
        n_bad = int(failed.sum())
        retry_v = np.empty((n_bad, n_points))
        retry_z = np.empty((n_bad, model.latent_dim))
        for j in range(n_bad):
            retry_v[j], retry_z[j] = _fresh_joint_init(model, n_points, rng, clamp)
        retry_v, retry_z, still_bad = _run_joint_chains(
            model, retry_v, retry_z, queries, cfg, rng, clamp
        )
        if still_bad.any():
            raise ChainDivergedError(
                f"{int(still_bad.sum())} joint chain(s) diverged twice",
                values=retry_v[still_bad],
                latent=retry_z[still_bad],
            )
        values[failed] = retry_v
        latent[failed] = retry_z

    for i in range(n_chains):
        buffer.push(key, values[i], latent[i])
    return values, latent


def sample_observations(likelihood, values, rng: np.random.Generator) -> np.ndarray:
    """Draw observations from the per-point likelihood around decoded values."""
    f = np.asarray(values, dtype=float)
    if isinstance(likelihood, Gaussian):
        return f + likelihood.sigma * rng.standard_normal(f.shape)
    if isinstance(likelihood, ContinuousBernoulli):
        # Inverse CDF: y = log(1 + u (e^r - 1)) / r with r the raw logit;
        # the limit at r = 0 is y = u.
        u = rng.random(f.shape)
        r = f
        out = np.empty_like(f)
        small = np.abs(r) < 1e-6
        rs = r[~small]
        out[~small] = np.log1p(u[~small] * np.expm1(rs)) / rs
        us = u[small]
        out[small] = us + 0.5 * r[small] * us * (1.0 - us)
        return np.clip(out, 0.0, 1.0)
    raise TypeError(f"unknown likelihood {type(likelihood).__name__}")


def sample_functions(
    model: SpectralEnergyModel,
    mesh,
    n_samples: int,
    cfg: LangevinConfig,
    rng: np.random.Generator | None = None,
) -> list:
    """Draw function samples from the model on a mesh.

    Uses the exact two-stage factorization: latent from its marginal via
    Langevin, then observations from the likelihood around the decoded
    function.  Returns FunctionSample objects.
    """
    rng = _rng_of(cfg, rng)
    queries = as_mesh(mesh)
    latent = sample_prior_latent(model, cfg, n_samples, rng)
    decoded = decode(model, latent, queries)
    observed = sample_observations(model.likelihood, decoded, rng)
    return [FunctionSample(mesh=queries, values=observed[i]) for i in range(n_samples)]


def write_chain_trace(path, model, mesh, buffer, cfg, n_chains, rng=None) -> None:
    """Diagnostic CSV of a joint run: per-step mean energy and gradient norm."""
    rng = _rng_of(cfg, rng)
    queries = as_mesh(mesh)
    key = mesh_fingerprint(queries)
    clamp = _clamp_values(model)
    values = np.empty((n_chains, queries.shape[0]))
    latent = np.empty((n_chains, model.latent_dim))
    for i in range(n_chains):
        state = buffer.draw(key, rng) if rng.random() < buffer.reuse_prob else None
        if state is None:
            state = _fresh_joint_init(model, queries.shape[0], rng, clamp)
        values[i], latent[i] = state

    rows = ["step,energy,grad_norm"]
    lam = cfg.step_size
    scale = np.sqrt(lam)
    for step in range(cfg.n_steps):
        grads = grad_energy(model, values, latent, queries, with_param_grads=False)
        e = float(np.mean(energy(model, values, latent, queries)))
        gnorm = float(
            np.mean(
                np.sqrt(np.sum(grads.d_values**2, axis=1) + np.sum(grads.d_latent**2, axis=1))
            )
        )
        rows.append(f"{step},{float(e)!r},{float(gnorm)!r}")
        values = values - 0.5 * lam * grads.d_values + scale * rng.standard_normal(values.shape)
        latent = latent - 0.5 * lam * grads.d_latent + scale * rng.standard_normal(latent.shape)
        if clamp:
            values = np.clip(values, 0.0, 1.0)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")

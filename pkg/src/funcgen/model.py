"""Energy-based joint density over function values and latent codes.

A model couples three pieces: a truncated spectral basis (EigenSystem), a
coefficient network mapping a latent vector to basis coefficients, and a
scalar energy network on the latent.  Writing f = decode(Z) for the implied
function, the unnormalized joint density of observed values Y on a mesh X is

    p(Y, Z; X)  ∝  exp(-energy(Y, Z; X))
    energy      =  -log_likelihood(Y; f(X)) + energy_net(Z) + ||Z||^2 / 2

The quadratic term is the standard-normal latent prior up to an additive
constant; constants are dropped throughout because only gradients and density
ratios are ever used.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import expit, log_expit

from .net import (
    GradPair,
    MlpGrads,
    MlpParams,
    load_mlp,
    mlp_backward,
    mlp_forward,
    save_mlp,
)
from .spectral import (
    EigenSystem,
    as_mesh,
    eigenfunction_matrix,
    kl_expand_batch,
    load_eigensystem,
    save_eigensystem,
)

GAUSS_LOG_NORM = 0.5 * np.log(2.0 * np.pi)

# Width of the Taylor branch around lambda = 1/2 for the continuous-Bernoulli
# normalizer, where the closed form is 0/0.
CB_TAYLOR_HALF_WIDTH = 1e-4


@dataclass(frozen=True)
class Gaussian:
    """Independent Gaussian observation noise with fixed scale."""

    sigma: float = 0.05

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")


@dataclass(frozen=True)
class ContinuousBernoulli:
    """Continuous Bernoulli observation model for values in [0, 1].

    The decoded function output f is squashed through a logistic to the
    density parameter lambda in (0, 1).
    """


LIKELIHOOD_NAMES = {"gaussian": Gaussian, "cbernoulli": ContinuousBernoulli}


def likelihood_name(likelihood) -> str:
    for name, cls in LIKELIHOOD_NAMES.items():
        if isinstance(likelihood, cls):
            return name
    raise TypeError(f"unknown likelihood {type(likelihood).__name__}")


def _pair_arrays(values, targets):
    f = np.asarray(values, dtype=float)
    y = np.asarray(targets, dtype=float)
    if f.shape != y.shape:
        raise ValueError(f"values shape {f.shape} != targets shape {y.shape}")
    if f.ndim not in (1, 2):
        raise ValueError(f"values must be 1-D or 2-D, got {f.ndim}-D")
    return f, y


def _check_unit_targets(y: np.ndarray) -> None:
    if y.size and (y.min() < 0.0 or y.max() > 1.0):
        raise ValueError("ContinuousBernoulli targets must lie in [0, 1]")


def _cb_log_norm_from_t(t: np.ndarray) -> np.ndarray:
    """log C(lambda) written in t = 1 - 2*lambda: log(2 atanh(t) / t).

    Even in t, with a removable singularity at t = 0 handled by a short
    Taylor series.
    """
    t = np.clip(t, -np.nextafter(1.0, 0.0), np.nextafter(1.0, 0.0))
    out = np.empty_like(t)
    small = np.abs(t) < 2.0 * CB_TAYLOR_HALF_WIDTH
    ts = t[~small]
    out[~small] = np.log(2.0) + np.log(np.arctanh(ts) / ts)
    tt = t[small]
    t2 = tt * tt
    out[small] = np.log(2.0) + t2 / 3.0 + (4.0 / 45.0) * t2 * t2
    return out


def _cb_dlog_norm_dt(t: np.ndarray) -> np.ndarray:
    """d/dt of log C; odd in t, ~ (2/3) t near zero."""
    t = np.clip(t, -np.nextafter(1.0, 0.0), np.nextafter(1.0, 0.0))
    out = np.empty_like(t)
    small = np.abs(t) < 2.0 * CB_TAYLOR_HALF_WIDTH
    ts = t[~small]
    at = np.arctanh(ts)
    out[~small] = (ts / (1.0 - ts * ts) - at) / (ts * at)
    tt = t[small]
    out[small] = (2.0 / 3.0) * tt + (16.0 / 45.0) * tt**3
    return out


def cb_log_norm(lam) -> np.ndarray:
    """Log normalizing constant of the continuous Bernoulli, log C(lambda)."""
    lam = np.asarray(lam, dtype=float)
    return _cb_log_norm_from_t(1.0 - 2.0 * lam)


def log_likelihood(likelihood, values, targets):
    """Factorized log likelihood of targets given decoded values.

    ``values`` are raw network outputs f; ``targets`` are observations y.
    Accepts (M,) pairs, returning a float, or (B, M) batches, returning (B,).
    """
    f, y = _pair_arrays(values, targets)
    if isinstance(likelihood, Gaussian):
        s2 = likelihood.sigma**2
        per_point = -((y - f) ** 2) / (2.0 * s2) - GAUSS_LOG_NORM - np.log(likelihood.sigma)
    elif isinstance(likelihood, ContinuousBernoulli):
        _check_unit_targets(y)
        # lambda = expit(f); 1 - 2*lambda = -tanh(f/2) in a stable form.
        t = -np.tanh(0.5 * f)
        per_point = y * log_expit(f) + (1.0 - y) * log_expit(-f) + _cb_log_norm_from_t(t)
    else:
        raise TypeError(f"unknown likelihood {type(likelihood).__name__}")
    total = per_point.sum(axis=-1)
    return float(total) if f.ndim == 1 else total


def log_likelihood_grads(likelihood, values, targets):
    """(d loglik / d values, d loglik / d targets), each input-shaped."""
    f, y = _pair_arrays(values, targets)
    if isinstance(likelihood, Gaussian):
        s2 = likelihood.sigma**2
        d_f = (y - f) / s2
        d_y = (f - y) / s2
    elif isinstance(likelihood, ContinuousBernoulli):
        _check_unit_targets(y)
        lam = expit(f)
        t = -np.tanh(0.5 * f)
        # d loglik / d lambda = (y - lam)/(lam (1-lam)) + d log C / d lambda,
        # then times d lambda / d f = lam (1-lam); dC part via t = 1 - 2 lam.
        d_f = (y - lam) - 2.0 * _cb_dlog_norm_dt(t) * lam * (1.0 - lam)
        d_y = f
    else:
        raise TypeError(f"unknown likelihood {type(likelihood).__name__}")
    return d_f, d_y


@dataclass
class SpectralEnergyModel:
    """Generative model over functions: spectral basis + two latent networks.

    ``coeff_net`` maps a latent vector to basis coefficients (linear head);
    ``energy_net`` maps it to a bounded scalar energy offset (scaled-tanh
    head).  The model is treated as immutable during sampling and evaluation.
    """

    eigsys: EigenSystem
    coeff_net: MlpParams
    energy_net: MlpParams
    likelihood: object

    def __post_init__(self):
        if self.coeff_net.in_dim != self.energy_net.in_dim:
            raise ValueError(
                f"coeff_net input dim {self.coeff_net.in_dim} != "
                f"energy_net input dim {self.energy_net.in_dim}"
            )
        if self.coeff_net.out_dim != self.eigsys.n_basis:
            raise ValueError(
                f"coeff_net output dim {self.coeff_net.out_dim} != "
                f"basis truncation {self.eigsys.n_basis}"
            )
        if self.energy_net.out_dim != 1:
            raise ValueError(f"energy_net must be scalar, got out_dim {self.energy_net.out_dim}")
        if self.coeff_net.output_head != "linear":
            raise ValueError("coeff_net must use a linear head")
        if self.energy_net.output_head != "scaled_tanh":
            raise ValueError("energy_net must use a scaled_tanh head")
        likelihood_name(self.likelihood)

    @property
    def latent_dim(self) -> int:
        return self.coeff_net.in_dim

    @property
    def n_basis(self) -> int:
        return self.coeff_net.out_dim


def _as_latent_batch(model: SpectralEnergyModel, latent):
    z = np.asarray(latent, dtype=float)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    if z.ndim != 2 or z.shape[1] != model.latent_dim:
        raise ValueError(f"latent must have {model.latent_dim} entries per row, got shape {np.shape(latent)}")
    return z, single


def decode(model: SpectralEnergyModel, latent, queries) -> np.ndarray:
    """Function values implied by a latent code, at arbitrary query points.

    Accepts a single latent (d,) -> (M,) values, or a batch (B, d) -> (B, M).
    """
    z, single = _as_latent_batch(model, latent)
    coeffs = mlp_forward(model.coeff_net, z)
    out = kl_expand_batch(model.eigsys, coeffs, queries)
    return out[0] if single else out


def latent_energy_offset(model: SpectralEnergyModel, latent) -> np.ndarray:
    """The learned scalar energy term on the latent (batch-aware)."""
    z, single = _as_latent_batch(model, latent)
    out = mlp_forward(model.energy_net, z)[:, 0]
    return float(out[0]) if single else out


def energy(model: SpectralEnergyModel, values, latent, mesh):
    """Negative log unnormalized joint density E(Y, Z; X).

    Single (values (M,), latent (d,)) -> float; batched ((B, M), (B, d)) ->
    (B,).  The mesh is shared across the batch.
    """
    z, zsingle = _as_latent_batch(model, latent)
    y = np.asarray(values, dtype=float)
    ysingle = y.ndim == 1
    if ysingle != zsingle:
        raise ValueError("values and latent must be both single or both batched")
    yb = y[None, :] if ysingle else y
    if yb.shape[0] != z.shape[0]:
        raise ValueError(f"values batch {yb.shape[0]} != latent batch {z.shape[0]}")
    f = decode(model, z, mesh)
    if f.shape[1] != yb.shape[1]:
        raise ValueError(f"values per function {yb.shape[1]} != mesh size {f.shape[1]}")
    ll = log_likelihood(model.likelihood, f, yb)
    offset = mlp_forward(model.energy_net, z)[:, 0]
    e = -ll + offset + 0.5 * np.sum(z * z, axis=1)
    return float(e[0]) if zsingle else e


@dataclass
class EnergyGrads:
    """Gradients of the energy w.r.t. observed values, latent, and parameters.

    For batched inputs the state gradients keep the batch axis while the
    parameter gradients are summed over the batch.
    """

    d_values: np.ndarray
    d_latent: np.ndarray
    coeff_grads: MlpGrads
    energy_grads: MlpGrads


def grad_energy(
    model: SpectralEnergyModel,
    values,
    latent,
    mesh,
    with_param_grads: bool = True,
) -> EnergyGrads:
    """Exact gradients of ``energy`` by reverse mode through all components."""
    z, zsingle = _as_latent_batch(model, latent)
    y = np.asarray(values, dtype=float)
    ysingle = y.ndim == 1
    if ysingle != zsingle:
        raise ValueError("values and latent must be both single or both batched")
    yb = y[None, :] if ysingle else y
    if yb.shape[0] != z.shape[0]:
        raise ValueError(f"values batch {yb.shape[0]} != latent batch {z.shape[0]}")

    queries = as_mesh(mesh)
    coeffs = mlp_forward(model.coeff_net, z)
    # Eigenfunction values at the mesh scaled by sqrt(eigenvalue), (M, n_basis);
    # decode is the linear map coeffs @ basis.T.
    basis = eigenfunction_matrix(model.eigsys, queries) * np.sqrt(model.eigsys.eigenvalues)
    f = coeffs @ basis.T
    if f.shape[1] != yb.shape[1]:
        raise ValueError(f"values per function {yb.shape[1]} != mesh size {f.shape[1]}")

    d_ll_f, d_ll_y = log_likelihood_grads(model.likelihood, f, yb)
    d_values = -d_ll_y
    d_coeffs = -(d_ll_f @ basis)

    coeff_pair: GradPair = mlp_backward(model.coeff_net, z, d_coeffs, with_param_grads)
    ones = np.ones((z.shape[0], 1))
    energy_pair: GradPair = mlp_backward(model.energy_net, z, ones, with_param_grads)
    d_latent = coeff_pair.grad_input + energy_pair.grad_input + z

    if zsingle:
        d_values = d_values[0]
        d_latent = d_latent[0]
    return EnergyGrads(
        d_values=d_values,
        d_latent=d_latent,
        coeff_grads=coeff_pair.grad_params,
        energy_grads=energy_pair.grad_params,
    )


def finite_dim_density(model: SpectralEnergyModel, values, mesh, n_nodes: int = 64) -> float:
    """Unnormalized marginal density of observed values on a mesh.

    Integrates exp(-energy) over the latent with Gauss-Hermite quadrature
    (probabilists' nodes, tensorized).  Only supports latent_dim <= 2; used
    for consistency checking, not training.
    """
    if model.latent_dim > 2:
        raise ValueError(f"quadrature density needs latent_dim <= 2, got {model.latent_dim}")
    if n_nodes < 64:
        raise ValueError(f"need at least 64 quadrature nodes per dim, got {n_nodes}")
    y = np.asarray(values, dtype=float)
    if y.ndim != 1:
        raise ValueError("finite_dim_density takes a single set of values")

    nodes, weights = hermegauss(n_nodes)
    log_w = np.log(weights) - 0.5 * np.log(2.0 * np.pi)
    if model.latent_dim == 1:
        zs = nodes[:, None]
        log_wts = log_w
    else:
        za, zb = np.meshgrid(nodes, nodes, indexing="ij")
        zs = np.column_stack([za.ravel(), zb.ravel()])
        log_wts = (log_w[:, None] + log_w[None, :]).ravel()

    f = decode(model, zs, mesh)
    ll = log_likelihood(model.likelihood, f, np.broadcast_to(y, f.shape))
    offset = mlp_forward(model.energy_net, zs)[:, 0]
    log_terms = ll - offset + log_wts
    m = log_terms.max()
    return float(np.exp(m) * np.sum(np.exp(log_terms - m)))


MANIFEST_NAME = "manifest.txt"
EIGSYS_NAME = "eigsys.txt"
COEFF_NET_NAME = "coeff_net.txt"
ENERGY_NET_NAME = "energy_net.txt"


def save_model(dirpath, model: SpectralEnergyModel, extra: dict | None = None) -> None:
    """Write a checkpoint directory: manifest, eigensystem, both networks.

    ``extra`` holds additional manifest lines (single-token keys, string
    values), e.g. input-encoding settings managed by callers.
    """
    os.makedirs(dirpath, exist_ok=True)
    lines = ["model v1", f"likelihood {likelihood_name(model.likelihood)}"]
    if isinstance(model.likelihood, Gaussian):
        lines.append(f"sigma {float(model.likelihood.sigma)!r}")
    lines.append(f"latent_dim {model.latent_dim}")
    lines.append(f"n_basis {model.n_basis}")
    for key, val in (extra or {}).items():
        if " " in key or key in ("likelihood", "sigma", "latent_dim", "n_basis"):
            raise ValueError(f"bad extra manifest key {key!r}")
        lines.append(f"{key} {val}")
    with open(os.path.join(dirpath, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    save_eigensystem(os.path.join(dirpath, EIGSYS_NAME), model.eigsys)
    save_mlp(os.path.join(dirpath, COEFF_NET_NAME), model.coeff_net)
    save_mlp(os.path.join(dirpath, ENERGY_NET_NAME), model.energy_net)


def load_model(dirpath):
    """Read a checkpoint directory; returns (model, extra-manifest dict)."""
    path = os.path.join(dirpath, MANIFEST_NAME)
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "model v1":
        raise ValueError(f"{path}: not a model manifest")
    fields = {}
    for ln in lines[1:]:
        key, _, val = ln.partition(" ")
        fields[key] = val
    name = fields.pop("likelihood")
    if name == "gaussian":
        likelihood = Gaussian(sigma=float(fields.pop("sigma")))
    elif name == "cbernoulli":
        likelihood = ContinuousBernoulli()
    else:
        raise ValueError(f"{path}: unknown likelihood {name!r}")
    latent_dim = int(fields.pop("latent_dim"))
    n_basis = int(fields.pop("n_basis"))
    model = SpectralEnergyModel(
        eigsys=load_eigensystem(os.path.join(dirpath, EIGSYS_NAME)),
        coeff_net=load_mlp(os.path.join(dirpath, COEFF_NET_NAME)),
        energy_net=load_mlp(os.path.join(dirpath, ENERGY_NET_NAME)),
        likelihood=likelihood,
    )
    if model.latent_dim != latent_dim or model.n_basis != n_basis:
        raise ValueError(f"{dirpath}: manifest dims do not match stored networks")
    return model, fields

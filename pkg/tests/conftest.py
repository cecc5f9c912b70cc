"""Shared builders for degenerate models used as analytic oracles."""

import numpy as np
import pytest

from funcgen.model import ContinuousBernoulli, Gaussian, SpectralEnergyModel
from funcgen.net import MlpParams, init_params
from funcgen.spectral import EigenSystem, Kernel, nystrom


def zeroed(params: MlpParams) -> MlpParams:
    """Copy of an MLP with every weight and bias zeroed (output identically 0)."""
    out = params.copy()
    for W in out.weights:
        W[:] = 0.0
    for b in out.biases:
        b[:] = 0.0
    return out


def linear_net(matrix, output_head="linear") -> MlpParams:
    """Single-layer MLP computing matrix @ x (no hidden activations)."""
    matrix = np.asarray(matrix, dtype=float)
    params = init_params([matrix.shape[1], matrix.shape[0]], seed=0, output_head=output_head)
    params.weights[0][:] = matrix
    params.biases[0][:] = 0.0
    return params


def unit_eigensystem() -> EigenSystem:
    """One anchor at 0, variance-1 kernel: single eigenvalue 1, eigenfunction 1."""
    return nystrom(Kernel("rbf", variance=1.0, lengthscale=1.0), np.zeros((1, 1)), 1, ridge=0.0)


def line_eigensystem(n_anchors=12, n_basis=6, lengthscale=0.5) -> EigenSystem:
    mesh = np.linspace(-1.0, 1.0, n_anchors)[:, None]
    return nystrom(Kernel("matern32", 1.0, lengthscale), mesh, n_basis)


def degenerate_model(
    eigsys=None,
    coeff_matrix=None,
    likelihood=None,
    latent_dim=None,
) -> SpectralEnergyModel:
    """Model with a linear coefficient map and an identically-zero latent energy.

    With coeff_matrix C the decoded function is (C z) weighted by the basis; with
    coeff_matrix 0 the decode is the zero function and the latent marginal is
    exactly standard normal.
    """
    if eigsys is None:
        eigsys = unit_eigensystem()
    if coeff_matrix is None:
        if latent_dim is None:
            latent_dim = 1
        coeff_matrix = np.zeros((eigsys.n_basis, latent_dim))
    coeff_matrix = np.asarray(coeff_matrix, dtype=float)
    if latent_dim is None:
        latent_dim = coeff_matrix.shape[1]
    energy_net = zeroed(
        init_params([latent_dim, 4, 1], seed=0, output_head="scaled_tanh")
    )
    return SpectralEnergyModel(
        eigsys=eigsys,
        coeff_net=linear_net(coeff_matrix),
        energy_net=energy_net,
        likelihood=likelihood if likelihood is not None else Gaussian(sigma=1.0),
    )


def random_small_model(rng, latent_dim=4, n_basis=6, n_anchors=8, likelihood=None):
    """Small random model with nonlinear nets for gradient checking."""
    mesh = np.sort(rng.uniform(-1.0, 1.0, n_anchors))[:, None]
    eigsys = nystrom(Kernel("matern32", 1.0, 0.5), mesh, n_basis)
    seed = int(rng.integers(0, 2**31 - 1))
    coeff = init_params(
        [latent_dim, 8, 8, n_basis], seed=seed, skip_pairs=[(1, 2)], output_head="linear"
    )
    energy = init_params(
        [latent_dim, 8, 8, 1], seed=seed + 1, skip_pairs=[(1, 2)], output_head="scaled_tanh"
    )
    if likelihood is None:
        likelihood = Gaussian(sigma=0.5)
    return SpectralEnergyModel(
        eigsys=eigsys, coeff_net=coeff, energy_net=energy, likelihood=likelihood
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES = []


def record_criterion(number, name, ok, detail):
    """Collect one pass/fail line per acceptance criterion for the summary."""
    line = f"criterion {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

"""Acceptance gates for the whole package.

Each test exercises one numbered criterion end to end at its stated tolerance
and records a single pass/fail line (echoed again in the terminal summary).
"""

import dataclasses
import time

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss
from scipy import stats as sps

from conftest import (
    degenerate_model,
    line_eigensystem,
    linear_net,
    random_small_model,
    record_criterion,
    unit_eigensystem,
    zeroed,
)
from funcgen.data import (
    gen_image_dataset,
    gen_quadratic,
    fourier_encode,
    make_fourier_encoder,
    pixel_centers,
)
from funcgen.evaluation import (
    SplitSpec,
    dataset_sampler,
    model_function_sampler,
    predictive_mse,
    split_context,
)
from funcgen.evaluation import test_power as power_estimate
from funcgen.model import (
    ContinuousBernoulli,
    Gaussian,
    SpectralEnergyModel,
    decode,
    energy,
    finite_dim_density,
    grad_energy,
)
from funcgen.net import (
    default_architecture,
    grads_to_vector,
    init_params,
    params_to_vector,
    vector_to_params,
)
from funcgen.sampler import (
    LangevinConfig,
    ReplayBuffer,
    langevin_step,
    sample_functions,
    sample_prior_latent,
)
from funcgen.spectral import FunctionSample, Kernel, gram, nystrom
from funcgen.trainer import TrainConfig, cd_from_samples, train


def _fd_grad(f, x, h=1e-5):
    """Central finite differences of a scalar function over a flat vector."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def _rel(got, want):
    return float(np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-12))


def test_criterion_1_gradient_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    worst = 0.0
    for case in range(100):
        gaussian = case % 2 == 0
        lik = Gaussian(float(rng.uniform(0.3, 1.2))) if gaussian else ContinuousBernoulli()
        model = random_small_model(rng, latent_dim=4, n_basis=6, likelihood=lik)
        mesh = np.sort(rng.uniform(-1.0, 1.0, 5))[:, None]
        y = rng.normal(size=(1, 5)) if gaussian else rng.uniform(0.1, 0.9, size=(1, 5))
        z = rng.normal(size=(1, 4))
        got = grad_energy(model, y, z, mesh, with_param_grads=True)

        worst = max(worst, _rel(
            got.d_values.ravel(),
            _fd_grad(lambda v: float(energy(model, v.reshape(1, 5), z, mesh)[0]), y.ravel()),
        ))
        worst = max(worst, _rel(
            got.d_latent.ravel(),
            _fd_grad(lambda v: float(energy(model, y, v.reshape(1, 4), mesh)[0]), z.ravel()),
        ))
        for field, grads in (("coeff_net", got.coeff_grads), ("energy_net", got.energy_grads)):
            template = getattr(model, field)

            def energy_of(vec, field=field, template=template):
                patched = dataclasses.replace(
                    model, **{field: vector_to_params(vec, template)}
                )
                return float(energy(patched, y, z, mesh)[0])

            worst = max(worst, _rel(
                grads_to_vector(grads), _fd_grad(energy_of, params_to_vector(template))
            ))
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 60
    record_criterion(1, "gradient oracles", ok, f"max rel err {worst:.2e}, {dt:.1f}s")
    assert ok


def test_criterion_2_nystrom_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20)
    families = ("matern32", "matern52", "rbf")
    worst_recon = 0.0
    for _ in range(20):
        n_anchors = int(rng.integers(5, 41))
        mesh = np.sort(rng.uniform(-2.0, 2.0, n_anchors))[:, None]
        kern = Kernel(
            family=str(rng.choice(families)),
            variance=float(rng.uniform(0.5, 2.0)),
            lengthscale=float(rng.uniform(0.3, 1.5)),
        )
        eig = nystrom(kern, mesh, n_anchors)
        recon = (eig.anchor_values.T * eig.eigenvalues) @ eig.anchor_values
        worst_recon = max(worst_recon, float(np.abs(recon - gram(kern, mesh)).max()))

    kern = Kernel("matern32", 1.0, 0.3)
    coarse = nystrom(kern, np.linspace(0.0, 1.0, 100)[:, None], 10).eigenvalues
    fine = nystrom(kern, np.linspace(0.0, 1.0, 200)[:, None], 10).eigenvalues
    stability = float((np.abs(fine - coarse) / coarse).max())
    dt = time.perf_counter() - t0
    ok = worst_recon <= 1e-8 and stability < 0.05 and dt < 60
    record_criterion(
        2, "nystrom identity", ok,
        f"recon max-abs {worst_recon:.2e}, eigenvalue drift {stability:.3f}, {dt:.1f}s",
    )
    assert ok


def test_criterion_3_gp_degenerate():
    t0 = time.perf_counter()
    mesh = np.linspace(-1.0, 1.0, 25)[:, None]
    eig = nystrom(Kernel("matern32", 1.0, 0.5), mesh, 15)
    model = degenerate_model(eigsys=eig, coeff_matrix=np.eye(15), likelihood=Gaussian(1.0))
    lat = sample_prior_latent(
        model, LangevinConfig(step_size=1e-3, n_steps=300, noise_seed=30), 10_000,
        np.random.default_rng(30),
    )
    curves = decode(model, lat, mesh)
    emp = np.cov(curves.T)
    want = (eig.anchor_values.T * eig.eigenvalues) @ eig.anchor_values
    err = float(np.abs(emp - want).max())
    dt = time.perf_counter() - t0
    ok = err < 0.05 and dt < 120
    record_criterion(3, "gp degenerate covariance", ok, f"max-abs cov err {err:.3f}, {dt:.1f}s")
    assert ok


def test_criterion_4_kolmogorov_consistency():
    t0 = time.perf_counter()
    sigma = 0.5
    model = SpectralEnergyModel(
        eigsys=line_eigensystem(n_anchors=12, n_basis=6),
        coeff_net=init_params([1, 8, 6], seed=41, output_head="linear"),
        energy_net=init_params([1, 8, 1], seed=42, output_head="scaled_tanh"),
        likelihood=Gaussian(sigma),
    )
    pair_mesh = np.array([[-0.4], [0.3]])

    nodes, _ = hermegauss(96)
    second_coord = decode(model, nodes[:, None], pair_mesh)[:, 1]
    y2_grid = np.linspace(second_coord.min() - 8 * sigma, second_coord.max() + 8 * sigma, 801)
    ratios = []
    for y1 in np.linspace(-1.5, 1.5, 7):
        joint = np.array([
            finite_dim_density(model, np.array([y1, y2]), pair_mesh, n_nodes=96)
            for y2 in y2_grid
        ])
        marginalized = float(np.trapezoid(joint, y2_grid))
        single = finite_dim_density(model, np.array([y1]), pair_mesh[:1], n_nodes=96)
        ratios.append(marginalized / single)
    ratios = np.array(ratios)
    consistency = float(np.abs(ratios / ratios.mean() - 1.0).max())

    rng = np.random.default_rng(40)
    worst_perm = 0.0
    for _ in range(20):
        y = rng.normal(size=2)
        a = finite_dim_density(model, y, pair_mesh, n_nodes=96)
        b = finite_dim_density(model, y[::-1].copy(), pair_mesh[::-1].copy(), n_nodes=96)
        worst_perm = max(worst_perm, abs(a - b) / abs(a))
    dt = time.perf_counter() - t0
    ok = consistency < 1e-4 and worst_perm < 1e-10 and dt < 120
    record_criterion(
        4, "kolmogorov consistency", ok,
        f"ratio spread {consistency:.2e}, permutation err {worst_perm:.2e}, {dt:.1f}s",
    )
    assert ok


def test_criterion_5_langevin_stationarity():
    t0 = time.perf_counter()
    model = degenerate_model(likelihood=Gaussian(1.0), latent_dim=1)  # joint law N(0, I)
    mesh = np.zeros((1, 1))
    cfg = LangevinConfig(step_size=1e-3, n_steps=1, noise_seed=50)
    rng = np.random.default_rng(50)
    n_chains, n_steps = 64, 100_000
    y = rng.standard_normal((n_chains, 1))
    z = rng.standard_normal((n_chains, 1))
    sums = np.zeros(2)
    sqs = np.zeros(2)
    count = 0
    for step in range(n_steps):
        y, z = langevin_step(model, y, z, mesh, cfg, rng)
        if step >= n_steps // 2:
            sums += (y.sum(), z.sum())
            sqs += (np.sum(y * y), np.sum(z * z))
            count += n_chains
    variances = sqs / count - (sums / count) ** 2

    flat = degenerate_model(likelihood=Gaussian(1e9), latent_dim=1)
    yf = np.zeros((64, 1))
    zf = rng.standard_normal((64, 1))
    increments = []
    for _ in range(200):
        y_new, zf = langevin_step(flat, yf, zf, mesh, cfg, rng)
        increments.append((y_new - yf).ravel() / np.sqrt(cfg.step_size))
        yf = y_new
    p_value = float(sps.kstest(np.concatenate(increments), "norm").pvalue)
    dt = time.perf_counter() - t0
    ok = bool(np.all(np.abs(variances - 1.0) <= 0.1)) and p_value > 0.01 and dt < 120
    record_criterion(
        5, "langevin stationarity", ok,
        f"variances {variances[0]:.3f}/{variances[1]:.3f}, ks p {p_value:.3f}, {dt:.1f}s",
    )
    assert ok


def test_criterion_6_cd_gradient_oracle():
    t0 = time.perf_counter()
    sigma, a_star = 0.5, 1.0
    mesh = np.zeros((1, 1))
    eig = unit_eigensystem()
    energy_net = zeroed(init_params([1, 4, 1], seed=0, output_head="scaled_tanh"))
    rng = np.random.default_rng(60)

    def batch_gradient(theta, n=400):
        model = SpectralEnergyModel(
            eigsys=eig, coeff_net=linear_net([[theta]]), energy_net=energy_net,
            likelihood=Gaussian(sigma),
        )
        y_pos = rng.normal(0.0, np.sqrt(sigma**2 + a_star**2), size=(n, 1))
        post_var = sigma**2 / (sigma**2 + theta**2)
        z_pos = theta * y_pos / (sigma**2 + theta**2) + np.sqrt(post_var) * rng.standard_normal((n, 1))
        z_neg = rng.standard_normal((n, 1))
        y_neg = theta * z_neg + sigma * rng.standard_normal((n, 1))
        stats = cd_from_samples(model, [(y_pos, z_pos, mesh)], [(y_neg, z_neg, mesh)])
        return stats.coeff_grads.weights[0][0, 0]

    def mean_se(theta):
        draws = np.array([batch_gradient(theta) for _ in range(50)])
        return float(draws.mean()), float(draws.std(ddof=1) / np.sqrt(draws.size))

    g_opt, se_opt = mean_se(a_star)
    g_lo, se_lo = mean_se(0.6)   # under the optimum: descent must increase theta
    g_hi, se_hi = mean_se(1.4)   # over the optimum: descent must decrease theta
    dt = time.perf_counter() - t0
    ok = (
        abs(g_opt) < 3 * se_opt
        and g_lo < -3 * se_lo
        and g_hi > 3 * se_hi
        and dt < 60
    )
    record_criterion(
        6, "cd gradient oracle", ok,
        f"at optimum {g_opt:+.4f} (se {se_opt:.4f}), below {g_lo:+.3f}, above {g_hi:+.3f}, {dt:.1f}s",
    )
    assert ok


def test_criterion_7_two_sample_level_and_power():
    t0 = time.perf_counter()
    mesh = np.linspace(0.0, 1.0, 8)[:, None]

    def null_gen(n, rng):
        return [FunctionSample(mesh=mesh, values=rng.normal(size=8)) for _ in range(n)]

    level, _, _ = power_estimate(
        null_gen, null_gen, n_trials=500, n_each=10, alpha=0.05, n_perm=200, seed=70
    )

    def low(n, rng):
        return [FunctionSample(mesh=mesh, values=0.01 * rng.normal(size=8)) for _ in range(n)]

    def high(n, rng):
        return [
            FunctionSample(mesh=mesh, values=1.0 + 0.01 * rng.normal(size=8)) for _ in range(n)
        ]

    separation, _, _ = power_estimate(
        low, high, n_trials=200, n_each=10, alpha=0.05, n_perm=200, seed=71
    )
    dt = time.perf_counter() - t0
    ok = 0.02 <= level <= 0.08 and separation >= 0.99 and dt < 300
    record_criterion(
        7, "two-sample level", ok,
        f"null rate {level:.3f}, separated rate {separation:.3f}, {dt:.1f}s",
    )
    assert ok


@pytest.fixture(scope="module")
def desk():
    """Desk-scale quadratic training run shared by criteria 8 and 9."""
    train_data = gen_quadratic(n=200, m=30, seed=11)
    heldout = gen_quadratic(n=100, m=30, seed=12)
    mesh = train_data[0].mesh
    eig = nystrom(Kernel("matern32", 1.0, 0.5), mesh, 12)
    coeff_dims, coeff_skips = default_architecture(4, eig.n_basis, [64, 64])
    energy_dims, energy_skips = default_architecture(4, 1, [64, 64])
    model = SpectralEnergyModel(
        eigsys=eig,
        coeff_net=init_params(coeff_dims, seed=0, skip_pairs=coeff_skips, output_head="linear"),
        energy_net=init_params(
            energy_dims, seed=1, skip_pairs=energy_skips, output_head="scaled_tanh"
        ),
        likelihood=Gaussian(0.1),
    )
    tcfg = TrainConfig(
        batch_size=25, epochs=15, lr_coeff=2e-3, lr_energy=5e-4,
        plateau_factor=0.3, min_lr=1e-5, patience=8, early_stop_patience=30, seed=0,
    )
    lcfg = LangevinConfig(step_size=1e-3, n_steps=120, noise_seed=0)
    t0 = time.perf_counter()
    best, history = train(
        model, train_data, tcfg, lcfg, buffer=ReplayBuffer(capacity=1024, reuse_prob=0.97)
    )
    assert len(history) > 0
    return {
        "model": best,
        "heldout": heldout,
        "mesh": mesh,
        "train_time": time.perf_counter() - t0,
    }


def test_criterion_8_desk_scale_quadratic(desk):
    t0 = time.perf_counter()
    model, mesh = desk["model"], desk["mesh"]
    eval_cfg = LangevinConfig(step_size=1e-3, n_steps=300, noise_seed=100)

    latents = sample_prior_latent(model, eval_cfg, 100, np.random.default_rng(7))
    curves = decode(model, latents, mesh)
    curvature = np.array([np.polyfit(mesh[:, 0], c, 2)[0] for c in curves])
    frac_up = float(np.mean(curvature > 0))

    mse = predictive_mse(
        model, desk["heldout"], SplitSpec(strategy="downsample", p=0.5),
        eval_cfg, n_samples=30, seed=5,
    )
    power, _, _ = power_estimate(
        model_function_sampler(model, mesh, eval_cfg),
        dataset_sampler(desk["heldout"]),
        n_trials=100, n_each=10, alpha=0.05, n_perm=100, seed=3,
    )
    total = desk["train_time"] + (time.perf_counter() - t0)
    ok = (
        min(frac_up, 1.0 - frac_up) >= 0.2
        and mse <= 0.1
        and power <= 0.5
        and total < 1800
    )
    record_criterion(
        8, "desk-scale quadratic", ok,
        f"modes {frac_up:.2f}/{1 - frac_up:.2f}, mse {mse:.4f}, power {power:.2f}, {total:.0f}s",
    )
    assert ok


def _blob_images(n=6, side=8, seed=93):
    grid = np.linspace(0.0, 1.0, side)
    rows, cols = np.meshgrid(grid, grid, indexing="ij")
    rng = np.random.default_rng(seed)
    images = []
    for _ in range(n):
        r0, c0 = rng.uniform(0.2, 0.8, size=2)
        img = np.exp(-((rows - r0) ** 2 + (cols - c0) ** 2) / 0.05)
        images.append(img / img.max())
    return np.array(images)


def test_criterion_9_resolution_independence(desk):
    t0 = time.perf_counter()
    model = desk["model"]
    rng = np.random.default_rng(90)
    latents = sample_prior_latent(
        model, LangevinConfig(step_size=1e-3, n_steps=100, noise_seed=91), 3, rng
    )
    coarse = np.linspace(-1.0, 1.0, 30)[:, None]
    fine = np.sort(np.concatenate([coarse[:, 0], rng.uniform(-1.0, 1.0, 270)]))[:, None]
    on_coarse = decode(model, latents, coarse)
    on_fine = decode(model, latents, fine)
    shared = np.searchsorted(fine[:, 0], coarse[:, 0])
    mesh_err = float(np.abs(on_coarse - on_fine[:, shared]).max())

    encoder = make_fourier_encoder(2, n_freq=8, scale=2.0, seed=0)
    img_data = gen_image_dataset(_blob_images(), encoder)
    eig = nystrom(Kernel("matern32", 1.0, 2.0), img_data[0].mesh, 20)
    coeff_dims, coeff_skips = default_architecture(2, eig.n_basis, [16])
    energy_dims, energy_skips = default_architecture(2, 1, [16])
    img_model = SpectralEnergyModel(
        eigsys=eig,
        coeff_net=init_params(coeff_dims, seed=2, skip_pairs=coeff_skips, output_head="linear"),
        energy_net=init_params(
            energy_dims, seed=3, skip_pairs=energy_skips, output_head="scaled_tanh"
        ),
        likelihood=ContinuousBernoulli(),
    )
    icfg = LangevinConfig(step_size=1e-3, n_steps=30, noise_seed=9)
    img_model, _ = train(
        img_model, img_data,
        TrainConfig(batch_size=6, epochs=3, lr_coeff=1e-3, lr_energy=5e-4,
                    plateau_factor=0.5, min_lr=1e-5, patience=2, early_stop_patience=5, seed=0),
        icfg,
    )
    doubled = fourier_encode(encoder, pixel_centers(16, 16))
    drawn = sample_functions(img_model, doubled, 4, icfg, np.random.default_rng(92))
    image_ok = all(
        s.n_points == 256 and s.values.min() >= 0.0 and s.values.max() <= 1.0 for s in drawn
    )
    dt = time.perf_counter() - t0
    ok = mesh_err == 0.0 and image_ok and dt < 60
    record_criterion(
        9, "resolution independence", ok,
        f"shared-point err {mesh_err:.1e}, 2x raster in [0,1]: {image_ok}, {dt:.1f}s",
    )
    assert ok

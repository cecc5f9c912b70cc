"""Conditional inference and evaluation protocols.

Covers context/evaluation splitting of observed functions, posterior function
inference from a context, predictive mean-squared error, a kernel two-sample
permutation test on function samples, test power estimation, and a planar
PCA embedding for visual comparison of data and model samples.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .model import SpectralEnergyModel, decode
from .sampler import LangevinConfig, sample_conditional
from .spectral import FunctionSample, as_mesh, mesh_fingerprint

SPLIT_STRATEGIES = ("random", "middle", "downsample")


@dataclass(frozen=True)
class SplitSpec:
    """How to split a function sample into context and evaluation points.

    ``random`` draws round(p*M) context indices uniformly without
    replacement; ``middle`` takes the extreme points (by first coordinate) as
    context, leaving a middle block to evaluate; ``downsample`` keeps every
    round(1/p)-th index as context.
    """

    strategy: str
    p: float
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in SPLIT_STRATEGIES:
            raise ValueError(f"strategy must be one of {SPLIT_STRATEGIES}, got {self.strategy!r}")
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must be in (0, 1), got {self.p}")


@dataclass(frozen=True)
class TestResult:
    statistic: float
    threshold: float
    reject: bool
    alpha: float

    def __post_init__(self):
        if self.reject != (self.statistic > self.threshold):
            raise ValueError("reject flag must equal statistic > threshold")


def split_context(sample: FunctionSample, spec: SplitSpec):
    """Partition a sample into (context, evaluation) per the split strategy.

    Both parts keep the original mesh ordering; together they are disjoint
    and exhaustive.
    """
    m = sample.n_points
    if m < 2:
        raise ValueError("need at least 2 points to split")
    n_ctx = int(round(spec.p * m))
    if n_ctx < 1:
        raise ValueError(f"context would be empty: p={spec.p}, M={m}")

    if spec.strategy == "random":
        if m - n_ctx < 1:
            raise ValueError(f"evaluation would be empty: p={spec.p}, M={m}")
        rng = np.random.default_rng(spec.seed)
        ctx_idx = np.sort(rng.choice(m, size=n_ctx, replace=False))
    elif spec.strategy == "middle":
        if m - n_ctx < 1:
            raise ValueError(f"evaluation would be empty: p={spec.p}, M={m}")
        order = np.argsort(sample.mesh[:, 0], kind="stable")
        n_low = (n_ctx + 1) // 2
        n_high = n_ctx // 2
        picked = np.concatenate([order[:n_low], order[m - n_high :] if n_high else []])
        ctx_idx = np.sort(picked.astype(int))
    else:
        stride = int(round(1.0 / spec.p))
        ctx_idx = np.arange(0, m, stride)
        if ctx_idx.size >= m:
            raise ValueError(f"downsample stride 1 leaves no evaluation points (p={spec.p})")

    mask = np.zeros(m, dtype=bool)
    mask[ctx_idx] = True
    eval_idx = np.flatnonzero(~mask)
    context = FunctionSample(mesh=sample.mesh[ctx_idx], values=sample.values[ctx_idx])
    holdout = FunctionSample(mesh=sample.mesh[eval_idx], values=sample.values[eval_idx])
    return context, holdout


@dataclass
class InferredFunction:
    """A posterior function draw, evaluable at any mesh."""

    model: SpectralEnergyModel
    latent: np.ndarray

    def __call__(self, queries) -> np.ndarray:
        return decode(self.model, self.latent, queries)


def infer_function(
    model: SpectralEnergyModel,
    context_mesh,
    context_values,
    n_samples: int,
    cfg: LangevinConfig,
    rng: np.random.Generator | None = None,
) -> list:
    """Posterior draws of the underlying function given context observations.

    Returns ``n_samples`` InferredFunction handles; each can be evaluated at
    arbitrary resolution.
    """
    values = np.asarray(context_values, dtype=float)
    if values.size == 0:
        raise ValueError("context must be nonempty")
    latents = sample_conditional(model, values, context_mesh, cfg, n_samples, rng)
    return [InferredFunction(model=model, latent=latents[i]) for i in range(n_samples)]


def _sample_rng(seed: int, sample: FunctionSample) -> np.random.Generator:
    """Deterministic per-sample stream independent of dataset ordering."""
    digest = hashlib.sha1()
    digest.update(mesh_fingerprint(sample.mesh).encode())
    digest.update(np.ascontiguousarray(sample.values).tobytes())
    return np.random.default_rng([seed, int.from_bytes(digest.digest()[:8], "big")])


def predictive_mse(
    model: SpectralEnergyModel,
    dataset,
    spec: SplitSpec,
    cfg: LangevinConfig,
    n_samples: int = 100,
    seed: int = 0,
) -> float:
    """Mean squared error of the posterior-mean function on evaluation points.

    For each sample: split into context/evaluation, draw ``n_samples``
    posterior functions from the context, average them at the evaluation
    points, and accumulate squared errors.  The result is the grand mean over
    every evaluation point of every sample, and does not depend on dataset
    order (each sample gets its own derived random stream).
    """
    total_sq = 0.0
    total_n = 0
    for sample in dataset:
        context, holdout = split_context(sample, spec)
        rng = _sample_rng(seed, sample)
        latents = sample_conditional(model, context.values, context.mesh, cfg, n_samples, rng)
        mean_fn = decode(model, latents, holdout.mesh).mean(axis=0)
        total_sq += float(np.sum((mean_fn - holdout.values) ** 2))
        total_n += holdout.n_points
    if total_n == 0:
        raise ValueError("dataset produced no evaluation points")
    return total_sq / total_n


def _common_mesh(samples) -> np.ndarray:
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    mesh = samples[0].mesh
    key = mesh_fingerprint(mesh)
    for s in samples[1:]:
        if mesh_fingerprint(s.mesh) != key:
            raise ValueError("samples must share a common mesh")
    return mesh


def _trapezoid_weights(mesh: np.ndarray) -> np.ndarray:
    if mesh.shape[1] != 1:
        raise ValueError("functional L2 distance needs a 1-D input mesh")
    x = mesh[:, 0]
    if np.any(np.diff(x) <= 0):
        raise ValueError("mesh must be strictly increasing for trapezoid weights")
    w = np.empty_like(x)
    w[0] = 0.5 * (x[1] - x[0])
    w[-1] = 0.5 * (x[-1] - x[-2])
    if x.size > 2:
        w[1:-1] = 0.5 * (x[2:] - x[:-2])
    return w


def _unbiased_mmd2(k_pool: np.ndarray, idx_a: np.ndarray, idx_b: np.ndarray) -> float:
    kaa = k_pool[np.ix_(idx_a, idx_a)]
    kbb = k_pool[np.ix_(idx_b, idx_b)]
    kab = k_pool[np.ix_(idx_a, idx_b)]
    m = idx_a.size
    n = idx_b.size
    term_a = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
    term_b = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    return float(term_a + term_b - 2.0 * kab.mean())


def mmd_two_sample(
    samples_a,
    samples_b,
    n_perm: int = 200,
    alpha: float = 0.05,
    bandwidth: float | None = None,
    seed: int = 0,
) -> TestResult:
    """Kernel two-sample permutation test on common-mesh function samples.

    The kernel between functions is exp(-d^2 / (2 beta^2)) with d^2 the
    trapezoid-rule L2 distance on the shared mesh.  ``bandwidth`` defaults to
    the median pooled pairwise distance.  The statistic is the unbiased MMD^2
    estimator; the threshold is the conservative (next-higher order statistic)
    (1 - alpha) quantile of label-permutation
    statistics.
    """
    samples_a = list(samples_a)
    samples_b = list(samples_b)
    if len(samples_a) < 2 or len(samples_b) < 2:
        raise ValueError("each group needs at least 2 samples")
    mesh = _common_mesh(samples_a + samples_b)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")

    weights = _trapezoid_weights(mesh)
    pooled = np.array([s.values for s in samples_a + samples_b]) * np.sqrt(weights)
    d2 = cdist(pooled, pooled, metric="sqeuclidean")
    if bandwidth is None:
        iu = np.triu_indices(d2.shape[0], k=1)
        bandwidth = float(np.median(np.sqrt(d2[iu])))
        if bandwidth <= 0.0:
            bandwidth = 1.0
    elif bandwidth <= 0.0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    k_pool = np.exp(-d2 / (2.0 * bandwidth**2))

    m = len(samples_a)
    total = m + len(samples_b)
    statistic = _unbiased_mmd2(k_pool, np.arange(m), np.arange(m, total))
    rng = np.random.default_rng(seed)
    perm_stats = np.empty(n_perm)
    for i in range(n_perm):
        perm = rng.permutation(total)
        perm_stats[i] = _unbiased_mmd2(k_pool, perm[:m], perm[m:])
    threshold = float(np.quantile(perm_stats, 1.0 - alpha, method="higher"))
    return TestResult(
        statistic=statistic,
        threshold=threshold,
        reject=bool(statistic > threshold),
        alpha=alpha,
    )


def dataset_sampler(dataset):
    """Wrap a dataset as a trial sampler: (n, rng) -> n distinct samples."""
    samples = list(dataset)

    def draw(n: int, rng: np.random.Generator):
        if n > len(samples):
            raise ValueError(f"cannot draw {n} from {len(samples)} samples")
        idx = rng.choice(len(samples), size=n, replace=False)
        return [samples[i] for i in idx]

    return draw


def model_function_sampler(model: SpectralEnergyModel, mesh, cfg: LangevinConfig):
    """Wrap a model as a trial sampler drawing fresh functions on a mesh."""
    from .sampler import sample_functions

    queries = as_mesh(mesh)

    def draw(n: int, rng: np.random.Generator):
        return sample_functions(model, queries, n, cfg, rng)

    return draw


def test_power(
    sampler_a,
    sampler_b,
    n_trials: int = 200,
    n_each: int = 10,
    alpha: float = 0.05,
    n_perm: int = 200,
    seed: int = 0,
):
    """Rejection rate of the two-sample test over repeated trials.

    ``sampler_a`` and ``sampler_b`` are callables (n, rng) -> list of
    common-mesh FunctionSample.  Returns (power, binomial standard error,
    list of per-trial TestResult).
    """
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(n_trials):
        group_a = sampler_a(n_each, rng)
        group_b = sampler_b(n_each, rng)
        results.append(
            mmd_two_sample(
                group_a,
                group_b,
                n_perm=n_perm,
                alpha=alpha,
                seed=int(rng.integers(2**63)),
            )
        )
    power = sum(r.reject for r in results) / n_trials
    stderr = float(np.sqrt(power * (1.0 - power) / n_trials))
    return power, stderr, results


def pca_embed(samples, dims: int = 2) -> np.ndarray:
    """Mean-centered projection of common-mesh samples onto top principal axes.

    Deterministic sign convention: each axis is flipped so its
    largest-magnitude loading is positive.  Missing axes (rank-deficient
    data) are zero-filled.  Returns an (n_samples, dims) array.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError("need at least 2 samples to embed")
    _common_mesh(samples)
    matrix = np.array([s.values for s in samples])
    centered = matrix - matrix.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    out = np.zeros((len(samples), dims))
    n_axes = min(dims, vt.shape[0])
    for axis in range(n_axes):
        comp = vt[axis]
        if svals[axis] <= 1e-12 * max(svals[0], 1.0):
            continue
        lead = np.argmax(np.abs(comp))
        if comp[lead] < 0:
            comp = -comp
        out[:, axis] = centered @ comp
    return out


def write_eval_csv(path, rows) -> None:
    """Rows of (dataset, strategy, p, mse)."""
    lines = ["dataset,strategy,p,mse"]
    for name, strategy, p, mse in rows:
        lines.append(f"{name},{strategy},{p!r},{mse!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_test_csv(path, results) -> None:
    lines = ["trial,statistic,threshold,reject"]
    for i, r in enumerate(results):
        lines.append(
            f"{i},{float(r.statistic)!r},{float(r.threshold)!r},"
            f"{'true' if r.reject else 'false'}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_embedding_csv(path, ids, sources, coords) -> None:
    coords = np.asarray(coords, dtype=float)
    if not (len(ids) == len(sources) == coords.shape[0]):
        raise ValueError("ids, sources, and coords must have equal length")
    lines = ["sample_id,source,e1,e2"]
    for sid, src, row in zip(ids, sources, coords):
        lines.append(f"{sid},{src},{float(row[0])!r},{float(row[1])!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

"""Kernels, Nystrom eigensystems, and the truncated Karhunen-Loeve map.

A stationary kernel defines a Gaussian-process covariance operator whose
Mercer eigensystem is approximated numerically: the eigendecomposition of the
scaled gram matrix K(X, X)/l on a set of anchor points yields eigenvalue
estimates and eigenfunction values at the anchors; kernel ridge regression
extends the eigenfunctions to arbitrary query points.  Functions are then
synthesized as f(.) = sum_i w_i * sqrt(lambda_i) * e_i(.).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist


KERNEL_FAMILIES = ("matern32", "matern52", "rbf")


class NumericError(RuntimeError):
    """Raised when an eigensolve fails or produces an invalid spectrum."""


def as_mesh(points) -> np.ndarray:
    """Coerce points to a (M, d) float array; scalars and 1-D input become d=1."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr[:, None]
    elif arr.ndim != 2:
        raise ValueError(f"points must be at most 2-D, got shape {arr.shape}")
    return arr


def as_point(x) -> np.ndarray:
    """Coerce a single point to a (d,) float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"a point must be a scalar or 1-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Kernel:
    """Stationary covariance kernel with output scale ``variance`` (k(x,x))."""

    family: str
    variance: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}, expected one of {KERNEL_FAMILIES}")
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"variance must be positive, got {self.variance}")
        if not (np.isfinite(self.lengthscale) and self.lengthscale > 0):
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")


def _kernel_of_dist(kernel: Kernel, r: np.ndarray) -> np.ndarray:
    """Evaluate the kernel as a function of Euclidean distance r >= 0."""
    s = r / kernel.lengthscale
    if kernel.family == "rbf":
        out = np.exp(-0.5 * s * s)
    elif kernel.family == "matern32":
        t = np.sqrt(3.0) * s
        out = (1.0 + t) * np.exp(-t)
    elif kernel.family == "matern52":
        t = np.sqrt(5.0) * s
        out = (1.0 + t + t * t / 3.0) * np.exp(-t)
    else:  # pragma: no cover - guarded by Kernel validation
        raise ValueError(kernel.family)
    return kernel.variance * out


def kernel_eval(kernel: Kernel, x, y) -> float:
    """Evaluate k(x, y) for single points (scalars or d-vectors)."""
    xv, yv = as_point(x), as_point(y)
    if not (np.all(np.isfinite(xv)) and np.all(np.isfinite(yv))):
        raise ValueError("kernel_eval requires finite inputs")
    if xv.shape != yv.shape:
        raise ValueError(f"point dimensions differ: {xv.shape} vs {yv.shape}")
    r = float(np.linalg.norm(xv - yv))
    return float(_kernel_of_dist(kernel, np.asarray(r)))


def cross_gram(kernel: Kernel, X, Y) -> np.ndarray:
    """Rectangular kernel matrix k(x_i, y_j) for two point sets."""
    Xm, Ym = as_mesh(X), as_mesh(Y)
    if Xm.shape[1] != Ym.shape[1]:
        raise ValueError(f"point dimensions differ: {Xm.shape[1]} vs {Ym.shape[1]}")
    return _kernel_of_dist(kernel, cdist(Xm, Ym))


def gram(kernel: Kernel, X) -> np.ndarray:
    """Symmetric gram matrix K(X, X).

    The result is exactly symmetric; diagonal entries equal the kernel
    variance.
    """
    Xm = as_mesh(X)
    if Xm.shape[0] == 0:
        raise ValueError("gram requires at least one point")
    if not np.all(np.isfinite(Xm)):
        raise ValueError("gram requires finite points")
    K = _kernel_of_dist(kernel, cdist(Xm, Xm))
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, kernel.variance)
    return K


@dataclass
class FunctionSample:
    """One function observed as ``values`` on a finite ``mesh`` of points."""

    mesh: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.mesh = as_mesh(self.mesh)
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.mesh.shape[0] != self.values.shape[0]:
            raise ValueError(
                f"mesh has {self.mesh.shape[0]} points but values has {self.values.shape[0]}"
            )
        if self.mesh.shape[0] < 1:
            raise ValueError("a FunctionSample needs at least one point")
        if not np.all(np.isfinite(self.mesh)):
            raise ValueError("mesh points must be finite")

    @property
    def n_points(self) -> int:
        return self.mesh.shape[0]


@dataclass(frozen=True)
class EigenSystem:
    """Truncated Mercer eigensystem anchored on a reference mesh.

    ``eigenvalues`` are estimates of the kernel operator spectrum under the
    empirical anchor measure, sorted descending.  ``anchor_values[i, j]`` is
    the i-th eigenfunction at anchor j, normalized so that
    (1/l) * sum_j anchor_values[i, j]**2 = 1.  ``interp_weights`` are kernel
    ridge coefficients used to evaluate eigenfunctions away from the anchors.

    Instances are immutable after construction and safe to share across
    threads.
    """

    kernel: Kernel
    anchors: np.ndarray
    eigenvalues: np.ndarray
    anchor_values: np.ndarray
    interp_weights: np.ndarray
    ridge: float

    @property
    def n_basis(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def n_anchors(self) -> int:
        return self.anchors.shape[0]


def nystrom(kernel: Kernel, anchors, n_basis: int, ridge: float | None = None) -> EigenSystem:
    """Estimate the kernel eigensystem from the scaled gram matrix K/l.

    Eigenvectors of K(X,X)/l are rescaled by sqrt(l) so their empirical L2
    norm against the anchor measure is one; the top ``n_basis`` pairs are
    retained.  With ``n_basis`` equal to the anchor count, the retained system
    reconstructs K(X,X) exactly.  Eigenfunction signs are fixed so the
    largest-magnitude anchor value is positive.

    ``ridge`` (default ``1e-6 * variance``) regularizes the kernel ridge fit
    used for off-anchor evaluation; it also absorbs ill-conditioning from
    near-duplicate anchors.
    """
    X = as_mesh(anchors)
    l = X.shape[0]
    if not 1 <= n_basis <= l:
        raise ValueError(f"n_basis must be in [1, {l}], got {n_basis}")
    if ridge is None:
        ridge = 1e-6 * kernel.variance
    if ridge < 0:
        raise ValueError(f"ridge must be nonnegative, got {ridge}")

    K = gram(kernel, X)
    try:
        eigvals, eigvecs = np.linalg.eigh(K / l)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed on {l}x{l} gram matrix: {exc}") from None

    tol = 1e-9 * np.trace(K / l)
    if eigvals.min() < -tol:
        raise NumericError(
            f"gram matrix not PSD: min eigenvalue {eigvals.min():.3e} below -{tol:.3e}"
        )
    eigvals = np.clip(eigvals, 0.0, None)

    order = np.argsort(eigvals)[::-1][:n_basis]
    lam = eigvals[order]
    vecs = eigvecs[:, order].T * np.sqrt(l)  # (n_basis, l)

    # deterministic sign: largest-|.| anchor value positive
    for i in range(n_basis):
        j = np.argmax(np.abs(vecs[i]))
        if vecs[i, j] < 0:
            vecs[i] = -vecs[i]

    try:
        weights = np.linalg.solve(K + ridge * np.eye(l), vecs.T).T  # (n_basis, l)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"kernel ridge solve failed: {exc}") from None

    return EigenSystem(
        kernel=kernel,
        anchors=X,
        eigenvalues=lam,
        anchor_values=vecs,
        interp_weights=weights,
        ridge=float(ridge),
    )


def eigenfunction_matrix(eigsys: EigenSystem, queries) -> np.ndarray:
    """Eigenfunction values on a mesh: (n_queries, n_basis)."""
    Kq = cross_gram(eigsys.kernel, queries, eigsys.anchors)
    return Kq @ eigsys.interp_weights.T


def eval_eigenfunctions(eigsys: EigenSystem, query) -> np.ndarray:
    """Evaluate all eigenfunctions at one query point: (n_basis,)."""
    q = as_point(query)
    if not np.all(np.isfinite(q)):
        raise ValueError("query point must be finite")
    return eigenfunction_matrix(eigsys, q[None, :])[0]


def kl_expand(eigsys: EigenSystem, weights, queries) -> np.ndarray:
    """Synthesize sum_i w_i * sqrt(lambda_i) * e_i(.) on the query mesh.

    Linear in ``weights``; with standard-normal weights the resulting random
    function has covariance sum_i lambda_i e_i(x) e_i(y), the truncated
    kernel.
    """
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape[0] != eigsys.n_basis:
        raise ValueError(f"expected {eigsys.n_basis} weights, got {w.shape[0]}")
    E = eigenfunction_matrix(eigsys, queries)
    return E @ (w * np.sqrt(eigsys.eigenvalues))


def kl_expand_batch(eigsys: EigenSystem, weights: np.ndarray, queries) -> np.ndarray:
    """Vectorized kl_expand for a (B, n_basis) weight matrix: (B, n_queries)."""
    W = np.asarray(weights, dtype=float)
    E = eigenfunction_matrix(eigsys, queries)
    return (W * np.sqrt(eigsys.eigenvalues)) @ E.T


def truncated_kernel_matrix(eigsys: EigenSystem, queries=None) -> np.ndarray:
    """Covariance implied by the truncated system, sum_i lambda_i e_i e_i^T."""
    if queries is None:
        E = eigsys.anchor_values.T  # (l, n_basis)
    else:
        E = eigenfunction_matrix(eigsys, queries)
    return (E * eigsys.eigenvalues) @ E.T


def default_anchors(meshes, max_anchors: int = 512, seed: int = 0) -> np.ndarray:
    """Union of dataset meshes, deduplicated and subsampled to ``max_anchors``.

    Near-duplicates are kept; the ridge term in the eigensystem absorbs the
    resulting ill-conditioning.  Subsampling is uniform without replacement at
    the given seed, and the result is sorted for determinism.
    """
    stacked = np.vstack([as_mesh(m) for m in meshes])
    uniq = np.unique(stacked, axis=0)
    if uniq.shape[0] > max_anchors:
        rng = np.random.default_rng(seed)
        idx = rng.choice(uniq.shape[0], size=max_anchors, replace=False)
        uniq = uniq[np.sort(idx)]
    return uniq


def mesh_fingerprint(mesh) -> str:
    """Stable identifier for a mesh (used to key replay-buffer entries)."""
    arr = np.ascontiguousarray(as_mesh(mesh))
    h = hashlib.sha1()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()[:16]


def save_eigensystem(path, eigsys: EigenSystem) -> None:
    """Write an eigensystem as a plain-text file.

    Layout: header lines (kernel family, variance, lengthscale, anchor count,
    basis count, ridge, anchor dimension), then anchors (one row per anchor),
    one row of eigenvalues, anchor_values rows, and interp_weights rows, all
    whitespace-separated.  Floats are written with full round-trip precision.
    """

    def row(vals):
        return " ".join(repr(float(v)) for v in vals)

    lines = [
        "eigensystem v1",
        f"family {eigsys.kernel.family}",
        f"variance {float(eigsys.kernel.variance)!r}",
        f"lengthscale {float(eigsys.kernel.lengthscale)!r}",
        f"n_anchors {eigsys.n_anchors}",
        f"n_basis {eigsys.n_basis}",
        f"ridge {float(eigsys.ridge)!r}",
        f"anchor_dim {eigsys.anchors.shape[1]}",
    ]
    lines.extend(row(a) for a in eigsys.anchors)
    lines.append(row(eigsys.eigenvalues))
    lines.extend(row(r) for r in eigsys.anchor_values)
    lines.extend(row(r) for r in eigsys.interp_weights)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_eigensystem(path) -> EigenSystem:
    """Read an eigensystem written by :func:`save_eigensystem`."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "eigensystem v1":
        raise ValueError(f"{path}: not an eigensystem file")
    header = {}
    for ln in lines[1:8]:
        key, val = ln.split(maxsplit=1)
        header[key] = val
    l = int(header["n_anchors"])
    n_basis = int(header["n_basis"])
    dim = int(header["anchor_dim"])
    kernel = Kernel(
        family=header["family"],
        variance=float(header["variance"]),
        lengthscale=float(header["lengthscale"]),
    )
    body = lines[8:]
    expected = l + 1 + 2 * n_basis
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} data rows, found {len(body)}")
    parse = lambda ln: np.array([float(t) for t in ln.split()])
    anchors = np.vstack([parse(ln) for ln in body[:l]])
    if anchors.shape[1] != dim:
        raise ValueError(f"{path}: anchor rows have {anchors.shape[1]} columns, header says {dim}")
    eigenvalues = parse(body[l])
    anchor_values = np.vstack([parse(ln) for ln in body[l + 1 : l + 1 + n_basis]])
    interp_weights = np.vstack([parse(ln) for ln in body[l + 1 + n_basis :]])
    return EigenSystem(
        kernel=kernel,
        anchors=anchors,
        eigenvalues=eigenvalues,
        anchor_values=anchor_values,
        interp_weights=interp_weights,
        ridge=float(header["ridge"]),
    )

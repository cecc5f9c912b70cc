"""Dataset construction: synthetic generators, file ingestion, preprocessing,
and Fourier coordinate encoding for image-as-function data.

The on-disk interchange format is a long CSV with header ``function_id,x,y``
(or ``function_id,x0,x1,y`` for 2-D inputs): one observed point per row,
rows grouped by function id.  Images enter as PGM files or raw CSV rasters
and become functions from encoded pixel-center coordinates to intensities.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .spectral import FunctionSample


class DataFormatError(ValueError):
    """Malformed input file or out-of-contract values."""


@dataclass(frozen=True)
class GlobalZScore:
    """Pooled standardization over every value of every sample."""

    mean: float
    std: float


@dataclass(frozen=True)
class PerSampleZScore:
    """Each sample standardized on its own; per-sample stats kept in order."""

    means: tuple
    stds: tuple


@dataclass
class Dataset:
    """A named collection of function samples plus preprocessing state."""

    samples: list
    name: str = "dataset"
    preprocessing: object = None

    def __post_init__(self):
        if not self.samples:
            raise ValueError("dataset must be nonempty")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


def gen_quadratic(n: int = 400, m: int = 30, seed: int = 0, return_coeffs: bool = False):
    """Random quadratics on [-1, 1] with a uniformly random curvature sign.

    values = s*a*x^2 + b*x + c + noise, with s uniform on {-1, +1},
    a ~ U[0.5, 1.5], b, c ~ N(0, 0.1^2), noise ~ N(0, 0.01^2) per point.
    All samples share one uniform mesh of m points.  No preprocessing.
    """
    if n < 1 or m < 1:
        raise ValueError(f"n and m must be >= 1, got n={n}, m={m}")
    rng = np.random.default_rng(seed)
    x = np.linspace(-1.0, 1.0, m)
    mesh = x[:, None]
    samples = []
    coeffs = []
    for _ in range(n):
        sign = 1.0 if rng.random() < 0.5 else -1.0
        a = rng.uniform(0.5, 1.5)
        b = rng.normal(0.0, 0.1)
        c = rng.normal(0.0, 0.1)
        noise = rng.normal(0.0, 0.01, size=m)
        values = sign * a * x**2 + b * x + c + noise
        samples.append(FunctionSample(mesh=mesh, values=values))
        coeffs.append((sign * a, b, c))
    dataset = Dataset(samples=samples, name="quadratic")
    if return_coeffs:
        return dataset, np.array(coeffs)
    return dataset


def _parse_header(header: str, path) -> int:
    cols = [c.strip() for c in header.split(",")]
    if len(cols) >= 3 and cols[0] == "function_id" and cols[-1] == "y":
        if cols[1:-1] == ["x"]:
            return 1
        want = [f"x{i}" for i in range(len(cols) - 2)]
        if cols[1:-1] == want:
            return len(want)
    raise DataFormatError(
        f"{path}: header must be 'function_id,x,y' or 'function_id,x0,...,y', got {header!r}"
    )


def load_long_csv(path, name: str | None = None) -> Dataset:
    """Read a long-format CSV into a Dataset.

    Functions appear in first-occurrence order; meshes may differ per
    function.  For 1-D inputs each function's points are sorted by x.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    dim = _parse_header(lines[0], path)

    order = []
    points = {}
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != dim + 2:
            raise DataFormatError(f"{path}:{lineno}: expected {dim + 2} fields, got {len(parts)}")
        fid = parts[0].strip()
        try:
            coords = [float(v) for v in parts[1:-1]]
            value = float(parts[-1])
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: non-numeric field ({exc})") from None
        if fid not in points:
            points[fid] = []
            order.append(fid)
        points[fid].append((coords, value))

    if not order:
        raise DataFormatError(f"{path}: no data rows")
    samples = []
    for fid in order:
        mesh = np.array([p[0] for p in points[fid]])
        values = np.array([p[1] for p in points[fid]])
        if dim == 1:
            srt = np.argsort(mesh[:, 0], kind="stable")
            mesh, values = mesh[srt], values[srt]
        samples.append(FunctionSample(mesh=mesh, values=values))
    return Dataset(samples=samples, name=name or "loaded")


def write_long_csv(path, samples, ids=None) -> None:
    """Write function samples in the long format (see load_long_csv)."""
    samples = list(samples)
    dim = samples[0].mesh.shape[1] if samples else 1
    if ids is None:
        ids = [str(i) for i in range(len(samples))]
    if dim == 1:
        header = "function_id,x,y"
    else:
        header = "function_id," + ",".join(f"x{i}" for i in range(dim)) + ",y"
    lines = [header]
    for fid, sample in zip(ids, samples):
        if sample.mesh.shape[1] != dim:
            raise ValueError("all samples must share the input dimension")
        for coords, value in zip(sample.mesh, sample.values):
            coord_txt = ",".join(repr(float(c)) for c in coords)
            lines.append(f"{fid},{coord_txt},{float(value)!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


PREPROCESS_MODES = ("none", "global", "per_sample")


def preprocess(dataset: Dataset, mode: str) -> Dataset:
    """Standardize values; statistics are stored so the transform inverts.

    ``global`` pools every value of every sample; ``per_sample`` standardizes
    each sample with its own mean and standard deviation.
    """
    if mode not in PREPROCESS_MODES:
        raise ValueError(f"mode must be one of {PREPROCESS_MODES}, got {mode!r}")
    if dataset.preprocessing is not None:
        raise ValueError("dataset is already preprocessed")
    if mode == "none":
        return replace(dataset, samples=list(dataset.samples))

    if mode == "global":
        pooled = np.concatenate([s.values for s in dataset.samples])
        mean = float(pooled.mean())
        std = float(pooled.std())
        if std <= 0.0:
            raise ValueError("degenerate data: zero pooled standard deviation")
        samples = [
            FunctionSample(mesh=s.mesh, values=(s.values - mean) / std) for s in dataset.samples
        ]
        return replace(dataset, samples=samples, preprocessing=GlobalZScore(mean=mean, std=std))

    means, stds, samples = [], [], []
    for i, s in enumerate(dataset.samples):
        mean = float(s.values.mean())
        std = float(s.values.std())
        if std <= 0.0:
            raise ValueError(f"degenerate data: sample {i} has zero standard deviation")
        means.append(mean)
        stds.append(std)
        samples.append(FunctionSample(mesh=s.mesh, values=(s.values - mean) / std))
    return replace(
        dataset,
        samples=samples,
        preprocessing=PerSampleZScore(means=tuple(means), stds=tuple(stds)),
    )


def inverse_preprocess(dataset: Dataset) -> Dataset:
    """Undo the stored standardization exactly."""
    prep = dataset.preprocessing
    if prep is None:
        return replace(dataset, samples=list(dataset.samples))
    if isinstance(prep, GlobalZScore):
        samples = [
            FunctionSample(mesh=s.mesh, values=s.values * prep.std + prep.mean)
            for s in dataset.samples
        ]
    elif isinstance(prep, PerSampleZScore):
        if len(prep.means) != len(dataset.samples):
            raise ValueError("per-sample statistics do not match the sample count")
        samples = [
            FunctionSample(mesh=s.mesh, values=s.values * std + mean)
            for s, mean, std in zip(dataset.samples, prep.means, prep.stds)
        ]
    else:
        raise TypeError(f"unknown preprocessing {type(prep).__name__}")
    return replace(dataset, samples=samples, preprocessing=None)


def write_dataset_manifest(path, dataset: Dataset) -> None:
    """Record the dataset name and preprocessing statistics."""
    lines = ["dataset v1", f"name {dataset.name}", f"n_samples {len(dataset)}"]
    prep = dataset.preprocessing
    if prep is None:
        lines.append("preprocessing none")
    elif isinstance(prep, GlobalZScore):
        lines.append("preprocessing global")
        lines.append(f"mean {float(prep.mean)!r}")
        lines.append(f"std {float(prep.std)!r}")
    elif isinstance(prep, PerSampleZScore):
        lines.append("preprocessing per_sample")
        lines.append("means " + " ".join(repr(float(v)) for v in prep.means))
        lines.append("stds " + " ".join(repr(float(v)) for v in prep.stds))
    else:
        raise TypeError(f"unknown preprocessing {type(prep).__name__}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class FourierEncoder:
    """Random Fourier coordinate features: v -> [cos(2 pi B v); sin(2 pi B v)].

    B is ``freq_matrix * scale``; the output has 2k entries for k frequencies.
    """

    freq_matrix: np.ndarray
    scale: float = 10.0
    seed: int = 0

    def __post_init__(self):
        freq = np.asarray(self.freq_matrix, dtype=float)
        if freq.ndim != 2:
            raise ValueError(f"freq_matrix must be 2-D, got {freq.ndim}-D")
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "freq_matrix", freq)

    @property
    def n_freq(self) -> int:
        return self.freq_matrix.shape[0]

    @property
    def in_dim(self) -> int:
        return self.freq_matrix.shape[1]

    @property
    def out_dim(self) -> int:
        return 2 * self.n_freq


def make_fourier_encoder(in_dim: int, n_freq: int = 64, scale: float = 10.0, seed: int = 0) -> FourierEncoder:
    """Frequencies drawn standard normal at a fixed seed."""
    rng = np.random.default_rng(seed)
    return FourierEncoder(
        freq_matrix=rng.standard_normal((n_freq, in_dim)), scale=scale, seed=seed
    )


def fourier_encode(encoder: FourierEncoder, coords) -> np.ndarray:
    """Encode a (d,) coordinate or an (N, d) batch to 2k features."""
    v = np.asarray(coords, dtype=float)
    single = v.ndim == 1
    if single:
        v = v[None, :]
    if v.shape[1] != encoder.in_dim:
        raise ValueError(f"coords must have {encoder.in_dim} entries, got shape {np.shape(coords)}")
    if not np.all(np.isfinite(v)):
        raise ValueError("coords must be finite")
    phase = 2.0 * np.pi * (v @ (encoder.freq_matrix * encoder.scale).T)
    out = np.concatenate([np.cos(phase), np.sin(phase)], axis=1)
    return out[0] if single else out


def pixel_centers(height: int, width: int) -> np.ndarray:
    """Normalized pixel-center coordinates, row-major: ((i+.5)/H, (j+.5)/W)."""
    if height < 1 or width < 1:
        raise ValueError("raster dimensions must be >= 1")
    rows = (np.arange(height) + 0.5) / height
    cols = (np.arange(width) + 0.5) / width
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.column_stack([rr.ravel(), cc.ravel()])


def centers_to_indices(coords, height: int, width: int) -> np.ndarray:
    """Invert pixel_centers: normalized coordinates back to (row, col) ints."""
    v = np.asarray(coords, dtype=float)
    rows = v[:, 0] * height - 0.5
    cols = v[:, 1] * width - 0.5
    out = np.column_stack([np.rint(rows), np.rint(cols)]).astype(int)
    if (
        np.any(out < 0)
        or np.any(out[:, 0] >= height)
        or np.any(out[:, 1] >= width)
        or not np.allclose(out, np.column_stack([rows, cols]), atol=1e-9)
    ):
        raise ValueError("coordinates are not pixel centers of the given raster")
    return out


def gen_image_dataset(images, encoder: FourierEncoder, name: str = "images") -> Dataset:
    """Images (N, H, W) with intensities in [0, 1] as functions on [0,1]^2.

    Every image shares one mesh: the Fourier encoding of normalized pixel
    centers, row-major.  Values are the raw intensities.
    """
    arr = np.asarray(images, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"images must be (N, H, W), got shape {np.shape(images)}")
    if arr.size == 0:
        raise ValueError("images must be nonempty")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DataFormatError("image intensities must lie in [0, 1]")
    if encoder.in_dim != 2:
        raise ValueError("image encoding needs a 2-D input encoder")
    _, height, width = arr.shape
    mesh = fourier_encode(encoder, pixel_centers(height, width))
    samples = [FunctionSample(mesh=mesh, values=img.ravel()) for img in arr]
    return Dataset(samples=samples, name=name)


def read_pgm(path) -> np.ndarray:
    """Read a PGM image (ASCII P2 or binary P5) as floats in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    # Tokenize the header, skipping '#' comments, until magic + dims + maxval.
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise DataFormatError(f"{path}: truncated PGM header")
        if data[pos : pos + 1] == b"#":
            eol = data.find(b"\n", pos)
            pos = len(data) if eol < 0 else eol + 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise DataFormatError(f"{path}: non-numeric PGM dimensions") from None
    if maxval < 1 or width < 1 or height < 1:
        raise DataFormatError(f"{path}: bad PGM dimensions {width}x{height}, maxval {maxval}")

    if magic == b"P2":
        try:
            flat = np.array([int(t) for t in data[pos:].split()], dtype=float)
        except ValueError:
            raise DataFormatError(f"{path}: non-numeric P2 pixel data") from None
    elif magic == b"P5":
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        need = width * height * dtype.itemsize
        if len(data) - pos < need:
            raise DataFormatError(
                f"{path}: expected {width * height} pixels, found {(len(data) - pos) // dtype.itemsize}"
            )
        flat = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos).astype(float)
    else:
        raise DataFormatError(f"{path}: not a PGM file (magic {magic!r})")
    if flat.size != width * height:
        raise DataFormatError(f"{path}: expected {width * height} pixels, found {flat.size}")
    if flat.min() < 0 or flat.max() > maxval:
        raise DataFormatError(f"{path}: pixel out of range [0, {maxval}]")
    return (flat / maxval).reshape(height, width)


def read_raster_csv(path) -> np.ndarray:
    """Read a raw CSV raster (rows of comma-separated intensities)."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, ln in enumerate(fh, start=1):
            if not ln.strip():
                continue
            try:
                rows.append([float(v) for v in ln.split(",")])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: non-numeric field ({exc})") from None
    if not rows:
        raise DataFormatError(f"{path}: empty raster")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataFormatError(f"{path}: ragged raster rows (widths {sorted(widths)})")
    return np.array(rows)

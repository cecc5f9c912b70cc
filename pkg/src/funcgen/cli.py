"""Command-line front end.

Commands: ``train``, ``sample``, ``infer``, ``evaluate``, ``test``,
``eigsys``.  Every command takes ``--config``, ``--seed``, ``--out-dir``, and
``--threads``; results land in the output directory as delimited CSV files
with PNG figures alongside.  Exit codes: 0 success, 1 usage or input error,
2 numeric failure (diverged chains or training).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
from scipy.special import expit

from .config import (
    RunConfig,
    build_buffer,
    build_kernel,
    build_langevin,
    build_train_config,
    hidden_dims,
    load_config,
    ridge_or_none,
)
from .data import (
    DataFormatError,
    Dataset,
    FourierEncoder,
    fourier_encode,
    gen_image_dataset,
    load_long_csv,
    make_fourier_encoder,
    pixel_centers,
    preprocess,
    read_pgm,
    read_raster_csv,
    write_dataset_manifest,
    write_long_csv,
)
from .evaluation import (
    SplitSpec,
    dataset_sampler,
    infer_function,
    model_function_sampler,
    pca_embed,
    predictive_mse,
    test_power,
    write_embedding_csv,
    write_eval_csv,
    write_test_csv,
)
from .model import (
    ContinuousBernoulli,
    Gaussian,
    SpectralEnergyModel,
    decode,
    load_model,
    save_model,
)
from .net import default_architecture, init_params
from .plots import (
    plot_embedding,
    plot_eigensystem,
    plot_function_samples,
    plot_history,
    plot_image_grid,
    plot_mse_bars,
)
from .sampler import (
    ChainDivergedError,
    sample_functions,
    sample_prior_latent,
)
from .spectral import (
    FunctionSample,
    NumericError,
    default_anchors,
    mesh_fingerprint,
    nystrom,
    save_eigensystem,
)
from .trainer import TrainingDivergedError, train, write_history_csv


class CliError(Exception):
    """Usage-level error: bad flags, malformed specs, missing inputs."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run configuration file (key = value lines)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out-dir", help="override the output directory")
    p.add_argument("--threads", type=int, help="cap numeric library threads")


def build_parser() -> _Parser:
    parser = _Parser(prog="funcgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config")
    _common_flags(p)
    p.add_argument("--dataset", help="override the config dataset path")

    p = sub.add_parser("sample", help="draw functions from a trained model")
    _common_flags(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint directory")
    p.add_argument("--mesh", required=True, help="mesh spec: uniform:a:b:n | raster:H:W | file:path")
    p.add_argument("--n", type=int, required=True, help="number of functions to draw")
    p.add_argument("--out", default="samples", help="output basename (default samples)")

    p = sub.add_parser("infer", help="posterior function draws from a context")
    _common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--context", required=True, help="long CSV with the context observations")
    p.add_argument("--mesh", required=True, help="query mesh spec")
    p.add_argument("--n", type=int, default=100, help="number of posterior draws")
    p.add_argument("--out", default="inferred", help="output basename")

    p = sub.add_parser("evaluate", help="predictive MSE under context/evaluation splits")
    _common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True, help="long CSV of evaluation functions")
    p.add_argument("--strategy", default="downsample", help="comma list: random,middle,downsample")
    p.add_argument("--p", default="0.5", help="comma list of context fractions")
    p.add_argument("--out", default="eval", help="output basename")

    p = sub.add_parser("test", help="two-sample test power of model vs data")
    _common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--trials", type=int, help="override test.n_trials")
    p.add_argument("--self-test", action="store_true", help="compare the model against itself")
    p.add_argument("--out", default="test", help="output basename")

    p = sub.add_parser("eigsys", help="build and export a kernel eigensystem")
    _common_flags(p)
    p.add_argument("--dataset", help="long CSV whose meshes anchor the eigensystem")
    p.add_argument("--mesh", help="mesh spec to anchor on instead of a dataset")
    p.add_argument("--out", default="eigsys", help="output basename")
    return parser


def _runtime_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.override("seed", args.seed)
    if args.out_dir is not None:
        cfg.override("out_dir", args.out_dir)
    if getattr(args, "dataset", None):
        cfg.override("dataset", args.dataset)
    if getattr(args, "checkpoint", None):
        cfg.override("checkpoint", args.checkpoint)
    return cfg


def _out_path(cfg: RunConfig, name: str) -> str:
    out_dir = cfg.get("out_dir")
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


def _dataset_files(path: str, suffix: str) -> list:
    if "," in path:
        return [p.strip() for p in path.split(",") if p.strip()]
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path) if n.endswith(suffix))
        if not names:
            raise CliError(f"no {suffix} files in directory {path}")
        return [os.path.join(path, n) for n in names]
    return [path]


def _load_training_data(cfg: RunConfig):
    """Returns (dataset, extras) where extras seed the checkpoint manifest."""
    path = cfg.get("dataset")
    if not path:
        raise CliError("config key 'dataset' is required for this command")
    fmt = cfg.get("data.format")
    if fmt == "long":
        name = os.path.splitext(os.path.basename(path))[0]
        return load_long_csv(path, name=name), {}
    if fmt not in ("pgm", "raster"):
        raise CliError(f"data.format must be long, pgm, or raster, got {fmt!r}")
    reader = read_pgm if fmt == "pgm" else read_raster_csv
    files = _dataset_files(path, ".pgm" if fmt == "pgm" else ".csv")
    images = [reader(f) for f in files]
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise CliError(f"rasters must share one shape, found {sorted(shapes)}")
    encoder = make_fourier_encoder(
        2, cfg.get("encoder.n_freq"), cfg.get("encoder.scale"), cfg.get("encoder.seed")
    )
    height, width = images[0].shape
    dataset = gen_image_dataset(np.array(images), encoder)
    extras = {
        "encoder_n_freq": str(encoder.n_freq),
        "encoder_scale": repr(encoder.scale),
        "encoder_seed": str(encoder.seed),
        "raster_h": str(height),
        "raster_w": str(width),
    }
    return dataset, extras


def _encoder_from_extras(extras: dict) -> FourierEncoder | None:
    if "encoder_n_freq" not in extras:
        return None
    return make_fourier_encoder(
        2,
        int(extras["encoder_n_freq"]),
        float(extras["encoder_scale"]),
        int(extras["encoder_seed"]),
    )


class MeshSpec:
    """Parsed query mesh: model-space mesh plus raw output coordinates."""

    def __init__(self, model_mesh, out_coords, raster_shape=None):
        self.model_mesh = model_mesh
        self.out_coords = out_coords
        self.raster_shape = raster_shape


def parse_mesh_spec(spec: str, extras: dict | None = None) -> MeshSpec:
    parts = spec.split(":")
    if parts[0] == "uniform" and len(parts) == 4:
        try:
            lo, hi, n = float(parts[1]), float(parts[2]), int(parts[3])
        except ValueError:
            raise CliError(f"bad uniform mesh spec {spec!r}") from None
        if n < 1 or not hi > lo:
            raise CliError(f"bad uniform mesh spec {spec!r}")
        mesh = np.linspace(lo, hi, n)[:, None]
        return MeshSpec(mesh, mesh)
    if parts[0] == "raster" and len(parts) == 3:
        try:
            height, width = int(parts[1]), int(parts[2])
        except ValueError:
            raise CliError(f"bad raster mesh spec {spec!r}") from None
        if height < 1 or width < 1:
            raise CliError(f"bad raster mesh spec {spec!r}")
        encoder = _encoder_from_extras(extras or {})
        if encoder is None:
            raise CliError("raster meshes need a checkpoint trained on image data")
        coords = pixel_centers(height, width)
        return MeshSpec(fourier_encode(encoder, coords), coords, (height, width))
    if parts[0] == "file" and len(parts) >= 2:
        path = spec.partition(":")[2]
        try:
            mesh = np.loadtxt(path, delimiter=",", ndmin=2)
        except OSError:
            raise
        except Exception as exc:
            raise CliError(f"cannot read mesh file {path}: {exc}") from None
        encoder = _encoder_from_extras(extras or {})
        if encoder is not None:
            return MeshSpec(fourier_encode(encoder, mesh), mesh)
        return MeshSpec(mesh, mesh)
    raise CliError(f"unknown mesh spec {spec!r} (use uniform:a:b:n, raster:H:W, or file:path)")


def _apply_checkpoint_prep(dataset: Dataset, extras: dict) -> Dataset:
    """Transform raw data the way the checkpoint's training data was."""
    mode = extras.get("prep_mode", "none")
    if mode == "none":
        return dataset
    if mode == "global":
        mean = float(extras["prep_mean"])
        std = float(extras["prep_std"])
        samples = [
            FunctionSample(mesh=s.mesh, values=(s.values - mean) / std) for s in dataset
        ]
        return Dataset(samples=samples, name=dataset.name)
    if mode == "per_sample":
        return preprocess(dataset, "per_sample")
    raise ValueError(f"checkpoint has unknown prep_mode {mode!r}")


def _rendered(model: SpectralEnergyModel, decoded: np.ndarray) -> np.ndarray:
    """Map decoded outputs to observation units (intensities for images)."""
    if isinstance(model.likelihood, ContinuousBernoulli):
        return expit(decoded)
    return decoded


def cmd_train(cfg: RunConfig) -> int:
    dataset, extras = _load_training_data(cfg)
    prep_mode = cfg.get("data.preprocess")
    dataset = preprocess(dataset, prep_mode)
    if prep_mode == "global":
        extras["prep_mode"] = "global"
        extras["prep_mean"] = repr(dataset.preprocessing.mean)
        extras["prep_std"] = repr(dataset.preprocessing.std)
    elif prep_mode == "per_sample":
        extras["prep_mode"] = "per_sample"

    seed = cfg.get("seed")
    anchors = default_anchors(
        [s.mesh for s in dataset], max_anchors=cfg.get("eigsys.max_anchors"), seed=seed
    )
    eigsys = nystrom(
        build_kernel(cfg), anchors, cfg.get("eigsys.n_basis"), ridge=ridge_or_none(cfg)
    )

    latent_dim = cfg.get("model.latent_dim")
    hidden = hidden_dims(cfg)
    coeff_dims, coeff_skips = default_architecture(latent_dim, eigsys.n_basis, hidden)
    energy_dims, energy_skips = default_architecture(latent_dim, 1, hidden)
    likelihood_name = cfg.get("model.likelihood")
    if likelihood_name == "gaussian":
        likelihood = Gaussian(sigma=cfg.get("model.sigma"))
    elif likelihood_name == "cbernoulli":
        likelihood = ContinuousBernoulli()
    else:
        raise CliError(f"model.likelihood must be gaussian or cbernoulli, got {likelihood_name!r}")
    model = SpectralEnergyModel(
        eigsys=eigsys,
        coeff_net=init_params(coeff_dims, seed=seed, skip_pairs=coeff_skips, output_head="linear"),
        energy_net=init_params(
            energy_dims, seed=seed + 1, skip_pairs=energy_skips, output_head="scaled_tanh"
        ),
        likelihood=likelihood,
    )

    tcfg = build_train_config(cfg)
    lcfg = build_langevin(cfg)
    buffer = build_buffer(cfg)
    try:
        best, history = train(model, dataset, tcfg, lcfg, buffer=buffer)
    except TrainingDivergedError as exc:
        if exc.model is not None:
            save_model(_out_path(cfg, "checkpoint_diverged"), exc.model, extras)
        if exc.history:
            write_history_csv(_out_path(cfg, "history.csv"), exc.history)
        raise

    save_model(_out_path(cfg, "checkpoint"), best, extras)
    write_history_csv(_out_path(cfg, "history.csv"), history)
    if history:
        plot_history(_out_path(cfg, "history.png"), history)
    with open(_out_path(cfg, "config.resolved.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.resolved_text())
    write_dataset_manifest(_out_path(cfg, "dataset_manifest.txt"), dataset)
    print(f"trained {len(history)} epochs on {len(dataset)} samples")
    print(f"checkpoint: {_out_path(cfg, 'checkpoint')}")
    return 0


def cmd_sample(cfg: RunConfig, args) -> int:
    model, extras = load_model(args.checkpoint)
    ms = parse_mesh_spec(args.mesh, extras)
    if args.n < 0:
        raise CliError(f"--n must be >= 0, got {args.n}")
    csv_path = _out_path(cfg, f"{args.out}.csv")
    if args.n == 0:
        dim = ms.out_coords.shape[1]
        header = "function_id,x,y" if dim == 1 else (
            "function_id," + ",".join(f"x{i}" for i in range(dim)) + ",y"
        )
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(header + "\n")
        print(f"wrote {csv_path} (0 samples)")
        return 0

    lcfg = build_langevin(cfg)
    rng = np.random.default_rng(cfg.get("seed"))
    latents = sample_prior_latent(model, lcfg, args.n, rng)
    decoded = _rendered(model, decode(model, latents, ms.model_mesh))
    if extras.get("prep_mode") == "global":
        decoded = decoded * float(extras["prep_std"]) + float(extras["prep_mean"])
    samples = [FunctionSample(mesh=ms.out_coords, values=decoded[i]) for i in range(args.n)]
    write_long_csv(csv_path, samples)

    png_path = _out_path(cfg, f"{args.out}.png")
    if ms.raster_shape is not None:
        h, w = ms.raster_shape
        plot_image_grid(png_path, decoded.reshape(args.n, h, w))
    elif ms.out_coords.shape[1] == 1:
        plot_function_samples(png_path, samples, title="model samples")
    else:
        png_path = None
    print(f"wrote {csv_path}" + (f" and {png_path}" if png_path else ""))
    return 0


def cmd_infer(cfg: RunConfig, args) -> int:
    model, extras = load_model(args.checkpoint)
    context_data = load_long_csv(args.context, name="context")
    context = context_data[0]
    encoder = _encoder_from_extras(extras)
    ctx_mesh = fourier_encode(encoder, context.mesh) if encoder is not None else context.mesh
    ctx_values = context.values
    if extras.get("prep_mode") == "global":
        ctx_values = (ctx_values - float(extras["prep_mean"])) / float(extras["prep_std"])
    ms = parse_mesh_spec(args.mesh, extras)
    if args.n < 1:
        raise CliError(f"--n must be >= 1, got {args.n}")

    lcfg = build_langevin(cfg)
    rng = np.random.default_rng(cfg.get("seed"))
    fns = infer_function(model, ctx_mesh, ctx_values, args.n, lcfg, rng)
    latents = np.array([f.latent for f in fns])
    decoded = _rendered(model, decode(model, latents, ms.model_mesh))
    if extras.get("prep_mode") == "global":
        decoded = decoded * float(extras["prep_std"]) + float(extras["prep_mean"])
    samples = [FunctionSample(mesh=ms.out_coords, values=decoded[i]) for i in range(args.n)]
    csv_path = _out_path(cfg, f"{args.out}.csv")
    write_long_csv(csv_path, samples, ids=[f"draw_{i}" for i in range(args.n)])

    png_path = None
    if ms.raster_shape is not None:
        h, w = ms.raster_shape
        png_path = plot_image_grid(_out_path(cfg, f"{args.out}.png"), decoded.reshape(args.n, h, w))
    elif ms.out_coords.shape[1] == 1 and context.mesh.shape[1] == 1:
        png_path = plot_function_samples(
            _out_path(cfg, f"{args.out}.png"), samples, title="posterior draws", context=context
        )
    print(f"wrote {csv_path}" + (f" and {png_path}" if png_path else ""))
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    model, extras = load_model(args.checkpoint)
    raw = load_long_csv(args.dataset, name=os.path.splitext(os.path.basename(args.dataset))[0])
    dataset = _apply_checkpoint_prep(raw, extras)
    strategies = [s.strip() for s in args.strategy.split(",") if s.strip()]
    try:
        fractions = [float(t) for t in args.p.split(",") if t.strip()]
    except ValueError:
        raise CliError(f"--p must be a comma list of floats, got {args.p!r}") from None
    if not strategies or not fractions:
        raise CliError("--strategy and --p must be nonempty")

    lcfg = build_langevin(cfg)
    rows = []
    for strategy in strategies:
        for p in fractions:
            spec = SplitSpec(strategy=strategy, p=p, seed=cfg.get("split.seed"))
            mse = predictive_mse(
                model, dataset, spec, lcfg,
                n_samples=cfg.get("eval.n_samples"), seed=cfg.get("seed"),
            )
            rows.append((dataset.name, strategy, p, mse))
            print(f"{dataset.name} {strategy} p={p:g}: mse={mse:.6g}")
    csv_path = _out_path(cfg, f"{args.out}.csv")
    write_eval_csv(csv_path, rows)
    plot_mse_bars(_out_path(cfg, f"{args.out}.png"), rows)
    print(f"wrote {csv_path}")
    return 0


def cmd_test(cfg: RunConfig, args) -> int:
    model, extras = load_model(args.checkpoint)
    raw = load_long_csv(args.dataset, name=os.path.splitext(os.path.basename(args.dataset))[0])
    dataset = _apply_checkpoint_prep(raw, extras)
    key = mesh_fingerprint(dataset[0].mesh)
    if any(mesh_fingerprint(s.mesh) != key for s in dataset):
        raise ValueError("the two-sample test needs a dataset with one common mesh")
    mesh = dataset[0].mesh

    lcfg = build_langevin(cfg)
    model_draws = model_function_sampler(model, mesh, lcfg)
    against = model_draws if args.self_test else dataset_sampler(dataset)
    n_trials = args.trials if args.trials is not None else cfg.get("test.n_trials")
    power, stderr, results = test_power(
        model_draws,
        against,
        n_trials=n_trials,
        n_each=cfg.get("test.n_each"),
        alpha=cfg.get("test.alpha"),
        n_perm=cfg.get("test.n_perm"),
        seed=cfg.get("seed"),
    )
    csv_path = _out_path(cfg, f"{args.out}.csv")
    write_test_csv(csv_path, results)

    rng = np.random.default_rng(cfg.get("seed") + 1)
    n_embed = min(len(dataset), 50)
    data_side = list(dataset)[:n_embed]
    model_side = sample_functions(model, mesh, n_embed, lcfg, rng)
    coords = pca_embed(data_side + model_side)
    ids = list(range(n_embed)) + list(range(n_embed))
    sources = ["data"] * n_embed + ["model"] * n_embed
    emb_csv = _out_path(cfg, "embedding.csv")
    write_embedding_csv(emb_csv, ids, sources, coords)
    plot_embedding(_out_path(cfg, "embedding.png"), coords, sources)

    label = "self-test" if args.self_test else "model vs data"
    print(f"{label} power: {power:.3f} +/- {stderr:.3f} over {n_trials} trials")
    print(f"wrote {csv_path} and {emb_csv}")
    return 0


def cmd_eigsys(cfg: RunConfig, args) -> int:
    seed = cfg.get("seed")
    if args.dataset:
        data = load_long_csv(args.dataset)
        anchors = default_anchors(
            [s.mesh for s in data], max_anchors=cfg.get("eigsys.max_anchors"), seed=seed
        )
    elif args.mesh:
        encoder_extras = {}
        if args.mesh.startswith("raster:"):
            encoder = make_fourier_encoder(
                2, cfg.get("encoder.n_freq"), cfg.get("encoder.scale"), cfg.get("encoder.seed")
            )
            encoder_extras = {
                "encoder_n_freq": str(encoder.n_freq),
                "encoder_scale": repr(encoder.scale),
                "encoder_seed": str(encoder.seed),
            }
        anchors = parse_mesh_spec(args.mesh, encoder_extras).model_mesh
    else:
        raise CliError("eigsys needs --dataset or --mesh")

    eigsys = nystrom(
        build_kernel(cfg), anchors, cfg.get("eigsys.n_basis"), ridge=ridge_or_none(cfg)
    )
    out_path = _out_path(cfg, f"{args.out}.txt")
    save_eigensystem(out_path, eigsys)
    lead = ", ".join(f"{v:.4g}" for v in eigsys.eigenvalues[:8])
    print(f"{eigsys.n_basis} basis functions over {eigsys.n_anchors} anchors")
    print(f"leading eigenvalues: {lead}")
    if anchors.shape[1] == 1:
        lo, hi = anchors[:, 0].min(), anchors[:, 0].max()
        fine = np.linspace(lo, hi, 400)[:, None]
        plot_eigensystem(
            _out_path(cfg, f"{args.out}_spectrum.png"),
            _out_path(cfg, f"{args.out}_functions.png"),
            eigsys,
            fine,
        )
    print(f"wrote {out_path}")
    return 0


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if getattr(args, "threads", None):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        cfg = _runtime_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "sample":
            return cmd_sample(cfg, args)
        if args.command == "infer":
            return cmd_infer(cfg, args)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args)
        if args.command == "test":
            return cmd_test(cfg, args)
        if args.command == "eigsys":
            return cmd_eigsys(cfg, args)
        raise CliError(f"unknown command {args.command!r}")
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, ChainDivergedError, TrainingDivergedError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

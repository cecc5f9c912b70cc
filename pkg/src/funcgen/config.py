"""Run configuration: flat key=value text with dotted section prefixes.

Example file:

    dataset = data/train.csv
    kernel.lengthscale = 0.3
    train.epochs = 40

Unknown keys are rejected.  Every key has a default; the resolved snapshot
written next to run outputs lists all of them, so any run can be reproduced
from its snapshot alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .sampler import LangevinConfig, ReplayBuffer
from .spectral import Kernel
from .trainer import TrainConfig

# key -> (type converter name, default, help)
SCHEMA = {
    "seed": ("int", 0, "global random seed"),
    "dataset": ("str", "", "dataset path (long CSV, or PGM/raster files for images)"),
    "checkpoint": ("str", "", "model checkpoint directory"),
    "out_dir": ("str", "out", "output directory for artifacts"),
    "kernel.family": ("str", "matern32", "matern32 | matern52 | rbf"),
    "kernel.variance": ("float", 1.0, "kernel output variance"),
    "kernel.lengthscale": ("float", 0.5, "kernel input lengthscale"),
    "eigsys.n_basis": ("int", 30, "spectral truncation (basis functions kept)"),
    "eigsys.ridge": ("float", 0.0, "interpolation ridge; <= 0 means automatic"),
    "eigsys.max_anchors": ("int", 512, "cap on anchor points for the eigensystem"),
    "model.likelihood": ("str", "gaussian", "gaussian | cbernoulli"),
    "model.sigma": ("float", 0.05, "gaussian observation noise scale"),
    "model.latent_dim": ("int", 8, "latent dimensionality"),
    "model.hidden": ("str", "512,512,512", "hidden widths for both networks"),
    "encoder.n_freq": ("int", 64, "random Fourier frequencies for image coordinates"),
    "encoder.scale": ("float", 10.0, "Fourier frequency scale"),
    "encoder.seed": ("int", 0, "Fourier frequency seed"),
    "langevin.step_size": ("float", 1e-3, "Langevin step size"),
    "langevin.n_steps": ("int", 100, "Langevin steps per chain"),
    "buffer.capacity": ("int", 8192, "replay buffer capacity"),
    "buffer.reuse_prob": ("float", 0.9, "probability of resuming a buffered chain"),
    "train.batch_size": ("int", 32, "minibatch size"),
    "train.epochs": ("int", 100, "training epochs"),
    "train.lr_coeff": ("float", 1e-3, "learning rate, coefficient network"),
    "train.lr_energy": ("float", 5e-4, "learning rate, latent energy network"),
    "train.plateau_factor": ("float", 0.1, "learning-rate decay factor on plateau"),
    "train.min_lr": ("float", 1e-5, "learning-rate floor"),
    "train.patience": ("int", 5, "epochs without improvement before decay"),
    "train.early_stop_patience": ("int", 15, "epochs without improvement before stop"),
    "split.strategy": ("str", "downsample", "random | middle | downsample"),
    "split.p": ("float", 0.5, "context fraction for splits"),
    "split.seed": ("int", 0, "seed for random splits"),
    "data.preprocess": ("str", "none", "none | global | per_sample"),
    "data.format": ("str", "long", "long | pgm | raster"),
    "eval.n_samples": ("int", 100, "posterior draws per predictive mean"),
    "test.n_trials": ("int", 200, "two-sample test trials"),
    "test.n_each": ("int", 10, "samples per group per trial"),
    "test.alpha": ("float", 0.05, "test significance level"),
    "test.n_perm": ("int", 200, "label permutations per test"),
}

_CONVERT = {"int": int, "float": float, "str": str}


@dataclass
class RunConfig:
    """Validated key -> value map over the documented schema."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {key: default for key, (_, default, _) in SCHEMA.items()}
        for key, raw in self.values.items():
            if key not in SCHEMA:
                raise ValueError(f"unknown config key {key!r}")
            kind = SCHEMA[key][0]
            try:
                merged[key] = _CONVERT[kind](raw)
            except (TypeError, ValueError):
                raise ValueError(f"config key {key!r} expects {kind}, got {raw!r}") from None
        self.values = merged

    def get(self, key: str):
        if key not in SCHEMA:
            raise KeyError(f"unknown config key {key!r}")
        return self.values[key]

    def override(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ValueError(f"unknown config key {key!r}")
        self.values[key] = _CONVERT[SCHEMA[key][0]](value)

    def resolved_text(self) -> str:
        lines = [f"{key} = {self.values[key]}" for key in SCHEMA]
        return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    """Parse key = value lines; '#' starts a comment, blanks ignored."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return RunConfig(values=values)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def build_kernel(cfg: RunConfig) -> Kernel:
    return Kernel(
        family=cfg.get("kernel.family"),
        variance=cfg.get("kernel.variance"),
        lengthscale=cfg.get("kernel.lengthscale"),
    )


def build_langevin(cfg: RunConfig) -> LangevinConfig:
    return LangevinConfig(
        step_size=cfg.get("langevin.step_size"),
        n_steps=cfg.get("langevin.n_steps"),
        noise_seed=cfg.get("seed"),
    )


def build_buffer(cfg: RunConfig) -> ReplayBuffer:
    return ReplayBuffer(
        capacity=cfg.get("buffer.capacity"),
        reuse_prob=cfg.get("buffer.reuse_prob"),
    )


def build_train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg.get("train.batch_size"),
        epochs=cfg.get("train.epochs"),
        lr_coeff=cfg.get("train.lr_coeff"),
        lr_energy=cfg.get("train.lr_energy"),
        plateau_factor=cfg.get("train.plateau_factor"),
        min_lr=cfg.get("train.min_lr"),
        patience=cfg.get("train.patience"),
        early_stop_patience=cfg.get("train.early_stop_patience"),
        seed=cfg.get("seed"),
    )


def hidden_dims(cfg: RunConfig) -> list:
    text = cfg.get("model.hidden").strip()
    if not text:
        return []
    try:
        dims = [int(tok) for tok in text.split(",")]
    except ValueError:
        raise ValueError(f"model.hidden must be comma-separated ints, got {text!r}") from None
    if any(d < 1 for d in dims):
        raise ValueError(f"model.hidden widths must be >= 1, got {dims}")
    return dims


def ridge_or_none(cfg: RunConfig):
    ridge = cfg.get("eigsys.ridge")
    return None if ridge <= 0 else ridge

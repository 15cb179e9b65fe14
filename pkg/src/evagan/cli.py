"""Command-line entry point: ``evagan train | compare | eval | gridgen``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error. Failures
print a single ``error: <kind>: <reason>`` line on stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import MODEL_KINDS, CheckpointError, load_checkpoint, save_checkpoint
from .data import (
    UNDERSAMPLING_PRESETS,
    DataError,
    load_mnist_idx,
    load_tabular_csv,
    preprocess,
    split,
    synth_unbalanced,
    undersample_minority,
)
from .imaging import ImageModeError, render_grid
from .metrics import BASELINES, baseline_result, evaluate, emit_traces, fit_baseline, make_metric_hook
from .networks import BatchError, ConfigError, GanConfig
from .training import Trainer, TrainingError, stream_rng

OUTPUT_ENV = "EVAGAN_OUTPUT_DIR"
CHECKPOINT_NAME = "checkpoint.evgn"


@dataclass
class DatasetConfig:
    kind: str = "synth"
    train_fraction: float = 0.7
    # synth
    n_majority: int = 5000
    n_minority: int = 50
    n_features: int = 10
    separation: float = 0.4
    spread: float = 0.1
    # csv
    path: str | None = None
    label_column: str = "Label"
    minority_value: str = "bot"
    clip_low: float | None = 1.0
    clip_high: float | None = 99.0
    outlier_mode: str = "clip"
    # mnist
    images: str | None = None
    labels: str | None = None
    keep_fraction: float = 1.0

    def validate(self) -> "DatasetConfig":
        if self.kind not in ("synth", "csv", "mnist"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise ConfigError("csv dataset needs --csv PATH")
        if self.kind == "mnist" and not (self.images and self.labels):
            raise ConfigError("mnist dataset needs --mnist-images and --mnist-labels")
        if not 0 < self.keep_fraction <= 1:
            raise ConfigError("keep_fraction must lie in (0, 1]")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if (self.clip_low is None) != (self.clip_high is None):
            raise ConfigError("clip_low and clip_high must be given together")
        return self


@dataclass
class RunConfig:
    model: str = "evagan"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    epochs: int = 150
    batch_size: int = 256
    latent_dim: int | None = None
    lr: float = 5e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    output_dir: str | None = None
    run_name: str | None = None
    deterministic: bool = False
    metric_samples: int = 256
    minority_share: float | None = None
    grids: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        ds = d.pop("dataset", {}) or {}
        if isinstance(ds, dict):
            ds_known = {f.name for f in fields(DatasetConfig)}
            bad = set(ds) - ds_known
            if bad:
                raise ConfigError(f"unknown dataset keys: {sorted(bad)}")
            ds = DatasetConfig(**ds)
        return cls(dataset=ds, **d)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "RunConfig":
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.batch_size < 3:
            raise ConfigError(
                f"batch_size {self.batch_size} too small: batchnorm needs >= 2 rows per batch "
                "(and each real batch holds 1 majority + 2 minority rows at least)"
            )
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        self.dataset.validate()
        self.gan_config(1)
        return self

    @property
    def image_mode(self) -> bool:
        return self.dataset.kind == "mnist"

    @property
    def value_range(self) -> tuple[float, float]:
        return (-1.0, 1.0) if self.image_mode else (0.0, 1.0)

    def gan_config(self, feature_dim: int) -> GanConfig:
        latent = self.latent_dim or (100 if self.image_mode else 32)
        return GanConfig(
            feature_dim=feature_dim,
            latent_dim=latent,
            batch_size=self.batch_size,
            epochs=self.epochs,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            output_activation="tanh" if self.image_mode else "sigmoid",
            minority_share=self.minority_share,
            metric_samples=self.metric_samples,
        ).validate()

    def resolved_output(self) -> Path:
        base = Path(self.output_dir or os.environ.get(OUTPUT_ENV, "runs"))
        return base / (self.run_name or f"{self.model}-{self.dataset.kind}-seed{self.seed}")


# ------------------------------------------------------------------ pipeline


@dataclass
class PreparedData:
    train: object
    test: object
    provenance: dict


def prepare_data(cfg: RunConfig) -> PreparedData:
    """load -> preprocess -> split (-> undersample train minority for MNIST)."""
    d = cfg.dataset
    clip = None if d.clip_low is None else (d.clip_low, d.clip_high)
    prov: dict = {"kind": d.kind}
    if d.kind == "mnist":
        m = load_mnist_idx(d.images, d.labels).only_digits((0, 1))
        ds = m.to_tabular(cfg.value_range)
        train, test = split(ds, d.train_fraction, cfg.seed)
        if d.keep_fraction < 1:
            train = undersample_minority(train, d.keep_fraction, cfg.seed)
    else:
        if d.kind == "csv":
            raw = load_tabular_csv(d.path, d.label_column, d.minority_value)
        else:
            raw = synth_unbalanced(d.n_majority, d.n_minority, d.n_features, d.separation, cfg.seed, spread=d.spread)
        ds = preprocess(raw, clip, d.outlier_mode)
        prov["preprocess"] = json.loads(ds.report.to_json())
        train, test = split(ds, d.train_fraction, cfg.seed)
    prov["train_counts"] = {str(k): v for k, v in train.class_counts().items()}
    prov["test_counts"] = {str(k): v for k, v in test.class_counts().items()}
    prov["feature_dim"] = train.n_features
    return PreparedData(train, test, prov)


def _single_thread(deterministic: bool):
    if not deterministic:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


def grid_noise(model, seed: int) -> np.ndarray:
    return model.noise(100, stream_rng(seed, 5))


def run_training(cfg: RunConfig, log=None) -> dict:
    """Full training run; returns a summary and writes the run directory.

    Progress lines go to ``log`` (stderr by default) so stdout stays machine-readable.
    """
    log = log or _stderr
    cfg.validate()
    with _single_thread(cfg.deterministic):
        data = prepare_data(cfg)
        gcfg = cfg.gan_config(data.train.n_features)
        model = MODEL_KINDS[cfg.model](gcfg, stream_rng(cfg.seed, 0))
        trainer = Trainer(model, data.train, cfg.seed)
        out = cfg.resolved_output()
        out.mkdir(parents=True, exist_ok=True)

        noise = None
        if cfg.grids:
            if not cfg.image_mode:
                raise ImageModeError("qualitative grids are image-mode only")
            noise = grid_noise(model, cfg.seed)

        def progress(tr, rec):
            if noise is not None:
                render_grid(tr.model, noise, cfg.value_range, out / "grids", rec.epoch)
            log(
                f"[{cfg.model}] epoch {rec.epoch}/{cfg.epochs} gen_validity={rec.gen_validity:.4f} "
                f"fake_min_eva={rec.fake_min_eva:.4f} real_maj_est={rec.real_maj_est:.4f} "
                f"real_min_eva={rec.real_min_eva:.4f} ({rec.epoch_seconds:.2f}s)"
            )

        result = trainer.run(cfg.epochs, make_metric_hook(data.test, gcfg.metric_samples, cfg.seed), progress)

        manifest = {
            "run_config": cfg.to_dict(),
            "model_config": gcfg.to_dict(),
            "model": cfg.model,
            "seed": cfg.seed,
            "data": data.provenance,
            "checkpoint": CHECKPOINT_NAME,
            "rng": "numpy PCG64, streams [seed, k]: 0 init, 1 training noise, 2 batch sampler, 3 metrics, 4 baseline fakes, 5 grid noise",
        }
        emit_traces(result.epochs, out, manifest, include_timing=not cfg.deterministic)
        _write_timing(out / "timing.csv", result.epochs)
        if data.provenance.get("preprocess"):
            (out / "preprocess_report.json").write_text(json.dumps(data.provenance["preprocess"], indent=2, sort_keys=True) + "\n")
        # Where the run was written is not part of the run: leave it out so that
        # identical runs in different directories give identical checkpoints.
        portable = {**cfg.to_dict(), "output_dir": None, "run_name": None}
        save_checkpoint(out / CHECKPOINT_NAME, trainer, {"run_config": portable})
    final = result.epochs[-1]
    return {
        "run_dir": str(out),
        "model": cfg.model,
        "epochs": len(result.epochs),
        "median_epoch_seconds": float(np.median([r.epoch_seconds for r in result.epochs])),
        "final": asdict(final.estimates),
    }


def _stderr(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_timing(path: Path, records) -> None:
    lines = ["epoch,epoch_seconds,wall_seconds"]
    lines += [f"{r.epoch},{r.epoch_seconds!r},{r.wall_seconds!r}" for r in records]
    path.write_text("\n".join(lines) + "\n")


def run_eval(checkpoint_path, dataset: DatasetConfig | None = None) -> dict:
    ck = load_checkpoint(checkpoint_path)
    cfg = RunConfig.from_dict(ck.extra["run_config"])
    if dataset is not None:
        cfg.dataset = dataset.validate()
    data = prepare_data(cfg)
    width = ck.model.config.feature_dim
    if data.test.n_features != width:
        raise DataError(f"dataset has {data.test.n_features} features but checkpoint expects {width}")
    n = ck.model.config.metric_samples
    est = evaluate(ck.model, data.test, n, stream_rng(ck.seed, 3, ck.epoch))
    fake = ck.model.generate(n, stream_rng(ck.seed, 4))
    baselines = [asdict(baseline_result(fit_baseline(k, data.train), data.test, fake)) for k in BASELINES]
    return {"model": ck.model.kind, "epoch": ck.epoch, "estimates": asdict(est), "baselines": baselines}


def run_compare(cfg_a: RunConfig, cfg_b: RunConfig, out_dir: Path, log=None) -> dict:
    if asdict(cfg_a.dataset) != asdict(cfg_b.dataset) or cfg_a.seed != cfg_b.seed:
        raise ConfigError("mismatched datasets: compared runs must share the dataset config and seed")
    runs = []
    for tag, cfg in (("a", cfg_a), ("b", cfg_b)):
        cfg.output_dir = str(out_dir)
        cfg.run_name = f"{tag}-{cfg.model}"
        runs.append(run_training(cfg, log))
    a, b = runs
    report = {
        "a": a,
        "b": b,
        "time_ratio_a_over_b": a["median_epoch_seconds"] / b["median_epoch_seconds"],
    }
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / "comparison.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def run_gridgen(checkpoint_path, out_dir) -> Path:
    ck = load_checkpoint(checkpoint_path)
    cfg = RunConfig.from_dict(ck.extra["run_config"])
    if not cfg.image_mode:
        raise ImageModeError("qualitative grids are image-mode only")
    return render_grid(ck.model, grid_noise(ck.model, ck.seed), cfg.value_range, out_dir, ck.epoch)


# ------------------------------------------------------------------ argparse


def _add_run_args(p: argparse.ArgumentParser, with_model: bool = True) -> None:
    if with_model:
        p.add_argument("--model", choices=sorted(MODEL_KINDS))
    p.add_argument("--config", help="JSON file mirroring the run configuration")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", help=f"defaults to ${OUTPUT_ENV} or ./runs")
    p.add_argument("--run-name")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="single-threaded BLAS; timing columns move to timing.csv")
    p.add_argument("--metric-samples", type=int)
    p.add_argument("--minority-share", type=float)
    p.add_argument("--grids", action="store_true", default=None, help="render epoch_{k}.pgm per epoch (MNIST only)")
    _add_dataset_args(p)


def _add_dataset_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("dataset")
    g.add_argument("--dataset", choices=["synth", "csv", "mnist"])
    g.add_argument("--train-fraction", type=float)
    g.add_argument("--n-majority", type=int)
    g.add_argument("--n-minority", type=int)
    g.add_argument("--n-features", type=int)
    g.add_argument("--separation", type=float)
    g.add_argument("--spread", type=float)
    g.add_argument("--csv", dest="path")
    g.add_argument("--label-column")
    g.add_argument("--minority-value")
    g.add_argument("--clip-low", type=float)
    g.add_argument("--clip-high", type=float)
    g.add_argument("--outlier-mode", choices=["clip", "drop-rows"])
    g.add_argument("--mnist-images", dest="images")
    g.add_argument("--mnist-labels", dest="labels")
    g.add_argument("--keep-fraction", type=float)
    g.add_argument("--undersample", type=int, choices=sorted(UNDERSAMPLING_PRESETS),
                   help="percent of minority rows removed (preset for --keep-fraction)")


_DATASET_FIELDS = {f.name for f in fields(DatasetConfig)}


def _dataset_overrides(args) -> dict:
    over = {}
    for name in _DATASET_FIELDS - {"kind"}:
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    if getattr(args, "dataset", None):
        over["kind"] = args.dataset
    if getattr(args, "undersample", None) is not None:
        over["keep_fraction"] = UNDERSAMPLING_PRESETS[args.undersample]
    return over


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def config_from_args(args, base: dict | None = None) -> RunConfig:
    d = dict(base or {})
    if getattr(args, "config", None):
        d.update(_load_json(args.config))
    ds = dict(d.get("dataset") or {})
    ds.update(_dataset_overrides(args))
    d["dataset"] = ds
    for name in ("model", "epochs", "batch_size", "latent_dim", "lr", "beta1", "beta2", "seed", "output_dir",
                 "run_name", "deterministic", "metric_samples", "minority_share", "grids"):
        v = getattr(args, name, None)
        if v is not None:
            d[name] = v
    try:
        return RunConfig.from_dict(d).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evagan", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"evagan {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model and write metrics, manifest and checkpoint")
    _add_run_args(t)

    c = sub.add_parser("compare", help="train two models on the same data stream and compare")
    _add_run_args(c, with_model=False)
    c.add_argument("--models", nargs=2, metavar=("A", "B"), default=None, choices=sorted(MODEL_KINDS))
    c.add_argument("--config-a")
    c.add_argument("--config-b")

    e = sub.add_parser("eval", help="evaluate a checkpoint without training")
    e.add_argument("checkpoint")
    _add_dataset_args(e)

    g = sub.add_parser("gridgen", help="render a 10x10 PGM grid from an MNIST-mode checkpoint")
    g.add_argument("checkpoint")
    g.add_argument("--out", default=".")
    return p


def _dispatch(args) -> int:
    if args.command == "train":
        summary = run_training(config_from_args(args))
        print(json.dumps(summary, sort_keys=True))
    elif args.command == "compare":
        if args.config_a or args.config_b:
            if not (args.config_a and args.config_b):
                raise ConfigError("--config-a and --config-b must be given together")
            cfg_a = RunConfig.from_dict(_load_json(args.config_a)).validate()
            cfg_b = RunConfig.from_dict(_load_json(args.config_b)).validate()
        else:
            models = args.models or ["evagan", "acgan"]
            cfg_a = config_from_args(args, {"model": models[0]})
            cfg_b = config_from_args(args, {"model": models[1]})
        out = Path(cfg_a.output_dir or os.environ.get(OUTPUT_ENV, "runs")) / (args.run_name or "compare")
        report = run_compare(cfg_a, cfg_b, out)
        print(json.dumps(report, sort_keys=True))
    elif args.command == "eval":
        over = _dataset_overrides(args)
        ds = None
        if over:
            ck_cfg = RunConfig.from_dict(load_checkpoint(args.checkpoint).extra["run_config"])
            ds = DatasetConfig(**{**asdict(ck_cfg.dataset), **over})
        print(json.dumps(run_eval(args.checkpoint, ds), sort_keys=True))
    elif args.command == "gridgen":
        print(run_gridgen(args.checkpoint, args.out))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError, ImageModeError, TrainingError, BatchError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

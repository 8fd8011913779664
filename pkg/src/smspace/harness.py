"""Experiment orchestration: configs, single training runs with periodic
evaluation and checkpointing, and multi-seed campaigns."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import METRICS, DissimilarityReport, aggregate_runs, d_metric, evaluate
from .exploration import (Dataset, NormalizedData, Regime, eval_set, fit_norm, generate_dataset,
                          load_dataset, normalize_dataset, save_dataset)
from .neural import (AdamState, PredictiveModel, TrainingError, build_model, load_checkpoint,
                     lr_schedule, save_checkpoint, train_step)
from .numcore import DegenerateInputError, RandomStream, seed_derive
from .worlds import WORLD_IDS

OUT_ENV = "SMSPACE_OUT"
LARGE_ENCODER = (500, 400, 300, 200)
CURVE_HEADER = ["epoch", *METRICS]


class ConfigError(ValueError):
    pass


def default_k(world: str) -> int:
    return 300_000 if world in ("discrete6", "arm4") else 150_000


def _widths(value) -> tuple[int, ...]:
    if isinstance(value, str):
        if value.strip().lower() == "large":
            return LARGE_ENCODER
        try:
            return tuple(int(v) for v in value.replace(" ", "").split(",") if v)
        except ValueError:
            raise ConfigError(f"bad layer widths {value!r}") from None
    return tuple(int(v) for v in value)


def _flag(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


@dataclass
class ExperimentConfig:
    world: str = "discrete"
    regime: str = "MM"
    n_h: int = 3
    encoder: tuple[int, ...] = (150, 100, 50)
    predictor: tuple[int, ...] = (200, 150, 100)
    activation: str = "selu"
    k: int | None = None  # None: per-world default
    epochs: int = 100_000
    decay_epochs: int = 80_000
    batch: int = 100
    runs: int = 50
    seed: int = 0
    fixed_dataset: bool = False
    cadence: int = 1000
    probe: int = 1000
    checkpoint_every: int = 0  # 0: final checkpoint only
    workers: int = 1
    out: str = "results"

    _INT_KEYS = ("n_h", "k", "epochs", "decay_epochs", "batch", "runs", "seed", "cadence", "probe",
                 "checkpoint_every", "workers")

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in names:
                raise ConfigError(f"unknown config key {key!r}")
            if raw is None:
                continue
            try:
                if key in cls._INT_KEYS:
                    raw = int(raw)
                elif key in ("encoder", "predictor"):
                    raw = _widths(raw)
                elif key == "fixed_dataset":
                    raw = _flag(raw)
                elif key == "regime":
                    raw = Regime.parse(raw).name
                else:
                    raw = str(raw)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
            kwargs[key] = raw
        return cls(**kwargs)

    @property
    def transitions(self) -> int:
        return default_k(self.world) if self.k is None else self.k

    def validate(self, training: bool = True) -> None:
        """Raise ``ConfigError`` on the first violated invariant. With
        ``training=False`` only the dataset-generation keys are checked."""
        if self.world not in WORLD_IDS:
            raise ConfigError(f"unknown world {self.world!r}")
        try:
            Regime.parse(self.regime)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.transitions < 1:
            raise ConfigError("K must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in 64 bits")
        if not training:
            return
        if self.activation not in ("selu", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.n_h < 1:
            raise ConfigError("n_h must be positive")
        for name in ("encoder", "predictor"):
            widths = getattr(self, name)
            if not widths or any(w <= 0 for w in widths):
                raise ConfigError(f"{name} widths must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.decay_epochs < 0 or self.decay_epochs > self.epochs:
            raise ConfigError(f"decay epochs {self.decay_epochs} must lie in [0, epochs={self.epochs}]")
        if self.cadence < 1:
            raise ConfigError("cadence must be positive")
        if self.runs < 1 or self.workers < 1:
            raise ConfigError("runs and workers must be positive")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be non-negative")
        if self.probe < 1:
            raise ConfigError("probe must be positive")
        if self.batch < 1 or self.batch > self.transitions - self.probe:
            raise ConfigError(f"batch {self.batch} must lie in [1, K - probe = "
                              f"{self.transitions - self.probe}]")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["encoder"] = list(self.encoder)
        out["predictor"] = list(self.predictor)
        return out


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        values[key] = value
    return values


def load_config(path=None, overrides: dict | None = None, training: bool = True) -> ExperimentConfig:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        values.update(parse_config_text(text, str(path)))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = ExperimentConfig.from_mapping(values)
    cfg.validate(training)
    return cfg


def resolve_out(path) -> Path:
    """Relative output paths live under ``$SMSPACE_OUT`` when it is set."""
    p = Path(path)
    root = os.environ.get(OUT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


# ---------------------------------------------------------------- csv helpers

def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])


def read_curve(path) -> list[DissimilarityReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CURVE_HEADER:
        raise ValueError(f"{path}: not a curve file")
    return [DissimilarityReport(int(r[0]), *(float(v) for v in r[1:])) for r in rows[1:]]


# ---------------------------------------------------------------- single run

@dataclass
class RunArtifacts:
    run_dir: Path
    dataset_path: Path
    curve_path: Path
    checkpoint_paths: list[Path]
    points_path: Path
    reports: list[DissimilarityReport]
    H: np.ndarray
    positions: np.ndarray

    @property
    def final(self) -> DissimilarityReport:
        return self.reports[-1]


class RunFailed(RuntimeError):
    def __init__(self, message: str, checkpoint: Path | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint


def split_data(dataset: Dataset, probe: int):
    """Normalized training pool and the held-out probe (the last transitions)."""
    stats = fit_norm(dataset)
    data = normalize_dataset(dataset, stats)
    n_train = len(data) - probe
    if n_train < 1:
        raise ConfigError(f"dataset of {len(data)} transitions leaves nothing after a {probe}-sample probe")
    train = NormalizedData(*(a[:n_train] for a in data.take(slice(None))))
    return stats, train, data.take(slice(n_train, None))


def _point_rows(run: int, motors, H, Hp, P):
    for kind, arr in (("m", motors), ("h", H), ("hp", Hp), ("p", P)):
        if arr is None:
            continue
        for i, row in enumerate(np.atleast_2d(arr)):
            yield [kind, run, i, *row]


def write_points(path, run: int, motors, H, positions) -> None:
    try:
        _, fit = d_metric(H, positions)
        Hp = fit.apply(H)
    except DegenerateInputError:
        Hp = None
    rows = list(_point_rows(run, motors, H, Hp, positions))
    width = max(len(r) for r in rows) - 3
    header = ["kind", "run", "index", *(f"c{j}" for j in range(width))]
    rows = [r + [""] * (width + 3 - len(r)) for r in rows]
    write_rows(path, header, rows)


def train_run(config: ExperimentConfig, dataset: Dataset, run_seed: int, run_dir,
              dataset_path=None, resume=None, run_index: int = 0) -> RunArtifacts:
    """Train one model on ``dataset`` and write its artifacts into ``run_dir``.

    All randomness comes from streams derived from ``run_seed``. ``resume``
    names a checkpoint written by an earlier call with the same config; the
    result then matches an uninterrupted run exactly.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if dataset.world.name != config.world:
        raise ConfigError(f"dataset world {dataset.world.name!r} does not match config world {config.world!r}")
    if config.batch > len(dataset) - config.probe:
        raise ConfigError(f"batch {config.batch} exceeds the {len(dataset) - config.probe} training transitions")
    stats, train, probe = split_data(dataset, config.probe)
    evalset = eval_set(dataset.world, stats)
    digest = hashlib.sha256(b"".join(np.ascontiguousarray(a).tobytes() for a in
                                     (dataset.m_t, dataset.s_t, dataset.m_next, dataset.s_next))).hexdigest()

    curve_path = run_dir / "curve.csv"
    reports: list[DissimilarityReport] = []
    if resume is None:
        model = build_model(dataset.n_motor, dataset.n_sensory, config.n_h,
                            RandomStream.derive(run_seed, "init"), config.encoder,
                            config.predictor, config.activation)
        adam = AdamState.for_model(model)
        batches = RandomStream.derive(run_seed, "batches")
        start = 0
    else:
        model, start, adam, header = load_checkpoint(resume)
        if adam is None or "batch_stream" not in header:
            raise ConfigError(f"{resume}: checkpoint lacks optimizer or stream state")
        if header.get("data_sha256") != digest:
            raise ConfigError(f"{resume}: checkpoint was trained on a different dataset")
        if start > config.epochs:
            raise ConfigError(f"{resume}: checkpoint epoch {start} is past epochs={config.epochs}")
        batches = RandomStream.from_state(header["batch_stream"])
        if curve_path.exists():
            reports = [r for r in read_curve(curve_path) if r.epoch <= start]

    checkpoints: list[Path] = []

    def checkpoint(epoch: int, name: str) -> Path:
        path = run_dir / name
        save_checkpoint(path, model, epoch, adam, extra={
            "batch_stream": batches.get_state(), "run_seed": run_seed,
            "data_sha256": digest, "config": config.to_dict()})
        return path

    with open(curve_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_HEADER)

        def record(rep: DissimilarityReport):
            reports.append(rep)
            writer.writerow([fmt(v) for v in rep.row()])
            fh.flush()

        for rep in reports:
            writer.writerow([fmt(v) for v in rep.row()])
        if resume is None:
            record(evaluate(model, evalset, probe, 0))
        n_train = len(train)
        grad_buf = np.empty(model.n_params)
        for epoch in range(start, config.epochs):
            idx = batches.sample_without_replacement(n_train, config.batch)
            try:
                train_step(model, adam, train.take(idx), lr_schedule(epoch, config.decay_epochs), grad_buf)
            except TrainingError as exc:
                path = checkpoint(epoch, "diverged.ckpt")
                raise RunFailed(f"run {run_index}: {exc} at epoch {epoch}", path) from None
            done = epoch + 1
            if done % config.cadence == 0 or done == config.epochs:
                record(evaluate(model, evalset, probe, done))
            if config.checkpoint_every and done % config.checkpoint_every == 0 and done != config.epochs:
                checkpoints.append(checkpoint(done, f"epoch-{done}.ckpt"))
    checkpoints.append(checkpoint(config.epochs, "final.ckpt"))

    H = model.encode(evalset.motors_norm)
    points_path = run_dir / "points.csv"
    write_points(points_path, run_index, evalset.motors_norm, H, evalset.positions)
    return RunArtifacts(run_dir, Path(dataset_path) if dataset_path else run_dir / "dataset.smds",
                        curve_path, checkpoints, points_path, reports, H, evalset.positions)


# ---------------------------------------------------------------- campaigns

def run_seed_for(master: int, index: int) -> int:
    return seed_derive(master, f"run-{index}")


def dataset_seed_for(config: ExperimentConfig, index: int) -> int:
    base = config.seed if config.fixed_dataset else run_seed_for(config.seed, index)
    return seed_derive(base, "dataset")


def make_dataset(config: ExperimentConfig, seed: int, path) -> tuple[Dataset, str]:
    ds = generate_dataset(config.world, config.regime, config.transitions, seed)
    return ds, save_dataset(ds, path)


@dataclass
class RunOutcome:
    index: int
    reports: list[DissimilarityReport] = field(default_factory=list)
    dataset_digest: str = ""
    H: np.ndarray | None = None
    positions: np.ndarray | None = None
    error: str | None = None


def _run_task(config_dict: dict, index: int, out_dir: str, shared_dataset: str | None) -> RunOutcome:
    config = ExperimentConfig.from_mapping(config_dict)
    config.validate()
    run_dir = Path(out_dir) / f"run-{index:03d}"
    run_dir.mkdir(parents=True, exist_ok=True)
    try:
        if shared_dataset is not None:
            ds_path = Path(shared_dataset)
            data = ds_path.read_bytes()
            digest = hashlib.sha256(data).hexdigest()
            ds = load_dataset(ds_path)
        else:
            ds_path = run_dir / "dataset.smds"
            ds, digest = make_dataset(config, dataset_seed_for(config, index), ds_path)
        art = train_run(config, ds, run_seed_for(config.seed, index), run_dir, ds_path, run_index=index)
    except (RunFailed, TrainingError, ArithmeticError) as exc:
        return RunOutcome(index, error=str(exc))
    return RunOutcome(index, art.reports, digest, art.H, art.positions)


@dataclass
class ExperimentResult:
    out_dir: Path
    outcomes: list[RunOutcome]
    aggregate: list[dict]
    aggregate_path: Path
    svg_path: Path

    @property
    def completed(self) -> list[RunOutcome]:
        return [o for o in self.outcomes if o.error is None]

    @property
    def failed(self) -> list[RunOutcome]:
        return [o for o in self.outcomes if o.error is not None]

    def final(self, metric: str) -> np.ndarray:
        return np.array([getattr(o.reports[-1], metric) for o in self.completed])


AGGREGATE_HEADER = ["epoch"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")] + ["runs"]


def cmd_experiment(config: ExperimentConfig, out_dir=None, log=print) -> ExperimentResult:
    """Run ``config.runs`` seeded pipelines and aggregate their curves."""
    from .plotting import curves_svg
    config.validate()
    out = resolve_out(out_dir if out_dir is not None else config.out)
    out.mkdir(parents=True, exist_ok=True)
    shared = None
    if config.fixed_dataset:
        shared = out / "dataset.smds"
        _, digest = make_dataset(config, dataset_seed_for(config, 0), shared)
        log(f"shared dataset {shared} sha256={digest}")
        shared = str(shared)
    args = [(config.to_dict(), i, str(out), shared) for i in range(config.runs)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_run_task, *zip(*args)))
    else:
        outcomes = [_run_task(*a) for a in args]
    outcomes.sort(key=lambda o: o.index)
    for o in outcomes:
        if o.error is not None:
            log(f"run {o.index} failed: {o.error}")
    done = [o for o in outcomes if o.error is None]
    if not done:
        raise RunFailed("every run failed")
    aggregate = aggregate_runs([o.reports for o in done])
    agg_path = out / "aggregate.csv"
    write_rows(agg_path, AGGREGATE_HEADER,
               [[row[h] for h in AGGREGATE_HEADER[:-1]] + [len(done)] for row in aggregate])
    svg_path = out / "curves.svg"
    svg_path.write_text(curves_svg([(f"{config.world} {config.regime}", aggregate)]), encoding="utf-8")
    log(f"{len(done)}/{len(outcomes)} runs completed; aggregate written to {agg_path}")
    return ExperimentResult(out, outcomes, aggregate, agg_path, svg_path)

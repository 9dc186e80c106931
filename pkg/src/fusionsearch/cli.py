"""Command-line driver: synth, optimize, evaluate, robustness, report.

Every command is a pure function of the config file, the master seed and the
input files. Wall-clock numbers go to the log stream only, never to files.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import fcntl
import json
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .evaluation import (FoldError, NetworkScale, aggregate, loo_evaluate, roc_auc, tfcv_fitness,
                         tfcv_split)
from .genome import ConfigError, Genome, ModelConfig, decode_genome
from .network import NonFiniteError, TrainSpec, predict_proba, save_checkpoint
from .optimizers import (FitnessError, GaConfig, OptimizerRunLog, PsoConfig, run_ga, run_pso)
from .seeding import derive_seed, process_map
from .signals import (DataError, MultiChannelRecording, SynthParams, WindowedDataset, add_awgn,
                      generate_synthetic_subject, load_recording, preprocess, save_recording,
                      substitute_channels)

log = logging.getLogger("fusionsearch")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
ALGORITHMS = ("ga", "pso")
DEFAULT_SNR_GRID = tuple(float(s) for s in range(-20, 21, 5))


# --- config ------------------------------------------------------------------

@dataclass(frozen=True)
class RobustnessSettings:
    snr_grid: tuple[float, ...] = DEFAULT_SNR_GRID
    channel_loss: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    # {"directory": d} | {"manifests": [...]} | {"synth": {...}, "n_subjects": n}
    dataset: dict = field(default_factory=lambda: {"synth": {}, "n_subjects": 16})
    optimizer: str = "both"
    ga: dict = field(default_factory=dict)
    pso: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    # size overrides applied to every decoded config (desk-scale runs)
    network: dict = field(default_factory=dict)
    model_config: dict | None = None
    robustness: RobustnessSettings = RobustnessSettings()

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        rob = d.pop("robustness", {}) or {}
        bad = set(rob) - {"snr_grid", "channel_loss"}
        if bad:
            raise ConfigError(f"unknown robustness keys: {sorted(bad)}")
        if "snr_grid" in rob:
            rob["snr_grid"] = tuple(float(s) for s in rob["snr_grid"])
        cfg = cls(**d, robustness=RobustnessSettings(**rob))
        if base_dir is not None:
            cfg = cfg._resolve_paths(base_dir)
        cfg.validate()
        return cfg

    def _resolve_paths(self, base: Path) -> "ExperimentConfig":
        ds = dict(self.dataset)
        if "directory" in ds:
            ds["directory"] = str(base / ds["directory"])
        if "manifests" in ds:
            ds["manifests"] = [str(base / m) for m in ds["manifests"]]
        return replace(self, dataset=ds, output_dir=str(base / self.output_dir))

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.optimizer not in ("ga", "pso", "both"):
            raise ConfigError(f"optimizer must be ga, pso or both, got {self.optimizer!r}")
        sources = [k for k in ("directory", "manifests", "synth") if k in self.dataset]
        if len(sources) != 1:
            raise ConfigError("dataset needs exactly one of directory, manifests, synth")
        if "synth" in self.dataset:
            self.synth_params().validate()
        for s in self.robustness.snr_grid:
            if not -20.0 <= s <= 20.0:
                raise ConfigError(f"SNR grid point {s} dB outside [-20, 20]")
        # constructing these raises on bad overrides
        self.ga_config(), self.pso_config(), self.train_spec(), self.scale()
        if self.model_config is not None:
            ModelConfig.from_dict(self.model_config)

    def synth_params(self) -> SynthParams:
        raw = dict(self.dataset.get("synth", {}))
        for k in ("burst_gains", "burst_band_hz", "background_band_hz", "channel_names"):
            if k in raw:
                raw[k] = tuple(raw[k])
        try:
            p = SynthParams(**raw)
            p.validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"synthesis parameters: {exc}") from exc
        return p

    @property
    def n_subjects(self) -> int:
        n = int(self.dataset.get("n_subjects", 16))
        if n < 2:
            raise ConfigError("need at least two subjects")
        return n

    def _build(self, cls, overrides, **fixed):
        try:
            return cls(**{**overrides, **fixed})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{cls.__name__}: {exc}") from exc

    def ga_config(self) -> GaConfig:
        return self._build(GaConfig, self.ga, seed=derive_seed(self.seed, "ga"))

    def pso_config(self) -> PsoConfig:
        return self._build(PsoConfig, self.pso, seed=derive_seed(self.seed, "pso"))

    def train_spec(self) -> TrainSpec:
        return self._build(TrainSpec, self.train)

    def scale(self) -> NetworkScale:
        return self._build(NetworkScale, self.network)

    def algorithms(self, override: str | None = None) -> tuple[str, ...]:
        choice = override or self.optimizer
        return ALGORITHMS if choice == "both" else (choice,)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig.from_dict({})
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {p}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    return ExperimentConfig.from_dict(raw, base_dir=p.parent.resolve())


# --- data --------------------------------------------------------------------

def synthesize(cfg: ExperimentConfig) -> list[MultiChannelRecording]:
    params = cfg.synth_params()
    out = []
    for i in range(cfg.n_subjects):
        rec = generate_synthetic_subject(params, np.random.default_rng(derive_seed(cfg.seed, "synth", i)),
                                         f"s{i:02d}")
        # float32 round trip, so in-memory data equals what synth writes to disk
        chans = {k: v.astype("<f4").astype(np.float64) for k, v in rec.channels.items()}
        out.append(replace(rec, channels=chans))
    return out


def load_raw(cfg: ExperimentConfig) -> list[MultiChannelRecording]:
    ds = cfg.dataset
    if "synth" in ds:
        return synthesize(cfg)
    if "directory" in ds:
        d = Path(ds["directory"])
        if not d.is_dir():
            raise DataError(f"dataset directory not found: {d}")
        manifests = sorted(d.glob("*/manifest.json"))
        if not manifests:
            raise DataError(f"no */manifest.json under {d}")
    else:
        manifests = [Path(m) for m in ds["manifests"]]
        missing = [str(m) for m in manifests if not m.is_file()]
        if missing:
            raise DataError(f"missing manifests: {missing}")
    recs = [load_recording(m) for m in manifests]
    ids = [r.subject_id for r in recs]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate subject ids in dataset")
    return sorted(recs, key=lambda r: r.subject_id)


def load_dataset(cfg: ExperimentConfig):
    raw = load_raw(cfg)
    return raw, [preprocess(r) for r in raw]


# --- output helpers ----------------------------------------------------------

@contextlib.contextmanager
def output_lock(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / ".lock", "w") as fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError as exc:
            raise RuntimeError(f"another command is running in {out}") from exc
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in r])


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- fitness -----------------------------------------------------------------

@dataclass
class TfcvFitness:
    """Picklable genome -> mean two-fold AUC, seeded per genome."""
    recordings: list
    spec: TrainSpec
    scale: NetworkScale
    master_seed: int

    def __call__(self, g: Genome) -> float:
        return tfcv_fitness(decode_genome(g), self.recordings, self.spec,
                            seed=derive_seed(self.master_seed, "fitness", str(g)), scale=self.scale)


def check_tfcv_folds(recs: Sequence[MultiChannelRecording]) -> None:
    split = tfcv_split([r.subject_id for r in recs])
    for fold in (0, 1):
        labels = np.concatenate([r.labels for r in recs if split.folds[r.subject_id] == fold])
        if labels.min() == labels.max():
            raise FoldError(f"two-fold split: fold {fold} holds a single class")


# --- commands ----------------------------------------------------------------

def cmd_synth(cfg: ExperimentConfig, out: Path) -> list[Path]:
    recs = synthesize(cfg)
    paths = []
    for rec in recs:
        p = save_recording(rec, out / "data" / rec.subject_id)
        paths.append(p)
        print(f"{rec.subject_id}: prevalence {rec.labels.mean():.4f} over {rec.duration_s} s")
    return paths


def cmd_optimize(cfg: ExperimentConfig, out: Path, algo: str | None = None, jobs: int = 1,
                 fitness: Callable[[Genome], float] | None = None) -> dict[str, OptimizerRunLog]:
    """Run the selected optimizer(s). ``fitness`` replaces the TFCV fitness (test hook)."""
    algos = cfg.algorithms(algo)
    if fitness is None:
        _, recs = load_dataset(cfg)
        check_tfcv_folds(recs)
        fitness = TfcvFitness(recs, cfg.train_spec(), cfg.scale(), cfg.seed)
    map_fn = process_map(jobs) if jobs > 1 else None
    logs = {}
    for name in algos:
        def step(r, name=name):
            log.info("%s step %d best %.4f diversity %.3f evaluations %d",
                     name, r.step, r.best_fitness, r.diversity, r.evaluations)
        if name == "ga":
            run = run_ga(fitness, cfg.ga_config(), map_fn=map_fn, on_step=step)
        else:
            run = run_pso(fitness, cfg.pso_config(), map_fn=map_fn, on_step=step)
        log.info("%s finished in %.1f s", name, run.wall_time_s)
        d = out / name
        run.write(d)
        best = decode_genome(Genome.from_string(run.best_genome))
        write_json(d / "best_config.json", {"genome": run.best_genome, **best.to_dict()})
        write_csv(d / "diversity.csv", ["step", "diversity", "best_fitness"],
                  [(r.step, r.diversity, r.best_fitness) for r in run.records])
        logs[name] = run
    return logs


def resolve_model(cfg: ExperimentConfig, out: Path, model: str | None) -> ModelConfig:
    if model is not None:
        p = Path(model)
        if not p.is_file():
            raise ConfigError(f"model config not found: {p}")
        d = json.loads(p.read_text())
    elif cfg.model_config is not None:
        d = cfg.model_config
    else:
        for name in ALGORITHMS:
            p = out / name / "best_config.json"
            if p.is_file():
                d = json.loads(p.read_text())
                break
        else:
            raise ConfigError("no model config: pass --model, set model_config, or run optimize")
    d = {k: v for k, v in d.items() if k != "genome"}
    return ModelConfig.from_dict(d)


def cmd_evaluate(cfg: ExperimentConfig, out: Path, model: str | None = None, jobs: int = 1):
    config = resolve_model(cfg, out, model)
    _, recs = load_dataset(cfg)
    res = loo_evaluate(config, recs, cfg.train_spec(), derive_seed(cfg.seed, "evaluate"),
                       cfg.scale(), jobs=jobs, keep_models=True)
    d = out / "evaluate"
    write_csv(d / "loo_subjects.csv", ["subject_id", "acc", "sen", "spe", "auc", "threshold"],
              [(c.subject_id, c.acc, c.sen, c.spe, c.auc, c.threshold) for c in res.cycles])
    write_json(d / "loo_aggregate.json", {"model_config": config.to_dict(), **res.summary()})
    for c in res.cycles:
        save_checkpoint(c.net, d / "models" / f"{c.subject_id}.fsnn")
    for m, s in res.summary().items():
        print(f"{m}: {s['table']}")
    return res


@dataclass(frozen=True)
class ChannelScenario:
    name: str
    working: tuple[int, ...]
    replacement: tuple[tuple[int, int], ...]


def channel_loss_scenarios(n: int = 3) -> list[ChannelScenario]:
    """Baseline, every lost-one slot filled by each working slot, every lost-two case."""
    if n != 3:
        raise ConfigError("the channel-loss suite needs a three-channel model")
    out = [ChannelScenario("baseline", (0, 1, 2), ())]
    for lost in range(3):
        for src in (k for k in range(3) if k != lost):
            working = tuple(k for k in range(3) if k != lost)
            out.append(ChannelScenario(f"lose{lost}_from{src}", working, ((lost, src),)))
    for keep in range(3):
        lost = tuple(k for k in range(3) if k != keep)
        out.append(ChannelScenario(f"keep{keep}_only", (keep,), tuple((k, keep) for k in lost)))
    return out


class SubstitutedWindows:
    """View of a windowed dataset with lost slots overwritten by working ones."""

    def __init__(self, data: WindowedDataset, scenario: ChannelScenario):
        self.data = data
        self.scenario = scenario
        self.labels = data.labels

    def take(self, idx):
        return substitute_channels(self.data.take(idx), self.scenario.working,
                                   dict(self.scenario.replacement))


def noisy_copy(raw: MultiChannelRecording, snr_db: float, master_seed: int) -> MultiChannelRecording:
    """Test-time AWGN on the raw signal. The noise draw depends on (subject, channel)
    only, so every SNR level scales the same realization."""
    chans = {}
    for name, x in raw.channels.items():
        rng = np.random.default_rng(derive_seed(master_seed, "awgn", raw.subject_id, name))
        chans[name] = add_awgn(x, snr_db, rng)
    return replace(raw, channels=chans)


def robustness_sweep(config: ModelConfig, raw: Sequence[MultiChannelRecording],
                     recs: Sequence[MultiChannelRecording], nets: dict, snr_grid: Sequence[float],
                     master_seed: int, channel_loss: bool = True):
    """AUC per (scenario, subject) and per (SNR, subject) for already trained LOO models."""
    scen = channel_loss_scenarios(len(config.channels)) if channel_loss else []
    raw_by_id = {r.subject_id: r for r in raw}
    loss_rows, snr_rows = [], []
    for rec in recs:
        sid = rec.subject_id
        net = nets[sid]
        test = WindowedDataset([rec], config.time_steps, config.channels)
        for s in scen:
            auc = roc_auc(predict_proba(net, SubstitutedWindows(test, s)), test.labels).auc
            loss_rows.append((s.name, len(s.working), sid, auc))
        for snr in snr_grid:
            noisy = preprocess(noisy_copy(raw_by_id[sid], snr, master_seed))
            nt = WindowedDataset([noisy], config.time_steps, config.channels)
            snr_rows.append((float(snr), sid, roc_auc(predict_proba(net, nt), nt.labels).auc))
    return loss_rows, snr_rows


def _summaries(rows, key_idx, auc_idx):
    groups: dict = {}
    for r in rows:
        groups.setdefault(r[key_idx], []).append(r[auc_idx])
    return {k: {**aggregate(v), "median": float(np.median(v))} for k, v in groups.items()}


def cmd_robustness(cfg: ExperimentConfig, out: Path, model: str | None = None, jobs: int = 1,
                   snr_grid: Sequence[float] | None = None):
    config = resolve_model(cfg, out, model)
    if cfg.robustness.channel_loss and len(config.channels) != 3:
        raise ConfigError("the channel-loss suite needs a three-channel model")
    grid = tuple(cfg.robustness.snr_grid if snr_grid is None else snr_grid)
    raw, recs = load_dataset(cfg)
    # same seed as evaluate, so the models (and the baseline AUC) coincide
    res = loo_evaluate(config, recs, cfg.train_spec(), derive_seed(cfg.seed, "evaluate"),
                       cfg.scale(), jobs=jobs, keep_models=True)
    nets = {c.subject_id: c.net for c in res.cycles}
    loss_rows, snr_rows = robustness_sweep(config, raw, recs, nets, grid,
                                           derive_seed(cfg.seed, "robustness"),
                                           cfg.robustness.channel_loss)
    d = out / "robustness"
    write_csv(d / "channel_loss.csv", ["scenario", "n_working", "subject_id", "auc"], loss_rows)
    write_csv(d / "snr.csv", ["snr_db", "subject_id", "auc"], snr_rows)
    report = build_robustness_report(res, loss_rows, snr_rows)
    write_json(d / "report.json", report)
    return report


def build_robustness_report(res, loss_rows, snr_rows) -> dict:
    base = aggregate([c.auc for c in res.cycles])
    base["median"] = float(np.median([c.auc for c in res.cycles]))
    scen = _summaries(loss_rows, 0, 3)
    snr = _summaries(snr_rows, 0, 2)
    for group in (scen, snr):
        for v in group.values():
            v["delta_median"] = v["median"] - base["median"]
    return {"baseline": base, "channel_loss": scen,
            "snr": {f"{k:g}": v for k, v in sorted(snr.items())}}


REPORT_SOURCES = {
    "ga": ["ga/log.jsonl", "ga/summary.json"],
    "pso": ["pso/log.jsonl", "pso/summary.json"],
    "evaluate": ["evaluate/loo_subjects.csv", "evaluate/loo_aggregate.json"],
    "robustness": ["robustness/channel_loss.csv", "robustness/snr.csv"],
}


def cmd_report(out: Path) -> list[Path]:
    present = {k: all((out / f).is_file() for f in fs) for k, fs in REPORT_SOURCES.items()}
    if not any(present.values()):
        missing = [f for fs in REPORT_SOURCES.values() for f in fs]
        raise DataError(f"no run artifacts in {out}; expected some of: {', '.join(missing)}")
    for k, ok in present.items():
        if not ok:
            log.info("skipping %s: missing %s", k,
                     [f for f in REPORT_SOURCES[k] if not (out / f).is_file()])
    d = out / "report"
    written = []
    runs = {a: OptimizerRunLog.read(out / a) for a in ALGORITHMS if present[a]}
    if runs:
        steps = max(len(r.records) for r in runs.values())
        names = sorted(runs)

        def column(attr):
            rows = []
            for s in range(steps):
                row = [s]
                for a in names:
                    recs = runs[a].records
                    row.append(getattr(recs[s], attr) if s < len(recs) else None)
                rows.append(row)
            return rows
        for fname, attr in (("fitness.csv", "best_fitness"), ("diversity.csv", "diversity")):
            write_csv(d / fname, ["step", *names], column(attr))
            written.append(d / fname)
    if present["evaluate"]:
        agg = json.loads((out / "evaluate/loo_aggregate.json").read_text())
        rows = [(m, agg[m]["mean"], agg[m]["std"], agg[m]["min"], agg[m]["max"], agg[m]["table"])
                for m in ("acc", "sen", "spe", "auc")]
        write_csv(d / "loo_table.csv", ["metric", "mean", "std", "min", "max", "table"], rows)
        written.append(d / "loo_table.csv")
    if present["robustness"]:
        snr = read_csv(out / "robustness/snr.csv")
        s = _summaries([(float(r["snr_db"]), float(r["auc"])) for r in snr], 0, 1)
        write_csv(d / "auc_vs_snr.csv", ["snr_db", "median", "mean", "min", "max", "n"],
                  [(k, v["median"], v["mean"], v["min"], v["max"], v["n"]) for k, v in sorted(s.items())])
        loss = read_csv(out / "robustness/channel_loss.csv")
        order = list(dict.fromkeys(r["scenario"] for r in loss))
        n_work = {r["scenario"]: int(r["n_working"]) for r in loss}
        s = _summaries([(r["scenario"], float(r["auc"])) for r in loss], 0, 1)
        write_csv(d / "auc_vs_scenario.csv",
                  ["scenario", "n_working", "median", "mean", "min", "max", "n"],
                  [(k, n_work[k], s[k]["median"], s[k]["mean"], s[k]["min"], s[k]["max"], s[k]["n"])
                   for k in order])
        written += [d / "auc_vs_snr.csv", d / "auc_vs_scenario.csv"]
    return written


# --- entry point -------------------------------------------------------------

def _parse_grid(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad SNR grid {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")
    ap = argparse.ArgumentParser(prog="fusionsearch",
                                 description="Metaheuristic search over LSTM fusion classifiers")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    p = sub.add_parser("optimize", parents=[common], help="run GA and/or PSO")
    p.add_argument("--algo", choices=("ga", "pso", "both"))
    for name in ("evaluate", "robustness"):
        p = sub.add_parser(name, parents=[common], help=f"{name} with leave-one-subject-out training")
        p.add_argument("--model", help="model config JSON (default: best optimizer result)")
        if name == "robustness":
            p.add_argument("--snr-grid", type=_parse_grid, help="comma-separated dB values")
    sub.add_parser("report", parents=[common], help="collect plot-ready CSV files")
    return ap


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = replace(cfg, output_dir=args.out)
        cfg.validate()
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        out = Path(cfg.output_dir)
        with output_lock(out):
            if args.command == "synth":
                cmd_synth(cfg, out)
            elif args.command == "optimize":
                cmd_optimize(cfg, out, args.algo, args.jobs)
            elif args.command == "evaluate":
                cmd_evaluate(cfg, out, args.model, args.jobs)
            elif args.command == "robustness":
                cmd_robustness(cfg, out, args.model, args.jobs, args.snr_grid)
            else:
                for p in cmd_report(out):
                    print(p)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FoldError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, FitnessError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

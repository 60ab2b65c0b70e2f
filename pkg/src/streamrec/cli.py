"""Command line: config loading, single runs, sweeps and comparison reports.

Config files are INI-style ``key = value`` text.  Section headers only group
keys for readability; every key lives in one flat namespace.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import itertools
import json
import logging
import statistics
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path

from .core import ExperimentConfig, config_fields
from .harness import SystemState, aggregate, run_prequential_phase, run_training_phase
from .ingest import chronological_split, load_dataset, write_cache

log = logging.getLogger("streamrec")

ALIASES = {
    "lr": "learning_rate", "l2": "l2_weight", "bs": "batch_size", "o": "num_models",
    "e": "memory_top_e", "d": "embedding_dim", "k": "top_k", "neg_ratio": "negative_ratio",
    "reservoir": "reservoir_capacity", "seed": "rng_seed", "sampler": "sampler_kind",
    "fuser": "fuser_kind", "model": "model_kind", "window": "window_size",
}

SECTIONS = {
    "sampling": ("alpha", "lambda_new", "lambda_res", "reservoir_capacity", "batch_size",
                 "sampler_kind", "window_size", "negative_ratio"),
    "stream": ("n_p", "n_r", "train_fraction"),
    "model": ("model_kind", "num_models", "embedding_dim", "mlp_layer_widths",
              "learning_rate", "l2_weight"),
    "ensemble": ("fuser_kind", "memory_top_e"),
    "evaluation": ("eval_negatives", "top_k"),
    "run": ("rng_seed", "workers", "dataset", "out", "label", "repeats", "delimiter",
            "subsample_users"),
}

RUN_KEYS = ("dataset", "out", "label", "repeats", "delimiter", "subsample_users")


class ConfigError(ValueError):
    pass


@dataclass
class RunSpec:
    config: ExperimentConfig = field(default_factory=ExperimentConfig)
    dataset: str = ""
    out: str = "runs"
    label: str = "run"
    repeats: int = 1
    delimiter: str = ""
    subsample_users: int = 0
    record_timing: bool = True

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError(f"repeats ≥ 1 required, got repeats={self.repeats}")
        if self.subsample_users < 0:
            raise ConfigError("subsample_users must be ≥ 0")


def _convert(key: str, raw: str, ftype):
    raw = raw.strip()
    try:
        if ftype in (int, "int"):
            return int(raw)
        if ftype in (float, "float"):
            return float(raw)
        if "tuple" in str(ftype):
            return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {ftype}") from None


_RUN_TYPES = {"dataset": str, "out": str, "label": str, "repeats": int, "delimiter": str,
              "subsample_users": int}


def build_spec(values: dict[str, str], base: RunSpec | None = None) -> RunSpec:
    """Apply raw string ``values`` on top of ``base`` (defaults when absent)."""
    base = base or RunSpec()
    fields = config_fields()
    cfg_changes, run_changes = {}, {}
    for key, raw in values.items():
        name = ALIASES.get(key, key)
        if name in fields:
            cfg_changes[name] = _convert(name, raw, fields[name].type)
        elif name in _RUN_TYPES:
            run_changes[name] = _convert(name, raw, _RUN_TYPES[name])
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        cfg = dataclasses.replace(base.config, **cfg_changes)
        return dataclasses.replace(base, config=cfg, **run_changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        parser.read_string("[__top__]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key in values:
                raise ConfigError(f"{source}: key {key!r} set twice")
            values[key] = raw
    return values


def load_config(path) -> RunSpec:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    try:
        return build_spec(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize(spec: RunSpec) -> str:
    cfg = dataclasses.asdict(spec.config)
    out = io.StringIO()
    for section, keys in SECTIONS.items():
        out.write(f"[{section}]\n")
        for key in keys:
            value = getattr(spec, key) if key in RUN_KEYS else cfg[key]
            out.write(f"{key} = {_fmt(value)}\n")
        out.write("\n")
    return out.getvalue()


# -- running -------------------------------------------------------------

CSV_FIXED = ("iteration", "n_seen", "hr10_fused", "ndcg10_fused")


def _write_manifest(run_dir: Path, status: str, stage: str, files, error: str = "") -> None:
    lines = [f"status: {status}", f"stage: {stage}"]
    if error:
        lines.append(f"error: {error}")
    lines += [f"file: {f}" for f in files]
    (run_dir / "MANIFEST").write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_single(spec: RunSpec, run_dir: Path, dataset=None) -> dict:
    """One seed: ingest, warm-up, prequential phase, artifacts.  Raises on failure
    after writing a MANIFEST that names the stage reached."""
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg = spec.config
    files = ["config.ini"]
    (run_dir / "config.ini").write_text(serialize(spec), encoding="utf-8")
    stage = "ingest"
    csv_fh = None
    try:
        ds = dataset or load_dataset(spec.dataset, spec.delimiter or None,
                                     spec.subsample_users or None, cfg.rng_seed)
        train, test = chronological_split(ds, cfg.train_fraction)
        stage = "training"
        state = SystemState.create(cfg, ds.num_users, ds.num_items)
        run_training_phase(train, state)
        stage = "prequential"
        csv_fh = open(run_dir / "iterations.csv", "w", newline="", encoding="utf-8")
        files.append("iterations.csv")
        writer = csv.writer(csv_fh, lineterminator="\n")
        members = [f"hr10_model_{k}" for k in range(cfg.num_models)]
        writer.writerow([*CSV_FIXED, *members, "wall_ms_test", "wall_ms_train"])

        def emit(rec):
            writer.writerow([rec.iteration, rec.n_seen, f"{rec.mean('hr', 'fused'):.6f}",
                             f"{rec.mean('ndcg', 'fused'):.6f}",
                             *(f"{rec.mean('hr', f'model_{k}'):.6f}" for k in range(cfg.num_models)),
                             *((f"{rec.wall_ms_test:.1f}", f"{rec.wall_ms_train:.1f}")
                               if spec.record_timing else ("0", "0"))])

        records = run_prequential_phase(test, state, on_record=emit)
        csv_fh.close()
        csv_fh = None
        stage = "report"
        report = aggregate(records)
        summary = {
            "label": spec.label, "seed": cfg.rng_seed,
            "dataset": {"path": str(spec.dataset), "num_users": ds.num_users,
                        "num_items": ds.num_items, "interactions": len(ds),
                        "train": len(train), "test": len(test)},
            "config": dataclasses.asdict(cfg),
            "metrics": report.to_dict(),
            f"hr@{cfg.top_k}": report.hr_fused, f"ndcg@{cfg.top_k}": report.ndcg_fused,
        }
        (run_dir / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
        files.append("summary.json")
        _write_manifest(run_dir, "ok", "done", files)
        return summary
    except Exception as exc:
        if csv_fh is not None:
            csv_fh.close()
        _write_manifest(run_dir, "failed", stage, files, f"{type(exc).__name__}: {exc}")
        raise


def run_experiment(spec: RunSpec, dataset=None) -> int:
    """Run ``spec.repeats`` seeds; returns a process exit status."""
    root = Path(spec.out) / spec.label
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        log.error("%s: output directory not writable (%s)", root, exc)
        return 2
    if not spec.dataset and dataset is None:
        log.error("no dataset given (set 'dataset' in the config or pass --dataset)")
        return 2
    if dataset is None:
        # one ingest shared by all repeats (subsampling uses the base seed)
        try:
            dataset = load_dataset(spec.dataset, spec.delimiter or None,
                                   spec.subsample_users or None, spec.config.rng_seed)
        except Exception as exc:
            log.error("%s: %s", spec.dataset, exc)
            _write_manifest(root, "failed", "ingest", [], f"{type(exc).__name__}: {exc}")
            return 1
    summaries = []
    for i in range(spec.repeats):
        seed = spec.config.rng_seed + i
        sub = dataclasses.replace(spec, config=spec.config.replace(rng_seed=seed))
        run_dir = root if spec.repeats == 1 else root / f"seed_{seed}"
        try:
            summaries.append(run_single(sub, run_dir, dataset))
        except Exception as exc:
            log.error("run %s (seed %d) failed: %s", spec.label, seed, exc)
            log.debug("%s", traceback.format_exc())
            return 1
        log.info("%s seed %d: HR@%d=%.4f NDCG@%d=%.4f", spec.label, seed, spec.config.top_k,
                 summaries[-1]["metrics"]["hr"]["fused"], spec.config.top_k,
                 summaries[-1]["metrics"]["ndcg"]["fused"])
    if spec.repeats > 1:
        k = spec.config.top_k
        med = {
            "label": spec.label, "seeds": [s["seed"] for s in summaries],
            "config": dataclasses.asdict(spec.config),
            "median": {
                metric: {name: statistics.median(s["metrics"][metric][name] for s in summaries)
                         for name in summaries[0]["metrics"][metric]}
                for metric in ("hr", "ndcg")
            },
        }
        med[f"hr@{k}"] = med["median"]["hr"]["fused"]
        med[f"ndcg@{k}"] = med["median"]["ndcg"]["fused"]
        (root / "summary.json").write_text(json.dumps(med, indent=2), encoding="utf-8")
        _write_manifest(root, "ok", "done", ["summary.json"] + [f"seed_{s}/" for s in med["seeds"]])
    return 0


# -- reporting -------------------------------------------------------------

def _headline(summary: dict) -> tuple[float, float]:
    hr = next(v for k, v in summary.items() if k.startswith("hr@"))
    ndcg = next(v for k, v in summary.items() if k.startswith("ndcg@"))
    return float(hr), float(ndcg)


def improvement(ours: float, baseline: float) -> str:
    if baseline == 0:
        return "n/a"
    return f"{100.0 * (ours - baseline) / baseline:+.1f}%"


def report(run_dirs) -> tuple[str, str]:
    """Comparison table (text, CSV) of HR/NDCG per run.  With several runs,
    improvement columns give the first run's relative gain over each row."""
    rows = []
    for d in run_dirs:
        path = Path(d) / "summary.json"
        if not path.exists():
            raise FileNotFoundError(f"{d}: missing summary.json")
        summary = json.loads(path.read_text(encoding="utf-8"))
        rows.append((summary.get("label", Path(d).name), *_headline(summary)))
    if not rows:
        raise ValueError("no runs to report")
    multi = len(rows) > 1
    header = ["run", "HR@10", "NDCG@10"] + (["HR impr", "NDCG impr"] if multi else [])
    table = []
    first = rows[0]
    for i, (label, hr, ndcg) in enumerate(rows):
        line = [label, f"{hr:.4f}", f"{ndcg:.4f}"]
        if multi:
            line += ["-", "-"] if i == 0 else [improvement(first[1], hr), improvement(first[2], ndcg)]
        table.append(line)
    widths = [max(len(str(r[c])) for r in [header] + table) for c in range(len(header))]
    text = "\n".join("  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip()
                     for r in [header] + table) + "\n"
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows([header] + table)
    return text, buf.getvalue()


# -- argument handling -----------------------------------------------------

def _overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        out[key.strip()] = value
    return out


def _spec_from_args(args) -> RunSpec:
    spec = load_config(args.config) if args.config else RunSpec()
    values = _overrides(args.overrides)
    for flag, key in (("dataset", "dataset"), ("out", "out"), ("seed", "rng_seed"),
                      ("workers", "workers"), ("subsample_users", "subsample_users"),
                      ("label", "label"), ("repeats", "repeats")):
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = str(value)
    spec = build_spec(values, spec)
    if not args.timing:
        spec = dataclasses.replace(spec, record_timing=False)
    return spec


def _common(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--dataset", help="ratings file or .cache")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="parallel training workers (1 = deterministic)")
    p.add_argument("--subsample-users", dest="subsample_users", type=int)
    p.add_argument("--label")
    p.add_argument("--repeats", type=int)
    p.add_argument("--no-timing", dest="timing", action="store_false",
                   help="write 0 for wall-clock columns (byte-reproducible CSVs)")
    p.add_argument("overrides", nargs="*", metavar="key=value")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="preprocess a ratings file into a cache")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="cache file to write (.cache)")
    p.add_argument("--delimiter")
    p.add_argument("--subsample-users", dest="subsample_users", type=int)
    p.add_argument("--seed", type=int, default=0)

    _common(sub.add_parser("run", help="run one experiment"))
    p = sub.add_parser("sweep", help="grid of runs over listed keys")
    _common(p)
    p.add_argument("--grid", action="append", default=[], metavar="key=v1,v2,...",
                   help="sweep axis (repeatable)")

    p = sub.add_parser("report", help="comparison table of finished runs")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--csv", help="also write the table as CSV here")

    p = sub.add_parser("defaults", help="print the default config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "ingest":
            ds = load_dataset(args.dataset, args.delimiter, args.subsample_users, args.seed)
            write_cache(ds, args.out)
            print(f"{args.out}: {ds.num_users} users, {ds.num_items} items, {len(ds)} interactions")
            return 0
        if args.command == "defaults":
            sys.stdout.write(serialize(RunSpec()))
            return 0
        if args.command == "report":
            text, table = report(args.runs)
            sys.stdout.write(text)
            if args.csv:
                Path(args.csv).write_text(table, encoding="utf-8")
            return 0
        spec = _spec_from_args(args)
        if args.command == "run":
            return run_experiment(spec)
        axes = []
        for item in args.grid:
            key, _, values = item.partition("=")
            if not values:
                raise ConfigError(f"grid axis {item!r} is not key=v1,v2,...")
            build_spec({key: values.split(",")[0]}, spec)  # validates the key early
            axes.append([(key, v) for v in values.split(",")])
        if not axes:
            raise ConfigError("sweep needs at least one --grid axis")
        dataset = load_dataset(spec.dataset, spec.delimiter or None,
                               spec.subsample_users or None, spec.config.rng_seed)
        status = 0
        for combo in itertools.product(*axes):
            label = ",".join(f"{k}={v}" for k, v in combo)
            sub_spec = build_spec(dict(combo, label=f"{spec.label}/{label}"), spec)
            status = max(status, run_experiment(sub_spec, dataset))
        return status
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

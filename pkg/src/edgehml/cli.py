"""Command-line experiment runner.

Commands: `run` executes one variant over a seed list and writes a JSON report
per run plus rows in results.csv; `sweep` crosses one axis (labels_per_class,
capacity pairs, or v1_frac) with seeds and variants into an aggregate CSV;
`inspect-pool` prints a disk-pool file's header and class histogram and checks
that its index rebuilds consistently.

Configuration is a flat key/value file (and repeatable --override K=V flags)
whose keys name Hyperparams fields, synthetic-stream fields, or the two
dataset keys (dataset, test_fraction); anything else is an error. The shared
`seed` key and --seed flags set both the run seed and the stream seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .core import (
    ConfigError,
    EdgeHMLError,
    Hyperparams,
    coerce_value,
    parse_kv_text,
)
from .data import SYNTH_FIELDS, SynthSpec, load_feature_dataset, split_tasks, synth_stream
from .disk_pool import DiskPool
from .trainer import CSV_COLUMNS, CSV_HEADER, VARIANTS, run_stream

log = logging.getLogger("edgehml")

SWEEP_AXES = ("labels_per_class", "capacity", "v1_frac")
SWEEP_HEADER = "# edgehml-sweep v1"
_DATASET_KEYS = ("dataset", "test_fraction")

_HP_TYPES = {f.name: f.type for f in dataclasses.fields(Hyperparams)}
_SYNTH_TYPES = {
    f.name: f.type for f in dataclasses.fields(SynthSpec) if f.name in SYNTH_FIELDS
}
_PY_TYPES = {"int": int, "float": float, "bool": bool, "str": str}


@dataclasses.dataclass
class RunSetup:
    hyper: Hyperparams
    synth: SynthSpec
    dataset: str | None
    test_fraction: float


def _partition_pairs(pairs: dict[str, str]) -> RunSetup:
    hp_kwargs: dict = {}
    synth_kwargs: dict = {}
    dataset = None
    test_fraction = 0.2
    for key, value in pairs.items():
        if key in _HP_TYPES:
            hp_kwargs[key] = coerce_value(key, value, _PY_TYPES.get(_HP_TYPES[key], str))
        elif key in _SYNTH_TYPES:
            synth_kwargs[key] = coerce_value(key, value, _PY_TYPES.get(_SYNTH_TYPES[key], str))
        elif key == "dataset":
            dataset = value
        elif key == "test_fraction":
            test_fraction = coerce_value(key, value, float)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return RunSetup(
        Hyperparams(**hp_kwargs), SynthSpec(**synth_kwargs), dataset, test_fraction
    )


def _load_setup(config_path: str | None, overrides: list[str]) -> RunSetup:
    pairs: dict[str, str] = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            pairs.update(parse_kv_text(fh.read(), source=config_path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        pairs[key.strip()] = value.strip()
    return _partition_pairs(pairs)


def _build_stream(setup: RunSetup, seed: int):
    if setup.dataset:
        dataset = load_feature_dataset(setup.dataset)
        return split_tasks(
            dataset,
            tasks=setup.synth.tasks,
            classes_per_task=setup.synth.classes_per_task,
            labels_per_class=setup.synth.labels_per_class,
            test_fraction=setup.test_fraction,
            seed=seed,
        )
    return synth_stream(dataclasses.replace(setup.synth, seed=seed))


def _execute_run(setup: RunSetup, variant: str, seed: int, out: Path):
    h = dataclasses.replace(setup.hyper, seed=seed)
    stream = _build_stream(setup, seed)
    disk_path = str(out / f"pool_{variant}_seed{seed}.bin") if variant == "edgehml" else None
    return run_stream(stream, h, variant, disk_path=disk_path)


def _append_csv(path: Path, header: str, columns: tuple[str, ...], rows: list[str]) -> None:
    fresh = not path.exists()
    with open(path, "a", encoding="utf-8") as fh:
        if fresh:
            fh.write(header + "\n")
            fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(row + "\n")


def cmd_run(args) -> int:
    setup = _load_setup(args.config, args.override)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in args.seed:
        report = _execute_run(setup, args.variant, seed, out)
        json_path = out / f"run_{args.variant}_seed{seed}.json"
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(report.to_json_dict(), fh, indent=2)
        rows.append(report.csv_row())
        log.info("run %s seed %d: average accuracy %.4f", args.variant, seed, report.average_accuracy)
        print(f"{args.variant} seed={seed} average_accuracy={report.average_accuracy:.4f} "
              f"unsup_fraction={report.unsup_fraction:.2f} -> {json_path}")
    _append_csv(out / "results.csv", CSV_HEADER, CSV_COLUMNS, rows)
    return 0


def _parse_axis(text: str) -> tuple[str, list[str]]:
    name, sep, raw = text.partition("=")
    if not sep:
        raise ConfigError(f"--axis must look like NAME=V1,V2,..., got {text!r}")
    name = name.strip()
    if name not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {SWEEP_AXES}, got {name!r}")
    values = [v.strip() for v in raw.split(",") if v.strip()]
    return name, values


def _apply_axis(setup: RunSetup, axis: str, value: str) -> RunSetup:
    if axis == "labels_per_class":
        synth = dataclasses.replace(setup.synth, labels_per_class=int(value))
        return dataclasses.replace(setup, synth=synth)
    if axis == "v1_frac":
        hyper = dataclasses.replace(setup.hyper, v1_frac=float(value))
        return dataclasses.replace(setup, hyper=hyper)
    mem_s, sep, disk_s = value.partition("+")
    if not sep:
        raise ConfigError(f"capacity values look like MEM+DISK, got {value!r}")
    hyper = dataclasses.replace(setup.hyper, mem_capacity=int(mem_s), disk_capacity=int(disk_s))
    return dataclasses.replace(setup, hyper=hyper)


def _sweep_job(payload) -> str:
    setup, axis, value, variant, seed, out = payload
    report = _execute_run(setup, variant, seed, Path(out))
    return f"{axis},{value},{report.csv_row()}"


def cmd_sweep(args) -> int:
    setup = _load_setup(args.config, args.override)
    axis, values = _parse_axis(args.axis)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    variants = args.variant or ["edgehml"]
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {v!r}")

    jobs = [
        (_apply_axis(setup, axis, value), axis, value, variant, seed, str(out))
        for value in values
        for variant in variants
        for seed in args.seed
    ]
    if args.workers > 1 and jobs:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(job) for job in jobs]

    _append_csv(out / "sweep.csv", SWEEP_HEADER, ("axis", "value", *CSV_COLUMNS), rows)
    print(f"sweep over {axis}: {len(rows)} runs -> {out / 'sweep.csv'}")
    return 0


def cmd_inspect_pool(args) -> int:
    with DiskPool.rebuild_index(args.path, writable=False) as pool:
        print(f"magic: {'EHMLPOOL'} v{1}")
        print(f"feature_dim: {pool.feature_dim}")
        print(f"capacity: {pool.capacity}")
        print(f"count: {pool.count}")
        print(f"write_cursor: {pool.write_cursor}")
        print(f"class_num: {pool.class_num.tolist()}")
        total = int(pool.class_num.sum())
        consistent = total == pool.count and len(pool.index) == pool.count
        print(f"index: {'consistent' if consistent else 'INCONSISTENT'} "
              f"({pool.count} records, histogram sum {total})")
        return 0 if consistent else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgehml",
        description="Tiered-replay semi-supervised continual learning experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key/value config file")
        p.add_argument("--override", action="append", default=[], metavar="K=V",
                       help="override a config key (repeatable)")
        p.add_argument("--seed", action="append", type=int, default=None,
                       help="run seed (repeatable)")
        p.add_argument("--out", default="results", help="output directory")

    p_run = sub.add_parser("run", help="execute one variant over the given seeds")
    common(p_run)
    p_run.add_argument("--variant", choices=VARIANTS, default="edgehml")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="cross one axis with seeds and variants")
    common(p_sweep)
    p_sweep.add_argument("--variant", action="append", choices=VARIANTS, default=None,
                         help="variant to include (repeatable; default edgehml)")
    p_sweep.add_argument("--axis", required=True, metavar="NAME=V1,V2,...",
                         help=f"sweep axis, one of {SWEEP_AXES}")
    p_sweep.add_argument("--workers", type=int, default=1,
                         help="parallel worker processes")
    p_sweep.set_defaults(func=cmd_sweep)

    p_inspect = sub.add_parser("inspect-pool", help="print a pool file's header and histogram")
    p_inspect.add_argument("path")
    p_inspect.set_defaults(func=cmd_inspect_pool)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("EDGEHML_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "seed") and not args.seed:
        args.seed = [0]
    try:
        return args.func(args)
    except (EdgeHMLError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

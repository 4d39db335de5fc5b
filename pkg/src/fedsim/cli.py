"""Command-line experiment runner.

Subcommands: ``run``, ``grid``, ``compare``, ``gen-data``.

Exit codes: 0 success, 1 a run or grid cell failed, 2 configuration error,
3 runs built on different datasets, 4 output directory exists (use --force).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import enum
import io
import os
import shutil
import sys

from . import __version__
from .config import GRID_REQUIRED, RUN_REQUIRED, ConfigFile, build_experiment, load_config, parse_model_entry, with_axes
from .data import dumps_scenes, generate_dataset, git_blob_hash
from .errors import ConfigError, FedSimError
from .models import ModelKind, ModelSpec
from .orchestrator import ExperimentConfig, ExperimentResult, prepare_data, run_centralized, run_experiment

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_DATASET_MISMATCH = 3
EXIT_EXISTS = 4

ROUND_HEADER = ["round", "strategy", "n_clients", "metric", "wall_seconds", "activated"]
SUMMARY_HEADER = ["n_clients", "strategy", "model", "final_metric", "total_seconds"]
GAP_HEADER = ["n_clients", "model", "reference_strategy", "reference_metric",
              "best_strategy", "best_metric", "gap"]
MANIFEST = "manifest.txt"


class OutputExists(FedSimError):
    pass


class DatasetMismatch(FedSimError):
    pass


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def model_label(spec: ModelSpec) -> str:
    if spec.kind is ModelKind.LINEAR_REGRESSION:
        return spec.kind.value
    return f"{spec.kind.value}:{spec.hidden}"


def metric_name(spec: ModelSpec) -> str:
    return "iou" if spec.kind is ModelKind.BOX_REGRESSOR else "mse"


def round_rows(result: ExperimentResult, n_clients: int) -> list[list[str]]:
    return [[str(r.round_index), r.strategy_tag.value, str(n_clients), _fmt(r.global_metric),
             f"{r.wall_seconds:.6f}", ";".join(map(str, r.activated_clients))]
            for r in result.records]


def write_csv(path: str, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_csv(path: str) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def prepare_out_dir(path: str, force: bool) -> None:
    if os.path.exists(path):
        if not force:
            raise OutputExists(f"output directory {path} exists; pass --force to replace it")
        if not os.path.isdir(path):
            raise OutputExists(f"{path} exists and is not a directory")
        if os.listdir(path) and not os.path.exists(os.path.join(path, MANIFEST)):
            raise OutputExists(f"refusing to replace {path}: it has no {MANIFEST}, so it was not written by fedsim")
        shutil.rmtree(path)
    os.makedirs(path)


def _flatten(prefix: str, obj) -> list[tuple[str, str]]:
    out = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(v):
            out += _flatten(key + ".", v)
        else:
            out.append((key, v.value if isinstance(v, enum.Enum) else str(v)))
    return out


class Manifest:
    """Plain ``key = value`` lines; ``file`` and ``series`` may repeat."""

    def __init__(self, command: str):
        self.entries: list[tuple[str, str]] = [("command", command), ("fedsim_version", __version__),
                                               ("started", _now())]

    def add(self, key: str, value) -> None:
        self.entries.append((key, str(value)))

    def add_series(self, relpath: str, model: str) -> None:
        self.add("file", relpath)
        self.add("series", f"{relpath} | {model}")

    def write(self, out_dir: str) -> None:
        self.add("finished", _now())
        with open(os.path.join(out_dir, MANIFEST), "w", encoding="utf-8") as f:
            for k, v in self.entries:
                f.write(f"{k} = {v}\n")


def read_manifest(run_dir: str) -> list[tuple[str, str]]:
    path = os.path.join(run_dir, MANIFEST)
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read manifest: {exc.strerror}") from None
    entries = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        if " = " not in line:
            raise ConfigError(f"{path}:{lineno}: malformed manifest line")
        k, v = line.split(" = ", 1)
        entries.append((k.strip(), v.strip()))
    return entries


def _config_entries(manifest: Manifest, exp: ExperimentConfig, cf: ConfigFile) -> None:
    manifest.add("config_path", os.path.abspath(cf.path))
    for k, v in cf.snapshot():
        manifest.add(f"config.{k}", v)
    for k, v in _flatten("effective.", exp):
        manifest.add(k, v)


# --- commands --------------------------------------------------------------------

def cmd_run(args) -> int:
    cf = load_config(args.config)
    cf.require(RUN_REQUIRED)
    exp = build_experiment(cf, seed=args.seed)
    mode = cf.get("experiment.mode", "federated")
    if args.centralized:
        mode = "both" if mode == "federated" else mode
    out = args.out or "runs/" + os.path.splitext(os.path.basename(args.config))[0]
    prepare_out_dir(out, args.force)

    manifest = Manifest("run")
    _config_entries(manifest, exp, cf)
    manifest.add("mode", mode)
    data = prepare_data(exp)
    manifest.add("dataset_hash", data.dataset_hash)
    manifest.add("metric", metric_name(exp.model))
    label = model_label(exp.model)
    if mode in ("federated", "both"):
        res = run_experiment(exp, data)
        write_csv(os.path.join(out, "rounds.csv"), ROUND_HEADER, round_rows(res, exp.n_clients))
        manifest.add_series("rounds.csv", label)
        print(f"{exp.strategy.value}: final {metric_name(exp.model)} {res.final_metric:.4f} "
              f"({res.total_wall_seconds:.1f}s)")
    if mode in ("centralized", "both"):
        res = run_centralized(exp, data)
        write_csv(os.path.join(out, "centralized.csv"), ROUND_HEADER, round_rows(res, exp.n_clients))
        manifest.add_series("centralized.csv", label)
        print(f"centralized: final {metric_name(exp.model)} {res.final_metric:.4f} "
              f"({res.total_wall_seconds:.1f}s)")
    manifest.write(out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_grid(args) -> int:
    cf = load_config(args.config)
    cf.require(GRID_REQUIRED)
    base = build_experiment(cf, seed=args.seed)
    counts = cf.get("grid.n_clients")
    strategies = cf.get("grid.strategies")
    model_entries = cf.get("grid.models") or [model_label(base.model)]
    for key, axis in (("grid.n_clients", counts), ("grid.strategies", strategies), ("grid.models", model_entries)):
        if not axis:
            raise cf.error(key, "axis is empty")
    try:
        models = [parse_model_entry(m, base.model.hidden) for m in model_entries]
    except ValueError as exc:
        raise cf.error("grid.models", str(exc)) from None
    if any(n < 1 for n in counts):
        raise cf.error("grid.n_clients", "client counts must be >= 1")
    centralized = cf.get("grid.centralized", False) or args.centralized
    out = args.out or "runs/" + os.path.splitext(os.path.basename(args.config))[0]
    prepare_out_dir(out, args.force)
    os.makedirs(os.path.join(out, "series"))

    manifest = Manifest("grid")
    _config_entries(manifest, base, cf)
    summary, failures = [], []
    hashes = set()
    metric_kinds = {metric_name(m) for m in models}

    def run_cell(fn, cell_cfg, data, strategy_name):
        label = model_label(cell_cfg.model)
        rel = f"series/{label.replace(':', '-h')}__{strategy_name}__n{cell_cfg.n_clients}.csv"
        try:
            cell_cfg.validate()
            res = fn(cell_cfg, data)
        except Exception as exc:  # a failed cell must not stop the grid
            failures.append([str(cell_cfg.n_clients), strategy_name, label, f"{type(exc).__name__}: {exc}"])
            print(f"cell n={cell_cfg.n_clients} {strategy_name} {label} FAILED: {exc}", file=sys.stderr)
            return
        write_csv(os.path.join(out, rel), ROUND_HEADER, round_rows(res, cell_cfg.n_clients))
        manifest.add_series(rel, label)
        summary.append([str(cell_cfg.n_clients), strategy_name, label, _fmt(res.final_metric),
                        f"{res.total_wall_seconds:.6f}"])
        print(f"n={cell_cfg.n_clients:<3d} {strategy_name:<12s} {label:<20s} "
              f"{metric_name(cell_cfg.model)}={res.final_metric:.4f}  {res.total_wall_seconds:.1f}s")

    for spec in models:
        for n in counts:
            cell0 = with_axes(base, n_clients=n, strategy=strategies[0], model=spec)
            try:
                cell0.validate()
                data = prepare_data(cell0)
            except Exception as exc:
                for s in strategies + (["centralized"] if centralized else []):
                    failures.append([str(n), s, model_label(cell0.model), f"{type(exc).__name__}: {exc}"])
                print(f"data for n={n} FAILED: {exc}", file=sys.stderr)
                continue
            hashes.add(data.dataset_hash)
            for s in strategies:
                run_cell(run_experiment, with_axes(base, n_clients=n, strategy=s, model=spec), data, s)
            if centralized:
                run_cell(run_centralized, cell0, data, "centralized")

    write_csv(os.path.join(out, "summary.csv"), SUMMARY_HEADER, summary)
    manifest.add("file", "summary.csv")
    if failures:
        write_csv(os.path.join(out, "failures.csv"), ["n_clients", "strategy", "model", "error"], failures)
        manifest.add("file", "failures.csv")
    manifest.add("dataset_hash", ",".join(sorted(hashes)))
    manifest.add("metric", ",".join(sorted(metric_kinds)))
    manifest.write(out)
    print(f"wrote {out} ({len(summary)} cells ok, {len(failures)} failed)")
    return EXIT_FAILED if failures else EXIT_OK


def _series_of(run_dir: str, entries) -> list[dict]:
    series = []
    for k, v in entries:
        if k != "series":
            continue
        rel, _, model = (p.strip() for p in v.partition("|"))
        rows = read_csv(os.path.join(run_dir, rel))
        if not rows:
            continue
        series.append({
            "strategy": rows[0]["strategy"],
            "n_clients": int(rows[0]["n_clients"]),
            "model": model,
            "metrics": [float(r["metric"]) for r in rows],
        })
    return series


def _peak(series_list, higher_better: bool):
    best = None
    for s in series_list:
        val = max(s["metrics"]) if higher_better else min(s["metrics"])
        if best is None or (val > best[1] if higher_better else val < best[1]):
            best = (s["strategy"], val)
    return best


def compare_runs(run_dirs: list[str]) -> list[list[str]]:
    """Gap table of the first run (reference) against the best of the others.

    The reference side uses the reference run's centralized series when it has
    any; the candidate side uses federated series when there are any. Both
    sides take the peak over rounds (max IoU / min MSE), and
    ``gap = reference_metric - best_metric``.
    """
    if len(run_dirs) < 2:
        raise ConfigError("compare needs at least two run directories")
    manifests = [read_manifest(d) for d in run_dirs]
    hashes = [dict(m).get("dataset_hash", "") for m in manifests]
    if len(set(hashes)) != 1 or not hashes[0] or "," in hashes[0]:
        detail = ", ".join(f"{d}: {h or '?'}" for d, h in zip(run_dirs, hashes))
        raise DatasetMismatch(f"runs were not built on one common dataset ({detail})")
    kinds = {dict(m).get("metric") for m in manifests}
    if len(kinds) != 1 or "," in next(iter(kinds)):
        raise DatasetMismatch(f"runs report different metrics: {sorted(map(str, kinds))}")
    higher_better = kinds.pop() == "iou"

    ref = _series_of(run_dirs[0], manifests[0])
    ref_central = [s for s in ref if s["strategy"] == "centralized"]
    ref = ref_central or ref
    cand = [s for d, m in zip(run_dirs[1:], manifests[1:]) for s in _series_of(d, m)]
    cand_fed = [s for s in cand if s["strategy"] != "centralized"]
    cand = cand_fed or cand

    rows = []
    keys = sorted({(s["n_clients"], s["model"]) for s in ref}, key=lambda k: (k[1], k[0]))
    for n, model in keys:
        r = _peak([s for s in ref if (s["n_clients"], s["model"]) == (n, model)], higher_better)
        c = _peak([s for s in cand if (s["n_clients"], s["model"]) == (n, model)], higher_better)
        if c is None:
            continue
        rows.append([str(n), model, r[0], _fmt(r[1]), c[0], _fmt(c[1]), _fmt(r[1] - c[1])])
    if not rows:
        raise ConfigError("no (n_clients, model) pair is present in both the reference and the other runs")
    return rows


def cmd_compare(args) -> int:
    rows = compare_runs(args.run_dirs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GAP_HEADER)
    w.writerows(rows)
    sys.stdout.write(buf.getvalue())
    if args.out:
        prepare_out_dir(args.out, args.force)
        with open(os.path.join(args.out, "gap.csv"), "w", encoding="utf-8", newline="") as f:
            f.write(buf.getvalue())
        manifest = Manifest("compare")
        for d in args.run_dirs:
            manifest.add("input", os.path.abspath(d))
        manifest.add("dataset_hash", dict(read_manifest(args.run_dirs[0]))["dataset_hash"])
        manifest.add("file", "gap.csv")
        manifest.write(args.out)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cf = load_config(args.config)
    exp = build_experiment(cf, seed=args.seed)
    d = exp.data
    out = args.out or "runs/dataset"
    prepare_out_dir(out, args.force)
    text = dumps_scenes(generate_dataset(d.n_scenes, d.d_in, d.regions, d.noise_sigma, exp.seed))
    with open(os.path.join(out, "dataset.txt"), "w", encoding="ascii", newline="\n") as f:
        f.write(text)
    manifest = Manifest("gen-data")
    _config_entries(manifest, exp, cf)
    manifest.add("dataset_hash", git_blob_hash(text))
    manifest.add("file", "dataset.txt")
    manifest.write(out)
    print(f"wrote {d.n_scenes} scenes to {out}/dataset.txt ({git_blob_hash(text)})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedsim", description="Federated learning simulation experiments.")
    p.add_argument("--version", action="version", version=f"fedsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, metavar="PATH")
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--force", action="store_true", help="replace an existing output directory")

    sp = sub.add_parser("run", help="one federated experiment (optionally with the centralized baseline)")
    common(sp)
    sp.add_argument("--seed", type=int, metavar="N", help="override experiment.seed")
    sp.add_argument("--centralized", action="store_true", help="also train the centralized baseline")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("grid", help="cross-product of client counts, strategies and models")
    common(sp)
    sp.add_argument("--seed", type=int, metavar="N")
    sp.add_argument("--centralized", action="store_true", help="add one centralized row per client count")
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("compare", help="gap table: first run (reference) vs the best of the others")
    sp.add_argument("run_dirs", nargs="+", metavar="RUN_DIR")
    common(sp, config=False)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("gen-data", help="export the synthetic dataset as text")
    common(sp)
    sp.add_argument("--seed", type=int, metavar="N")
    sp.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"fedsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetMismatch as exc:
        print(f"fedsim: {exc}", file=sys.stderr)
        return EXIT_DATASET_MISMATCH
    except OutputExists as exc:
        print(f"fedsim: {exc}", file=sys.stderr)
        return EXIT_EXISTS
    except FedSimError as exc:
        print(f"fedsim: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())

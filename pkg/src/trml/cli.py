"""Command line entry point: ``trml <subcommand> [--config FILE] [--<key> VALUE ...]``.

Every config key can be overridden by a flag of the same name; nested
synthetic-data keys use ``--synthetic.<key>``. Each run writes the fully
resolved config to ``<out>/config.resolved`` so the directory can be
re-run with ``--config <out>/config.resolved``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from .dataset import SyntheticConfig, build_missingness_plan, generate_synthetic, save_dataset
from .errors import ConfigError, DataError, DivergenceError, TrmlError
from .evaluation import (
    evaluate,
    export_projection_2d,
    export_similarity_heatmap,
    paired_ttest,
)
from .numkernel import Rng
from .trainer import TrainConfig, load_checkpoint, load_data, save_checkpoint, sweep_tau, train

COMMANDS = ("gen-data", "train", "eval", "ablate", "sweep-tau", "export-heatmap", "export-projection", "ttest")
VARIANTS = ("none", "no_sml_text", "no_sml_visual", "no_sml")

EXTRA_DEFAULTS = {
    "eval_split": "test",
    "n_seeds": 5,
    "tau_values": [0.1, 0.3, 0.5, 0.7, 0.9],
    "heatmap_ids": [],
    "heatmap_count": 8,
    "projection_split": "test",
}


def default_config() -> dict:
    cfg = TrainConfig().to_dict()
    cfg.update(json.loads(json.dumps(EXTRA_DEFAULTS)))
    return cfg


def _flat_keys(cfg: dict) -> dict:
    out = {}
    for k, v in cfg.items():
        if isinstance(v, dict):
            for k2, v2 in v.items():
                out[f"{k}.{k2}"] = v2
        else:
            out[k] = v
    return out


def _parse_value(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            if not raw.strip():
                return []
            items = [s.strip() for s in raw.split(",")]
            return [float(s) for s in items] if key == "tau_values" else items
        if default is None and raw.lower() in ("", "none", "null"):
            return None
        return raw
    except ValueError:
        raise ConfigError(f"bad value for --{key}: {raw!r}") from None


def _merge(base: dict, update: dict, where: str) -> dict:
    out = json.loads(json.dumps(base))
    for k, v in update.items():
        if k not in out:
            raise ConfigError(f"unknown config key {k!r} in {where}")
        if isinstance(out[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {k!r} must be a mapping")
            for k2 in v:
                if k2 not in out[k]:
                    raise ConfigError(f"unknown config key '{k}.{k2}' in {where}")
            out[k].update(v)
        else:
            out[k] = v
    return out


def resolve_config(config_path: Optional[str], overrides: dict) -> dict:
    cfg = default_config()
    if config_path:
        p = Path(config_path)
        if not p.exists():
            raise DataError(f"config file not found: {p}")
        try:
            loaded = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {p} is not valid JSON: {exc}") from None
        cfg = _merge(cfg, loaded, str(p))
    for key, value in overrides.items():
        if "." in key:
            outer, inner = key.split(".", 1)
            cfg[outer][inner] = value
        else:
            cfg[key] = value
    train_config(cfg).validate()
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig.from_dict({k: v for k, v in cfg.items() if k not in EXTRA_DEFAULTS})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trml", description="Robust multimodal learning workbench.")
    sub = parser.add_subparsers(dest="command", required=True)
    flat = _flat_keys(default_config())
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", default="out", help="output directory")
        if name == "eval" or name.startswith("export"):
            sp.add_argument("--checkpoint", help="checkpoint file (default <out>/checkpoint.trml)")
        if name == "ttest":
            sp.add_argument("a", help="first CSV")
            sp.add_argument("b", help="second CSV")
            sp.add_argument("--column", default="abs_error", help="numeric column to pair")
        for key in flat:
            sp.add_argument(f"--{key}", dest=f"cfg:{key}", default=None, metavar="VALUE")
    return parser


def _overrides(ns: argparse.Namespace) -> dict:
    flat = _flat_keys(default_config())
    out = {}
    for attr, raw in vars(ns).items():
        if attr.startswith("cfg:") and raw is not None:
            key = attr[4:]
            out[key] = _parse_value(key, raw, flat[key])
    return out


def _write_resolved(out: Path, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _rows_csv(header: List[str], rows: List[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _checkpoint_path(ns, out: Path) -> Path:
    return Path(ns.checkpoint) if ns.checkpoint else out / "checkpoint.trml"


def _context(cfg: dict):
    tc = train_config(cfg)
    ds = load_data(tc)
    plan = build_missingness_plan(ds, tc.setting, tc.victim, tc.p, tc.seed)
    return tc, ds, plan


def cmd_gen_data(cfg: dict, out: Path, ns) -> None:
    syn = SyntheticConfig(**cfg["synthetic"])
    ds = generate_synthetic(syn)
    path = out / "dataset.ndjson"
    save_dataset(ds, path)
    print(f"wrote {path} records={len(ds.records)} d={ds.d} task={ds.task}")


def cmd_train(cfg: dict, out: Path, ns) -> None:
    tc, ds, plan = _context(cfg)
    try:
        params, tlog = train(tc, ds, plan)
    except DivergenceError as exc:
        if exc.last_good is not None:
            save_checkpoint(exc.last_good, out / "checkpoint.last_good.trml", cfg)
        if exc.log is not None:
            (out / "train_log.csv").write_text(exc.log.to_csv())
        raise
    save_checkpoint(params, out / "checkpoint.trml", cfg)
    (out / "train_log.csv").write_text(tlog.to_csv())
    print(f"trained epochs={len(tlog.epochs)} best_epoch={tlog.best_epoch} tau={params.tau:.6f}")


def cmd_eval(cfg: dict, out: Path, ns) -> None:
    tc, ds, plan = _context(cfg)
    params = load_checkpoint(_checkpoint_path(ns, out))
    split = cfg["eval_split"]
    rep = evaluate(params, ds, plan, split)
    (out / f"metrics_{split}.csv").write_text(rep.to_csv())
    (out / f"predictions_{split}.csv").write_text(rep.predictions_csv())
    print(rep.summary())


def _metric_row(rep):
    return [rep.mae if rep.mae is not None else "", rep.acc2 if rep.acc2 is not None else "",
            rep.acc if rep.acc is not None else ""]


def cmd_ablate(cfg: dict, out: Path, ns) -> None:
    tc, ds, _ = _context(cfg)
    split = cfg["eval_split"]
    seeds = [tc.seed + k for k in range(int(cfg["n_seeds"]))]
    if len(seeds) < 2:
        raise ConfigError("ablate needs n_seeds >= 2 for paired t-tests")
    metric = "mae" if ds.task == "regression" else "acc"
    runs, values = [], {v: [] for v in VARIANTS}
    for variant in VARIANTS:
        for seed in seeds:
            run_cfg = TrainConfig.from_dict({**tc.to_dict(), "seed": seed, "ablation": variant})
            plan = build_missingness_plan(ds, tc.setting, tc.victim, tc.p, seed)
            params, _ = train(run_cfg, ds, plan)
            rep = evaluate(params, ds, plan, split)
            runs.append([variant, seed, *_metric_row(rep)])
            values[variant].append(getattr(rep, metric))
    (out / "ablation_runs.csv").write_text(_rows_csv(["variant", "seed", "mae", "acc2", "acc"], runs))

    summary = []
    for variant in VARIANTS:
        vals = np.array(values[variant])
        row = [variant, len(vals), float(np.mean(vals)), float(np.std(vals, ddof=1))]
        if variant == "none":
            row += ["", "", "", "", ""]
        else:
            full = np.array(values["none"])
            better = full < vals if metric == "mae" else full > vals
            tt = paired_ttest(values["none"], values[variant])
            row += [int(np.sum(better)), tt.mean_diff, tt.t, tt.df, tt.p_two_tailed]
        summary.append(row)
    header = ["variant", "n_seeds", f"mean_{metric}", f"std_{metric}", "full_better_count",
              "mean_diff_full_minus_variant", "t", "df", "p_two_tailed"]
    (out / "ablation_summary.csv").write_text(_rows_csv(header, summary))
    for row in summary:
        print(",".join(str(x) for x in row))


def cmd_sweep_tau(cfg: dict, out: Path, ns) -> None:
    tc, ds, _ = _context(cfg)
    rows = sweep_tau(tc, cfg["tau_values"], cfg["eval_split"], dataset=ds)
    header = ["tau", "n", "mae", "acc2", "acc"]
    table = [[r["tau"], r["n"]] + ["" if r[k] is None else r[k] for k in ("mae", "acc2", "acc")] for r in rows]
    (out / "tau_sweep.csv").write_text(_rows_csv(header, table))
    for r in table:
        print(",".join(str(x) for x in r))


def cmd_export_heatmap(cfg: dict, out: Path, ns) -> None:
    tc, ds, _ = _context(cfg)
    params = load_checkpoint(_checkpoint_path(ns, out))
    ids = list(cfg["heatmap_ids"])
    if not ids:
        pool = [ds.records[i].id for i in ds.split_indices(cfg["eval_split"]) if ds.records[i].present_frames > 0]
        k = min(int(cfg["heatmap_count"]), len(pool))
        ids = [pool[j] for j in sorted(Rng(tc.seed).child(7).choice(len(pool), k).tolist())]
    paths = export_similarity_heatmap(params, ds, ids, out / "exports")
    for p in paths.values():
        print(p)


def cmd_export_projection(cfg: dict, out: Path, ns) -> None:
    tc, ds, _ = _context(cfg)
    params = load_checkpoint(_checkpoint_path(ns, out))
    split = cfg["projection_split"]
    path = out / "exports" / f"projection_{split}.csv"
    export_projection_2d(params, ds, split, path)
    print(path)


def _read_column(path: str, column: str) -> List[float]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {p}")
    lines = [ln for ln in p.read_text().splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or column not in reader.fieldnames:
        raise DataError(f"{p}: no column {column!r}")
    try:
        return [float(row[column]) for row in reader]
    except ValueError as exc:
        raise DataError(f"{p}: non-numeric value in column {column!r} ({exc})") from None


def cmd_ttest(cfg: dict, out: Path, ns) -> None:
    a = _read_column(ns.a, ns.column)
    b = _read_column(ns.b, ns.column)
    if len(a) != len(b):
        raise DataError(f"series lengths differ: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise DataError("t-test needs at least 2 paired values")
    tt = paired_ttest(a, b)
    (out / "ttest.csv").write_text(_rows_csv(["column", "n", "mean_diff", "t", "df", "p_two_tailed"],
                                             [[ns.column, len(a), tt.mean_diff, tt.t, tt.df, tt.p_two_tailed]]))
    print(f"t={tt.t:.6g} df={tt.df} p={tt.p_two_tailed:.6g} mean_diff={tt.mean_diff:.6g}")


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep-tau": cmd_sweep_tau,
    "export-heatmap": cmd_export_heatmap,
    "export-projection": cmd_export_projection,
    "ttest": cmd_ttest,
}


def run_command(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = resolve_config(ns.config, _overrides(ns))
        out = Path(ns.out)
        _write_resolved(out, cfg)
        HANDLERS[ns.command](cfg, out, ns)
    except TrmlError as exc:
        msg = " ".join(str(exc).split())
        print(f"error code={exc.exit_code} kind={type(exc).__name__} message={json.dumps(msg)}", file=sys.stderr)
        return exc.exit_code
    except (TypeError, ValueError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error code=2 kind=ConfigError message={json.dumps(msg)}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    logging.basicConfig(level=logging.WARNING)
    sys.exit(run_command())

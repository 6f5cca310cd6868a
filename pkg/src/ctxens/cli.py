"""Command-line front end: dataset generation, experiment runs, verification.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
All files are written atomically (temp file + rename) inside the declared
output directory, and every run emits a manifest listing each output file
with its content checksum.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baselearners import BaseKind, BasePredictorSpec
from .constraints import ConstraintKind
from .core import SplitSpec, frame_to_rows
from .datagen import CSV_COLUMNS, SyntheticSpec, generate_frame
from .errors import ConfigInvalid, CtxensError
from .pipeline import (
    ExperimentConfig,
    MetaKind,
    NORMALIZATION_NOTE,
    WEIGHT_LEARNING_METAS,
    run_experiment,
)
from .verify import SUITES

OUTPUT_ROOT_ENV = "CTXENS_OUT_ROOT"


def _resolve_out(path: str) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    p = Path(path)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, payload: dict, files: list[Path]) -> None:
    payload = dict(payload)
    payload["versions"] = {"ctxens": __version__, "numpy": np.__version__}
    payload["outputs"] = {f.name: _sha256(f) for f in files}
    _atomic_write(out_dir / "manifest.json", json.dumps(payload, indent=2) + "\n")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    try:
        spec = SyntheticSpec(
            length=args.length,
            mix=args.mix,
            seed=args.seed,
            noise_sigma=args.noise_sigma,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    t0 = time.monotonic()
    frame = generate_frame(spec)
    out_dir = _resolve_out(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"y{args.mix}.csv"

    keep = [frame.columns.index(c) for c in CSV_COLUMNS]
    header, rows = frame_to_rows(
        type(frame)(frame.values, frame.side_info[:, keep], CSV_COLUMNS)
    )
    lines = [",".join(header)] + [",".join(r) for r in rows]
    _atomic_write(csv_path, "\n".join(lines) + "\n")
    _write_manifest(
        out_dir,
        {
            "command": "synth",
            "spec": vars(spec),
            "wall_seconds": round(time.monotonic() - t0, 3),
        },
        [csv_path],
    )
    print(f"wrote {csv_path} ({len(frame)} rows)")
    return 0


# ---------------------------------------------------------------------------
# experiment config files
# ---------------------------------------------------------------------------

def _typed(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    return value


def _comma_list(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def parse_config_file(path: Path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh, source=str(path))
    except OSError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from None
    except configparser.Error as exc:
        # configparser errors carry line numbers in their message
        raise ConfigInvalid(f"{path}: {exc}") from None

    def need(section: str, key: str) -> str:
        if not parser.has_option(section, key):
            raise ConfigInvalid(f"{path}: missing [{section}] {key}")
        return parser.get(section, key)

    for section in ("experiment", "data", "split"):
        if not parser.has_section(section):
            raise ConfigInvalid(f"{path}: missing [{section}] section")

    exp = parser["experiment"]
    meta = MetaKind.parse(need("experiment", "meta"))
    constraint = None
    if exp.get("constraint"):
        try:
            constraint = ConstraintKind.parse(exp["constraint"])
        except ValueError as exc:
            raise ConfigInvalid(f"{path}: {exc}") from None

    data = parser["data"]
    source_kind = need("data", "source").strip().lower()
    if source_kind == "synthetic":
        try:
            data_source: SyntheticSpec | str = SyntheticSpec(
                length=data.getint("length", 730),
                mix=data.get("mix", "a").strip().lower(),
                seed=data.getint("seed", 0),
                noise_sigma=data.getfloat("noise_sigma", 1.0),
            )
        except ValueError as exc:
            raise ConfigInvalid(f"{path}: [data] {exc}") from None
    elif source_kind == "csv":
        raw = need("data", "path")
        p = Path(raw)
        data_source = str(p if p.is_absolute() else path.parent / p)
    else:
        raise ConfigInvalid(f"{path}: [data] source must be synthetic or csv")

    try:
        split_spec = SplitSpec(
            t1=int(need("split", "t1")),
            t_end=int(need("split", "t_end")),
            t2=int(need("split", "t2")),
        )
    except CtxensError as exc:
        raise ConfigInvalid(f"{path}: [split] {exc}") from None

    bases = []
    for section in parser.sections():
        if not section.startswith("base:"):
            continue
        name = section.split(":", 1)[1]
        sec = parser[section]
        kind = BaseKind.parse(need(section, "kind"))
        lags = tuple(int(v) for v in _comma_list(sec.get("lags", "")))
        exog = _comma_list(sec.get("exog", ""))
        hyper = {
            k: _typed(v)
            for k, v in sec.items()
            if k not in ("kind", "lags", "exog")
        }
        bases.append(
            BasePredictorSpec(
                name=name, kind=kind, lags=lags, exog_columns=exog, hyperparams=hyper
            )
        )

    meta_hyper = {}
    if parser.has_section("meta_hyperparams"):
        meta_hyper = {k: _typed(v) for k, v in parser["meta_hyperparams"].items()}

    return ExperimentConfig(
        data_source=data_source,
        split=split_spec,
        bases=tuple(bases),
        meta=meta,
        constraint=constraint,
        meta_hyperparams=meta_hyper,
        seed=exp.getint("seed", 0),
        output_dir=need("experiment", "output_dir"),
        extra_side_columns=_comma_list(exp.get("extra_side_columns", "")),
        one_hot_columns=_comma_list(exp.get("one_hot_columns", "")),
    )


def _write_result_files(config: ExperimentConfig, result, t0: float) -> Path:
    out_dir = _resolve_out(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    first = result.records[0]
    base_names = [f"yhat_{n}" for n in _base_names_of(config)]
    header = ["t", "y", *base_names]
    if first.weights is not None:
        header += [f"w_{n}" for n in _base_names_of(config)]
    header.append("yhat_ensemble")
    lines = [",".join(header)]
    for rec in result.records:
        row = [str(rec.t), repr(rec.y)]
        row += [repr(v) for v in rec.base_preds]
        if rec.weights is not None:
            row += [repr(v) for v in rec.weights]
        row.append(repr(rec.prediction))
        lines.append(",".join(row))
    pred_path = out_dir / "predictions.csv"
    _atomic_write(pred_path, "\n".join(lines) + "\n")

    cum_lines = ["t,value"] + [f"{t},{v!r}" for t, v in result.curve.points]
    cum_path = out_dir / "cumerr.csv"
    _atomic_write(cum_path, "\n".join(cum_lines) + "\n")

    summary = (
        f"final_cumulative_error: {result.final_cumulative_error!r}\n"
        f"total_squared_loss: {result.curve.final_total!r}\n"
        f"config_hash: {result.provenance['config_hash']}\n"
        f"seed: {config.seed}\n"
        f"metric_note: {NORMALIZATION_NOTE}\n"
    )
    if config.meta not in WEIGHT_LEARNING_METAS:
        summary += "meta_note: reference baseline (extension beyond the studied ensembles)\n"
    sum_path = out_dir / "summary.txt"
    _atomic_write(sum_path, summary)

    _write_manifest(
        out_dir,
        {
            "command": "run",
            "config": config.canonical(),
            "config_hash": result.provenance["config_hash"],
            "seed": config.seed,
            "wall_seconds": round(time.monotonic() - t0, 3),
        },
        [pred_path, cum_path, sum_path],
    )
    return out_dir


def _base_names_of(config: ExperimentConfig) -> list[str]:
    return [b.name for b in config.bases]


def cmd_run(args) -> int:
    target = Path(args.config)
    if target.is_dir():
        paths = sorted(target.glob("*.cfg"))
        if not paths:
            print(f"error: no .cfg files in {target}", file=sys.stderr)
            return 2
    else:
        paths = [target]

    configs = []
    for p in paths:
        try:
            configs.append((p, parse_config_file(p)))
        except ConfigInvalid as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2

    for p, config in configs:
        t0 = time.monotonic()
        try:
            _, result = run_experiment(config)
        except CtxensError as exc:
            print(f"error [{type(exc).__name__}] {p}: {exc}", file=sys.stderr)
            return 1
        out_dir = _write_result_files(config, result, t0)
        print(
            f"{p.name}: final cumulative error "
            f"{result.final_cumulative_error:.6g} -> {out_dir}"
        )
    return 0


def cmd_verify(args) -> int:
    suite = SUITES.get(args.suite)
    if suite is None:
        print(
            f"error: unknown suite {args.suite!r}; expected one of "
            f"{', '.join(sorted(SUITES))}",
            file=sys.stderr,
        )
        return 2
    results = suite()
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxens",
        description="Side-information-aware ensemble forecasting toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    p_synth.add_argument("--mix", choices=("a", "b", "c"), required=True)
    p_synth.add_argument("--length", type=int, default=730)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--noise-sigma", type=float, default=1.0)
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.set_defaults(func=cmd_synth)

    p_run = sub.add_parser("run", help="run experiment config file or directory")
    p_run.add_argument("config", help="config file, or directory of .cfg files")
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify", help="run a property-check suite")
    p_verify.add_argument("suite", help="one of: grad, oracle, order")
    p_verify.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

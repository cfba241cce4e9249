"""Command-line entry point: ``rtmemu {gen,train,eval,predict,bench,invert,lut}``.

Exit codes: 0 success, 2 configuration/usage error, 3 I/O or file-format
error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import emulator as emu
from . import lut as lut_mod
from . import retrieval
from .config import ConfigError, RunConfig, load_config
from .lut import LutFormatError, LutTooLarge
from .nn import ModelFormatError
from .oracle import STATE_FIELDS
from .sampling import (N_ATM, DatasetFormatError, generate_dataset, read_dataset, sample_states,
                       write_dataset)

log = logging.getLogger("rtmemu")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

# wall-clock fields are kept out of the deterministic artifacts and written to timing.json
TIMING_KEYS = ("seconds", "train_seconds")


class UsageError(Exception):
    pass


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _provenance(cfg: RunConfig) -> dict:
    return {"config": cfg.echo(), "seed": cfg.seed}


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else repr(float(v)) for v in row])
    path.write_text(buf.getvalue())


def _split_timing(meta: dict) -> tuple[dict, dict]:
    meta = json.loads(json.dumps(meta))
    timing = {"train_seconds": meta.pop("train_seconds", None),
              "channel_seconds": [r.pop("seconds", None) for r in meta.get("reports", [])]}
    return meta, timing


def _read_timing(model_path: Path) -> dict:
    p = model_path.with_name("timing.json")
    return json.loads(p.read_text()) if p.exists() else {}


def cmd_gen(cfg: RunConfig, args) -> int:
    s = cfg.sampling
    grid = s.grid()
    ranges = s.ranges.build()
    X = sample_states(ranges, s.n, grid.k, s.method, cfg.seed)
    meta = {"ranges": ranges.to_dict(), "method": s.method, **_provenance(cfg)}
    ds = generate_dataset(X, grid, cfg.oracle.build(), s.fractions, cfg.seed, meta)
    out = Path(args.out)
    csv_path, json_path = write_dataset(ds, out / "dataset.csv")
    log.info("wrote %s (%d rows, %d channels) and %s", csv_path, ds.n, ds.k, json_path)
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    ds = read_dataset(args.data)
    opts = cfg.network.train_options(cfg.seed)
    F = emu.train_emulator(ds, opts, cfg.network.hidden())
    meta, timing = _split_timing(F.meta)
    meta.update(_provenance(cfg))
    F = replace(F, meta=meta)
    out = Path(args.out)
    emu.save(F, out / "model.json")
    val = emu.evaluate(F, ds, "val")
    reports = meta["reports"]
    metrics = {
        "channels": [{"channel": i, "wavelength": float(ds.grid.lambdas[i]),
                      "epochs_run": r["epochs_run"], "converged": r["converged"],
                      "best_val_nmae": r["best_val_nmae"]} for i, r in enumerate(reports)],
        "not_converged": [i for i, r in enumerate(reports) if not r["converged"]],
        "val": val.to_dict(),
        **_provenance(cfg),
    }
    _write_json(out / "train_metrics.json", metrics)
    _write_json(out / "timing.json", timing)
    if metrics["not_converged"]:
        log.warning("channels %s reached max epochs or patience without meeting tol",
                    metrics["not_converged"])
    log.info("validation nMAE %.4g", val.overall_nmae)
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    F = emu.load(args.model)
    ds = read_dataset(args.data)
    rows = ds.rows(args.split)
    if rows.size == 0:
        raise UsageError(f"split {args.split!r} is empty")
    m = emu.evaluate(F, ds, args.split)
    out = Path(args.out)
    _write_json(out / "metrics.json", {**m.to_dict(), **_provenance(cfg)})
    if not 0 <= args.sample < rows.size:
        raise UsageError(f"--sample {args.sample} out of range for {rows.size} {args.split} rows")
    r = rows[args.sample]
    pred = emu.predict_batch(F, ds.states([r]), ds.surfaces([r]))[0]
    _write_csv(out / "spectrum.csv", ["wavelength_um", "ground_truth", "predicted"],
               zip(ds.grid.lambdas, ds.Y[r], pred))
    _write_json(out / "spectrum.json", {"dataset_row": int(r), "split": args.split,
                                        **_provenance(cfg)})
    log.info("%s nMAE %.4g (max channel %.4g)", args.split, m.overall_nmae, m.max_nmae)
    return EXIT_OK


def _read_table(path, required_prefixes):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetFormatError(f"{path}: empty file")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}: line {lineno}: {exc}") from None
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return header, data


def _columns(header, data, names, path):
    missing = [n for n in names if n not in header]
    if missing:
        raise DatasetFormatError(f"{path}: missing columns {missing}")
    return data[:, [header.index(n) for n in names]]


def cmd_predict(cfg: RunConfig, args) -> int:
    F = emu.load(args.model)
    header, data = _read_table(args.input, ())
    states = _columns(header, data, list(STATE_FIELDS), args.input)
    rho = _columns(header, data, [f"rho_s_{i}" for i in range(F.k)], args.input)
    pred = emu.predict_batch(F, states, rho)
    out = Path(args.out)
    _write_csv(out / "predictions.csv", [f"y_{i}" for i in range(F.k)], pred)
    _write_json(out / "predictions.json", {"input": str(args.input), **_provenance(cfg)})
    return EXIT_OK


def _build_lut(cfg: RunConfig, grid):
    return lut_mod.build_lut(cfg.sampling.ranges.build(), cfg.lut.knots, grid, cfg.oracle.build(),
                             cfg.lut.memory_cap_bytes)


def cmd_lut(cfg: RunConfig, args) -> int:
    grid = cfg.sampling.grid()
    try:
        table = _build_lut(cfg, grid)
    except LutTooLarge as exc:
        out = Path(args.out)
        _write_json(out / "lut.json", {"refused": True, "required_bytes": exc.nbytes,
                                       "cap_bytes": exc.cap, **_provenance(cfg)})
        log.error("%s", exc)
        return EXIT_USAGE
    out = Path(args.out)
    lut_mod.save(table, out / "lut.bin")
    info = {k: v for k, v in table.info.items() if k != "precompute_seconds"}
    _write_json(out / "lut.json", {**info, "refused": False, **_provenance(cfg)})
    _write_json(out / "lut_timing.json", {"precompute_seconds": table.info["precompute_seconds"]})
    log.info("lookup table: %d spectra, %d bytes", info["precompute_spectra"], info["memory_bytes"])
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args) -> int:
    model_path = Path(args.model)
    F = emu.load(model_path)
    F.meta["train_seconds"] = _read_timing(model_path).get("train_seconds") or 0.0
    ds = read_dataset(args.data)
    rows = ds.rows("test")
    if rows.size < cfg.bench.n_queries:
        rows = np.concatenate([rows, ds.rows("val"), ds.rows("train")])
    rows = rows[:cfg.bench.n_queries]
    if rows.size < cfg.bench.n_queries:
        raise UsageError(f"dataset has {rows.size} rows, bench needs {cfg.bench.n_queries}")
    table = lut_mod.load(args.lut) if args.lut else _build_lut(cfg, ds.grid)
    engines, reference = bench_mod.standard_engines(ds.grid, cfg.oracle.build(), F, table,
                                                    cfg.bench.quadrature_depth)
    # lookup table with about as many oracle spectra as the emulator's training set
    matched = max(2, int(np.floor(ds.n ** (1.0 / 5) + 1e-9)))
    if all(ax.size != matched for ax in table.axes):
        m_cfg = cfg.model_copy(deep=True)
        m_cfg.lut.knots = matched
        engines.append(bench_mod.lut_engine(_build_lut(m_cfg, ds.grid)))
    report = bench_mod.run_bench(ds.states(rows), ds.surfaces(rows), engines, reference,
                                 cfg.bench.repeats, cfg.seed, _provenance(cfg))
    report.engines["training_set"] = {"precompute_spectra": ds.n}
    out = Path(args.out)
    (out / "bench.json").write_text(report.to_json() + "\n")
    (out / "bench.csv").write_text(report.to_csv())
    for name, e in report.engines.items():
        if "queries_per_sec" in e:
            log.info("%-18s %12.1f q/s  nMAE %.3g", name, e["queries_per_sec"], e["nmae_vs_oracle"])
    return EXIT_OK


def cmd_invert(cfg: RunConfig, args) -> int:
    F = emu.load(args.model)
    header, data = _read_table(args.spectra, ())
    Y = _columns(header, data, [f"y_{i}" for i in range(F.k)], args.spectra)
    rcfg = cfg.retrieval.build(cfg.sampling.ranges.build())
    if args.mode == "known":
        if args.state:
            try:
                s = [float(v) for v in args.state.split(",")]
            except ValueError:
                raise UsageError("--state must be four comma-separated numbers") from None
            if len(s) != N_ATM:
                raise UsageError("--state must be four comma-separated numbers")
            states = np.tile(s, (Y.shape[0], 1))
        elif all(f in header for f in STATE_FIELDS):
            states = _columns(header, data, list(STATE_FIELDS), args.spectra)
        else:
            raise UsageError("known mode needs --state or mu0,tau550,alpha,wvap columns")
    sigma = cfg.retrieval.noise_sigma
    results = []
    for i, y in enumerate(Y):
        y = retrieval.add_noise(y, sigma, cfg.seed + i)
        if args.mode == "known":
            results.append(retrieval.invert_reflectance(y, states[i], F, rcfg))
        else:
            results.append(retrieval.invert_joint(y, F, rcfg))

    out = Path(args.out)
    head = [f"rho_s_hat_{i}" for i in range(F.k)]
    if args.mode == "joint":
        head += [f"{f}_hat" for f in STATE_FIELDS]
    head += ["iterations", "residual_norm", "converged"]
    rows = []
    for r in results:
        row = list(r.rho_s_hat)
        if args.mode == "joint":
            row += list(r.state_hat)
        row += [str(r.iterations), r.residual_norm, str(int(r.converged))]
        rows.append(row)
    _write_csv(out / "results.csv", head, rows)
    resid = np.array([r.residual_norm for r in results])
    summary = {
        "mode": args.mode,
        "n_spectra": len(results),
        "convergence_rate": float(np.mean([r.converged for r in results])) if results else 0.0,
        "residual_norm": {"min": float(resid.min()), "median": float(np.median(resid)),
                          "max": float(resid.max())} if results else {},
        "noise_sigma": sigma,
        "flagged_channels": [[j for j, f in enumerate(r.flags) if f != "ok"] for r in results],
        **_provenance(cfg),
    }
    _write_json(out / "summary.json", summary)
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
    "bench": cmd_bench, "invert": cmd_invert, "lut": cmd_lut,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides config)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="config override, e.g. network.lr=1e-3")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rtmemu", description="Neural radiative transfer emulator")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="sample states and write an oracle dataset")
    t = sub.add_parser("train", parents=[common], help="train the per-channel emulator")
    t.add_argument("--data", type=Path, required=True)
    e = sub.add_parser("eval", parents=[common], help="evaluate a model on a dataset split")
    e.add_argument("--model", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--split", choices=["train", "val", "test"], default="test")
    e.add_argument("--sample", type=int, default=0, help="row within the split for spectrum.csv")
    pr = sub.add_parser("predict", parents=[common], help="predict spectra for states in a CSV")
    pr.add_argument("--model", type=Path, required=True)
    pr.add_argument("--input", type=Path, required=True)
    b = sub.add_parser("bench", parents=[common], help="time oracle, emulator and LUT")
    b.add_argument("--model", type=Path, required=True)
    b.add_argument("--data", type=Path, required=True)
    b.add_argument("--lut", type=Path)
    i = sub.add_parser("invert", parents=[common], help="retrieve surface reflectance")
    i.add_argument("--model", type=Path, required=True)
    i.add_argument("--spectra", type=Path, required=True)
    i.add_argument("--mode", choices=["known", "joint"], default="known")
    i.add_argument("--state", help="mu0,tau550,alpha,wvap for known mode")
    sub.add_parser("lut", parents=[common], help="build and save a lookup table")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"rtmemu: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (emu.ChannelTrainingError, retrieval.RetrievalAborted, FloatingPointError) as exc:
        print(f"rtmemu: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DatasetFormatError, ModelFormatError, LutFormatError) as exc:
        print(f"rtmemu: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"rtmemu: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

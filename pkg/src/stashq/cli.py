"""Experiment driver: train, estimate, sweep, report.

All artifacts are deterministic byte-for-byte for a fixed config and
seed: JSON is emitted with sorted keys and no timestamps, CSV rows
follow input order, and SVG rendering pins the hash salt and strips the
date metadata.

Artifact schemas
    train    metrics.jsonl (one epoch record per line), summary.json,
             costs.csv (long: method,precision_setup,metric,value)
    estimate estimate.csv (wide: method,precision_setup,arith_ratio,dram_ratio)
    sweep    sweep.csv (long schema, grid rows in input order)
    report   loss_curves.svg, roofline.svg from a train output directory
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from .config import (
    METHODS,
    OUT_DIR_ENV,
    ConfigError,
    RunConfig,
    build_precision,
    resolve,
)
from .costmodel import (
    CostLedger,
    estimate_static,
    fit_phase_durations,
    normalize,
    roofline,
)
from .qtraining import PrecisionConfig, make_copy_task, train_run

LONG_HEADER = ("method", "precision_setup", "metric", "value")
WIDE_HEADER = ("method", "precision_setup", "arith_ratio", "dram_ratio")

# the standard cost-table row matrix: method with its published setups
STANDARD_ROWS = (
    ("floating-point", (32, 32, 32, 32)),
    ("fixed", (32, 32, 32, 32)),
    ("fixed", (16, 16, 16, 16)),
    ("bfp", (32, 32, 32, 32)),
    ("bfp", (16, 16, 16, 16)),
    ("stashing-fixed", (16, 4, 4, 16)),
    ("stashing-bfp", (16, 4, 4, 16)),
    ("dsq", None),
)


def _fixed32_baseline(cfg: RunConfig, steps: float) -> CostLedger:
    return estimate_static(cfg.spec, PrecisionConfig.uniform("fixed", 32),
                           steps=steps, table=cfg.table, profile=cfg.profile)


def _setup_token(setup: tuple[int, int, int, int] | None) -> str:
    if setup is None:
        return "-"
    return "[" + ", ".join(str(b) for b in setup) + "]"


def _write_csv(path: str, header: tuple[str, ...], rows) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _ensure_out(cfg: RunConfig) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def cmd_train(cfg: RunConfig) -> int:
    out = _ensure_out(cfg)
    spec = cfg.spec
    task = make_copy_task(spec.vocab, spec.seq_len, cfg.n_samples, cfg.seed,
                          variant=cfg.variant)
    if cfg.method == "dsq":
        schedule_or_cfg = cfg.schedule()
        setup_token = "-"
    else:
        precision = cfg.precision()
        schedule_or_cfg = precision
        setup_token = precision.setup_token()
    report = train_run(spec, task, schedule_or_cfg, cfg.epochs, cfg.seed,
                       batch_size=cfg.batch_size, lr_base=cfg.lr_base,
                       warmup=cfg.warmup, table=cfg.table, profile=cfg.profile)

    verdict = "Failed" if report.summary["verdict"] == "failed" else "ok"
    sequences = report.summary["total_sequences"]
    if sequences > 0:
        baseline = _fixed32_baseline(cfg, steps=sequences)
        arith_ratio, dram_ratio = normalize(report.ledger, baseline)
        point = roofline(report.ledger, cfg.peak_ops_per_sec,
                         cfg.bandwidth_bytes_per_sec)
        intensity, attainable = point.operational_intensity, point.attainable_performance
    else:
        arith_ratio = dram_ratio = intensity = attainable = None

    with open(os.path.join(out, "metrics.jsonl"), "w") as handle:
        for record in report.records:
            handle.write(json.dumps({
                "epoch": record.epoch,
                "train_loss": record.train_loss,
                "valid_loss": record.valid_loss,
                "token_acc": record.token_acc,
                "config": record.config,
                "ledger": record.ledger,
            }, sort_keys=True) + "\n")

    summary = dict(report.summary)
    summary["verdict"] = verdict
    summary["method"] = cfg.method
    summary["precision_setup"] = setup_token
    summary["arith_ratio"] = arith_ratio
    summary["dram_ratio"] = dram_ratio
    summary["operational_intensity"] = intensity
    summary["attainable_performance"] = attainable
    with open(os.path.join(out, "summary.json"), "w") as handle:
        json.dump(summary, handle, sort_keys=True, indent=2)
        handle.write("\n")

    metrics = [
        ("final_token_acc", summary["final_token_acc"]),
        ("final_valid_loss", summary["final_valid_loss"]),
        ("best_valid_loss", summary["best_valid_loss"]),
        ("verdict", verdict),
        ("arith_ratio", arith_ratio),
        ("dram_ratio", dram_ratio),
        ("mac_units", summary["mac_units"]),
        ("dram_bits", summary["dram_bits"]),
        ("total_sequences", sequences),
        ("operational_intensity", intensity),
        ("attainable_performance", attainable),
    ]
    rows = [(cfg.method, setup_token, name, "-" if value is None else value)
            for name, value in metrics]
    _write_csv(os.path.join(out, "costs.csv"), LONG_HEADER, rows)
    print(f"wrote {out}/metrics.jsonl, summary.json, costs.csv "
          f"(verdict {verdict}, final acc {summary['final_token_acc']:.4f})")
    return 0


def _estimate_rows(cfg: RunConfig):
    if cfg.estimate_methods:
        return [row for method in cfg.estimate_methods
                for row in STANDARD_ROWS if row[0] == method]
    if cfg.method_given:
        if cfg.method == "dsq":
            return [("dsq", None)]
        return [(cfg.method, cfg.precision().bits)]
    return list(STANDARD_ROWS)


def cmd_estimate(cfg: RunConfig) -> int:
    out = _ensure_out(cfg)
    baseline = _fixed32_baseline(cfg, steps=1.0)
    rows = []
    for method, setup in _estimate_rows(cfg):
        if method == "dsq":
            ladder = cfg.schedule()
            fit = fit_phase_durations(cfg.table, cfg.spec, list(ladder.configs),
                                      cfg.estimate_target, profile=cfg.profile)
            trace = list(zip(ladder.configs, fit.fractions))
            ledger = estimate_static(cfg.spec, trace, steps=1.0,
                                     table=cfg.table, profile=cfg.profile)
        else:
            precision = build_precision(method, setup)
            ledger = estimate_static(cfg.spec, precision, steps=1.0,
                                     table=cfg.table, profile=cfg.profile)
        arith_ratio, dram_ratio = normalize(ledger, baseline)
        rows.append((method, _setup_token(setup), arith_ratio, dram_ratio))
    path = os.path.join(out, "estimate.csv")
    _write_csv(path, WIDE_HEADER, rows)
    for method, token, arith_ratio, dram_ratio in rows:
        print(f"{method:16s} {token:18s} arith {arith_ratio:7.4f}  dram {dram_ratio:7.4f}")
    print(f"wrote {path}")
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    out = _ensure_out(cfg)
    spec = cfg.spec
    task = make_copy_task(spec.vocab, spec.seq_len, cfg.n_samples, cfg.seed,
                          variant=cfg.variant)
    baseline = _fixed32_baseline(cfg, steps=1.0)
    rows = []
    for setup in cfg.sweep_setups:
        token = _setup_token(setup)
        try:
            precision = build_precision(cfg.sweep_method, setup)
        except ConfigError as exc:
            rows.append((cfg.sweep_method, token, "verdict", "Failed"))
            rows.append((cfg.sweep_method, token, "error", str(exc)))
            continue
        report = train_run(spec, task, precision, cfg.epochs, cfg.seed,
                           batch_size=cfg.batch_size, lr_base=cfg.lr_base,
                           warmup=cfg.warmup, table=cfg.table, profile=cfg.profile)
        ledger = estimate_static(spec, precision, steps=1.0,
                                 table=cfg.table, profile=cfg.profile)
        arith_ratio, dram_ratio = normalize(ledger, baseline)
        verdict = "Failed" if report.summary["verdict"] == "failed" else "ok"
        rows.append((cfg.sweep_method, token, "token_acc",
                     report.summary["final_token_acc"]))
        rows.append((cfg.sweep_method, token, "verdict", verdict))
        rows.append((cfg.sweep_method, token, "arith_ratio", arith_ratio))
        rows.append((cfg.sweep_method, token, "dram_ratio", dram_ratio))
        print(f"{cfg.sweep_method} {token}: acc "
              f"{report.summary['final_token_acc']:.4f}, verdict {verdict}")
    path = os.path.join(out, "sweep.csv")
    _write_csv(path, LONG_HEADER, rows)
    print(f"wrote {path}")
    return 0


def _load_metrics(out: str) -> list[dict]:
    path = os.path.join(out, "metrics.jsonl")
    if not os.path.exists(path):
        raise ConfigError(f"no metrics.jsonl under {out}; run train first")
    with open(path) as handle:
        return [json.loads(line) for line in handle if line.strip()]


def _ledger_from_dict(data: dict) -> CostLedger:
    dram = {}
    for key, bits in data["dram_bits"].items():
        klass, direction = key.split("/")
        dram[(klass, direction)] = bits
    return CostLedger(mac_units=data["mac_units"], mac_count=data["mac_count"],
                      dram_bits=dram)


def cmd_report(cfg: RunConfig) -> int:
    import matplotlib

    matplotlib.use("svg")
    matplotlib.rcParams["svg.hashsalt"] = "stashq"
    import matplotlib.pyplot as plt
    import numpy as np

    records = _load_metrics(cfg.out)
    epochs = [r["epoch"] for r in records]
    valid = [r["valid_loss"] for r in records]
    train = [(r["epoch"], r["train_loss"]) for r in records
             if r["train_loss"] is not None]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, valid, marker="o", label="valid loss")
    if train:
        ax.plot([e for e, _ in train], [l for _, l in train],
                marker="s", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("training curves")
    ax.legend()
    fig.tight_layout()
    loss_path = os.path.join(cfg.out, "loss_curves.svg")
    fig.savefig(loss_path, metadata={"Date": None})
    plt.close(fig)

    ledger = _ledger_from_dict(records[-1]["ledger"])
    peak = cfg.peak_ops_per_sec
    bandwidth = cfg.bandwidth_bytes_per_sec
    fig, ax = plt.subplots(figsize=(6, 4))
    knee = peak / bandwidth
    intensities = np.logspace(np.log10(max(knee * 1e-3, 1e-6)),
                              np.log10(knee * 1e3), 200)
    ax.loglog(intensities, np.minimum(peak, bandwidth * intensities),
              label="roofline")
    if ledger.total_dram_bits() > 0:
        point = roofline(ledger, peak, bandwidth)
        ax.loglog([point.operational_intensity], [point.attainable_performance],
                  marker="o", linestyle="none", label="this run")
    ax.set_xlabel("operational intensity (MACs per byte)")
    ax.set_ylabel("attainable MACs per second")
    ax.set_title("roofline")
    ax.legend()
    fig.tight_layout()
    roof_path = os.path.join(cfg.out, "roofline.svg")
    fig.savefig(roof_path, metadata={"Date": None})
    plt.close(fig)
    print(f"wrote {loss_path} and {roof_path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stashq",
        description="Low-precision training simulator with analytic cost model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("train", "train a toy model and write metrics/summary/cost artifacts"),
        ("estimate", "static cost table normalized to fixed-point 32-bit"),
        ("sweep", "train every setup in a grid and tabulate the results"),
        ("report", "render SVG loss curves and roofline from train output"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", help="INI run config path")
        cmd.add_argument("--seed", type=int, help="RNG seed (overrides config)")
        cmd.add_argument("--out", help=f"output directory (default ${OUT_DIR_ENV} or ./runs)")
        cmd.add_argument("--method", choices=METHODS, help="method row to run")
        cmd.add_argument("--setup", help="four widths, e.g. 16,4,4,16")
        cmd.add_argument("--ladder", help="INI ladder file for dsq")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = resolve(args.command, args)
        handler = {
            "train": cmd_train,
            "estimate": cmd_estimate,
            "sweep": cmd_sweep,
            "report": cmd_report,
        }[args.command]
        return handler(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

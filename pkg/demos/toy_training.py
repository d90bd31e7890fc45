"""Train the desk-scale transformer at several static precisions.

The copy task is learnable by every setup here; the point is that the
narrow-stash configuration reaches the same accuracy while its ledger
shows a fraction of the cost.
"""

from stashq import (
    ModelSpec,
    PrecisionConfig,
    default_traffic_profile,
    default_unit_cost_table,
    estimate_static,
    make_copy_task,
    normalize,
    train_run,
)

spec = ModelSpec.toy()
task = make_copy_task(spec.vocab, spec.seq_len, n_samples=256, seed=0)
table = default_unit_cost_table()
profile = default_traffic_profile()

runs = [
    ("floating-point", PrecisionConfig.reference()),
    ("bfp 16-bit", PrecisionConfig.uniform("bfp", 16)),
    ("stashing-bfp", PrecisionConfig.from_bits("bfp", (16, 4, 4, 16))),
    ("stashing-fixed", PrecisionConfig.from_bits("fixed", (16, 4, 4, 16))),
]

results = []
for name, cfg in runs:
    report = train_run(spec, task, cfg, epochs=5, seed=0)
    summary = report.summary
    baseline = estimate_static(spec, PrecisionConfig.uniform("fixed", 32),
                               summary["total_sequences"], table, profile)
    arith, dram = normalize(report.ledger, baseline)
    results.append((name, summary, arith, dram))
    print(f"== {name} ({summary['config']})")
    for rec in report.records:
        train_loss = "  -  " if rec.train_loss is None else f"{rec.train_loss:.3f}"
        print(f"   epoch {rec.epoch}  train {train_loss}  "
              f"valid {rec.valid_loss:.3f}  acc {rec.token_acc:.3f}")

print(f"\n{'method':16s} {'acc':>6s} {'arith':>7s} {'dram':>7s}")
for name, summary, arith, dram in results:
    print(f"{name:16s} {summary['final_token_acc']:6.3f} {arith:7.3f} {dram:7.3f}")

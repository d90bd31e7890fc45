"""The plateau-triggered precision ladder on a task that needs it.

Sequence reversal is hard enough at desk scale that the coarse opening
rung plateaus; the ladder then climbs. The run report shows when each
advance happened and what the whole run cost compared to training
statically at the top rung or at uniform 16-bit.
"""

from stashq import (
    ModelSpec,
    PrecisionConfig,
    default_ladder,
    default_traffic_profile,
    default_unit_cost_table,
    estimate_static,
    make_copy_task,
    normalize,
    train_run,
)

spec = ModelSpec.toy()
task = make_copy_task(spec.vocab, spec.seq_len, n_samples=256, seed=0,
                      variant="reverse")
table = default_unit_cost_table()
profile = default_traffic_profile()
epochs = 12

ladder = default_ladder("bfp")
print("ladder rungs:", " -> ".join(c.setup_token() for c in ladder.configs),
      f"(patience {ladder.patience})")

adaptive = train_run(spec, task, ladder, epochs=epochs, seed=0)
for rec in adaptive.records:
    print(f"  epoch {rec.epoch:2d}  valid {rec.valid_loss:.3f}  "
          f"acc {rec.token_acc:.3f}  {rec.config}")

static_top = train_run(spec, task, ladder.configs[-1], epochs=epochs, seed=0)
reference = train_run(spec, task, PrecisionConfig.reference(), epochs=epochs, seed=0)

baseline = estimate_static(spec, PrecisionConfig.uniform("fixed", 32),
                           adaptive.summary["total_sequences"], table, profile)
bfp16 = estimate_static(spec, PrecisionConfig.uniform("bfp", 16),
                        adaptive.summary["total_sequences"], table, profile)

print(f"\n{'run':22s} {'acc':>6s} {'arith':>7s} {'dram':>7s}")
for name, report in (("adaptive ladder", adaptive),
                     ("static top rung", static_top),
                     ("floating-point", reference)):
    arith, dram = normalize(report.ledger, baseline)
    print(f"{name:22s} {report.summary['final_token_acc']:6.3f} "
          f"{arith:7.3f} {dram:7.3f}")
arith, dram = normalize(bfp16, baseline)
print(f"{'(static bfp-16 cost)':22s} {'':6s} {arith:7.3f} {dram:7.3f}")

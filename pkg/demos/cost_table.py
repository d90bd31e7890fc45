"""Reproduce the published training-cost table on the 6-layer model.

Every ratio is normalized to the fixed-point 32-bit row: arithmetic in
calibrated MAC units, DRAM traffic in bits over the default profile
(weights, stashed activations, flushed activation gradients).
"""

from stashq import (
    ModelSpec,
    PrecisionConfig,
    default_ladder,
    default_traffic_profile,
    default_unit_cost_table,
    estimate_static,
    fit_phase_durations,
    normalize,
)

spec = ModelSpec.base_6layer()
table = default_unit_cost_table()
profile = default_traffic_profile()

rows = [
    ("floating-point", PrecisionConfig.reference()),
    ("fixed", PrecisionConfig.uniform("fixed", 32)),
    ("fixed", PrecisionConfig.uniform("fixed", 16)),
    ("bfp", PrecisionConfig.uniform("bfp", 32)),
    ("bfp", PrecisionConfig.uniform("bfp", 16)),
    ("stashing-fixed", PrecisionConfig.from_bits("fixed", (16, 4, 4, 16))),
    ("stashing-bfp", PrecisionConfig.from_bits("bfp", (16, 4, 4, 16))),
]

baseline = estimate_static(spec, PrecisionConfig.uniform("fixed", 32), 1.0,
                           table, profile)
print(f"{'method':16s} {'setup':18s} {'arith':>7s} {'dram':>7s}")
for name, cfg in rows:
    ledger = estimate_static(spec, cfg, 1.0, table, profile)
    arith, dram = normalize(ledger, baseline)
    print(f"{name:16s} {cfg.setup_token():18s} {arith:7.3f} {dram:7.3f}")

# the schedule-driven row: phase durations fitted to the published target
ladder = default_ladder("bfp")
fit = fit_phase_durations(table, spec, list(ladder.configs), (0.012, 0.20),
                          profile=profile)
trace = list(zip(ladder.configs, fit.fractions))
ledger = estimate_static(spec, trace, 1.0, table, profile)
arith, dram = normalize(ledger, baseline)
print(f"{'dsq':16s} {'-':18s} {arith:7.3f} {dram:7.3f}")
print("rung fractions:", [round(f, 4) for f in fit.fractions],
      f"fit residual {fit.residual:.5f}")

# headline reductions against the 16-bit fixed-point baseline
fixed16 = estimate_static(spec, PrecisionConfig.uniform("fixed", 16), 1.0,
                          table, profile)
arith_red, dram_red = normalize(fixed16, ledger)
print(f"vs fixed-16: {arith_red:.2f}x fewer MAC units, "
      f"{dram_red:.2f}x less DRAM traffic")

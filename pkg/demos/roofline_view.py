"""Roofline view: how narrower DRAM formats shift operational intensity.

Points are one training step of the 6-layer model on a machine with a
1 TMAC/s compute peak and 16 GB/s of DRAM bandwidth (knee at 62.5
MAC/byte). The wide formats sit left of the knee, bandwidth-bound;
narrowing the stash raises intensity (same MACs, far fewer bytes) and
carries the run past the knee to the compute roof. That shift is the
whole argument for aggressive stash widths on bandwidth-starved
hardware.
"""

import matplotlib

matplotlib.use("svg")
matplotlib.rcParams["svg.hashsalt"] = "stashq"
import matplotlib.pyplot as plt
import numpy as np

from stashq import (
    ModelSpec,
    PrecisionConfig,
    default_traffic_profile,
    default_unit_cost_table,
    estimate_static,
    roofline,
)

PEAK = 1e12  # MAC/s
BANDWIDTH = 16e9  # bytes/s

spec = ModelSpec.base_6layer()
table = default_unit_cost_table()
profile = default_traffic_profile()

points = []
for name, cfg in (
    ("floating-point", PrecisionConfig.reference()),
    ("bfp 16", PrecisionConfig.uniform("bfp", 16)),
    ("stashing-bfp", PrecisionConfig.from_bits("bfp", (16, 4, 4, 16))),
    ("opening rung", PrecisionConfig.from_bits("bfp", (2, 2, 2, 16))),
):
    ledger = estimate_static(spec, cfg, 1.0, table, profile)
    pt = roofline(ledger, PEAK, BANDWIDTH)
    points.append((name, pt))
    print(f"{name:16s} intensity {pt.operational_intensity:8.2f} MAC/byte   "
          f"attainable {pt.attainable_performance / 1e9:7.1f} GMAC/s")

knee = PEAK / BANDWIDTH
print(f"knee at {knee:.1f} MAC/byte")

oi = np.logspace(np.log10(knee) - 2.5, np.log10(knee) + 1.5, 300)
fig, ax = plt.subplots(figsize=(6.5, 4.5))
ax.loglog(oi, np.minimum(PEAK, BANDWIDTH * oi), color="black", label="roofline")
for name, pt in points:
    ax.loglog([pt.operational_intensity], [pt.attainable_performance],
              marker="o", linestyle="none", label=name)
ax.axvline(knee, color="gray", linestyle=":", linewidth=1)
ax.set_xlabel("operational intensity (MAC/byte)")
ax.set_ylabel("attainable performance (MAC/s)")
ax.set_title("one training step, 6-layer model")
ax.legend(loc="lower right", fontsize=8)
fig.tight_layout()
fig.savefig("roofline_view.svg", metadata={"Date": None})
print("wrote roofline_view.svg")

"""Arithmetic-unit and DRAM-bit accounting for quantized GEMM training.

Every multiply-accumulate is charged a unit cost taken from a calibrated
table (a 32x32 fixed-point MAC costs exactly 1.0), and every modeled DRAM
transfer is charged storage bits by tensor class.  The same recording
helpers drive both the live training layers and the static whole-run
estimator, so the two ledgers agree to float rounding by construction.

Cost conventions for one GEMM node (output [M, N], contraction K):
  forward   1 GEMM at (q0, q0); weight-class read of K*N elements at q0;
            stash-class write of M*K at q1; activation-class write of M*N
            at q0.
  backward  input-gradient GEMM at (q3, q2) - the incoming gradient is
            consumed at the width it was flushed at - plus weight-gradient
            GEMM at (q1, q3); weight-class read of K*N at q2; stash-class
            read of M*K at q1; act-grad-class write and read-back of M*K
            at q3 (the node's own flushed input gradient); weight-grad
            write of K*N at Reference width.
Optimizer-state traffic is never recorded.  The default profile counts
only the weight, stash, and act-grad classes; that subset makes the
cost ratios of a fixed-size model independent of its layer shapes.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .formats import NumberFormat, storage_bits

TENSOR_CLASSES = ("activation", "weight", "stash", "act-grad", "weight-grad", "optimizer")
DIRECTIONS = ("read", "write")

REFERENCE = NumberFormat.reference()

# Default target ratios (arithmetic, DRAM) for schedule-duration fitting,
# expressed relative to the fixed-point 32-bit baseline.
DEFAULT_SCHEDULE_TARGET = (0.012, 0.20)

_DEFAULT_BFP_MAC = {32: 0.56, 16: 0.18, 8: 0.06, 4: 0.02, 2: 0.0016}
_DEFAULT_BFP_STORAGE = {32: 36.16, 16: 20.16, 8: 12.40, 4: 8.64, 2: 3.89}


@dataclass(frozen=True)
class UnitCostTable:
    """Calibrated MAC costs and storage widths.

    Fixed-point MACs cost (bits_a * bits_b) / fixed_mac_denominator, so the
    32x32 anchor is exactly 1.0 and cost is quadratic in operand width.
    Block-floating MAC costs are tabulated per element width on the
    diagonal; a mixed-width pair falls back to the geometric mean of the
    two diagonal entries.  Storage defaults to the format's own bit count
    per element; bfp_storage entries override it (they fold in measured
    per-element overhead that the plain shared-exponent layout lacks).
    """

    bfp_mac: dict[int, float] = field(default_factory=lambda: dict(_DEFAULT_BFP_MAC))
    bfp_storage: dict[int, float] = field(default_factory=lambda: dict(_DEFAULT_BFP_STORAGE))
    fixed_mac_denominator: float = 1024.0

    def __post_init__(self) -> None:
        if self.fixed_mac_denominator != 1024.0:
            raise ValueError("fixed MAC denominator must keep the 32x32 anchor at 1.0")
        for table in (self.bfp_mac, self.bfp_storage):
            for bits, value in table.items():
                if bits < 2 or bits > 32:
                    raise ValueError(f"bfp width out of range: {bits}")
                if not value > 0:
                    raise ValueError(f"cost entries must be positive, got {value}")

    def _resolved_kind(self, fmt: NumberFormat, other: NumberFormat) -> tuple[str, int]:
        # Reference operands are charged as 32-bit members of the partner's
        # family (fixed when both operands are Reference).
        if fmt.kind != "ref":
            return fmt.kind, fmt.element_bits
        return (other.kind if other.kind != "ref" else "fixed"), 32

    def mac_cost(self, fmt_a: NumberFormat, fmt_b: NumberFormat) -> float:
        kind_a, bits_a = self._resolved_kind(fmt_a, fmt_b)
        kind_b, bits_b = self._resolved_kind(fmt_b, fmt_a)
        if kind_a != kind_b:
            raise ValueError(
                f"no MAC cost rule for mixed families {kind_a}:{bits_a} x {kind_b}:{bits_b}"
            )
        if kind_a == "fixed":
            return bits_a * bits_b / self.fixed_mac_denominator
        try:
            ca = self.bfp_mac[bits_a]
            cb = self.bfp_mac[bits_b]
        except KeyError as exc:
            raise ValueError(f"no MAC cost entry for bfp width {exc.args[0]}") from exc
        return ca if bits_a == bits_b else math.sqrt(ca * cb)

    def storage_bits_per_element(self, fmt: NumberFormat) -> float:
        if fmt.kind == "ref":
            return 32.0
        if fmt.kind == "fixed":
            return float(fmt.element_bits)
        override = self.bfp_storage.get(fmt.element_bits)
        if override is not None:
            return override
        return fmt.element_bits + fmt.exponent_bits / fmt.box_size


def default_unit_cost_table() -> UnitCostTable:
    return UnitCostTable()


def load_unit_cost_table(path: str | None = None) -> UnitCostTable:
    """Load a cost table from an INI file, or return the calibrated defaults.

    Expected sections: [mac.bfp] and [storage.bfp] map element widths to
    cost values; [mac.fixed] may set denominator (1024 is the only value
    compatible with the unit anchor).
    """
    if path is None:
        return default_unit_cost_table()
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ValueError(f"cost table file not found: {path}")
    try:
        mac = dict(_DEFAULT_BFP_MAC)
        storage = dict(_DEFAULT_BFP_STORAGE)
        if parser.has_section("mac.bfp"):
            mac = {int(k): float(v) for k, v in parser.items("mac.bfp")}
        if parser.has_section("storage.bfp"):
            storage = {int(k): float(v) for k, v in parser.items("storage.bfp")}
        denom = parser.getfloat("mac.fixed", "denominator", fallback=1024.0)
    except (ValueError, TypeError) as exc:
        raise ValueError(f"malformed cost table {path}: {exc}") from exc
    return UnitCostTable(bfp_mac=mac, bfp_storage=storage, fixed_mac_denominator=denom)


_WIDTH_SOURCES = ("q0", "q1", "q2", "q3", "reference", "consumer")


@dataclass(frozen=True)
class TrafficProfile:
    """Which tensor classes count toward DRAM totals, and at what width.

    width sources: one of q0..q3 (take that slot of the active precision
    config), "reference" (32-bit), or "consumer" (the width at which the
    consuming GEMM fetches the tensor; e.g. weights are fetched at q0 in
    the forward pass and q2 in the backward pass).
    """

    include: frozenset[str] = frozenset({"weight", "stash", "act-grad"})
    width_source: tuple[tuple[str, str], ...] = (
        ("activation", "q0"),
        ("weight", "consumer"),
        ("stash", "q1"),
        ("act-grad", "q3"),
        ("weight-grad", "reference"),
        ("optimizer", "reference"),
    )

    def __post_init__(self) -> None:
        sources = dict(self.width_source)
        for klass in self.include:
            if klass not in TENSOR_CLASSES:
                raise ValueError(f"unknown tensor class: {klass}")
        for klass, source in sources.items():
            if klass not in TENSOR_CLASSES:
                raise ValueError(f"unknown tensor class: {klass}")
            if source not in _WIDTH_SOURCES:
                raise ValueError(f"unknown width source: {source}")
        if sources.get("stash", "q1") != "q1":
            raise ValueError("stash traffic is always sourced from q1")
        if sources.get("act-grad", "q3") != "q3":
            raise ValueError("act-grad traffic is always sourced from q3")

    def includes(self, tensor_class: str) -> bool:
        return tensor_class in self.include

    def width_format(self, tensor_class: str, cfg, consumer: NumberFormat) -> NumberFormat:
        source = dict(self.width_source).get(tensor_class, "reference")
        if source == "consumer":
            return consumer
        if source == "reference":
            return REFERENCE
        return getattr(cfg, source)


def default_traffic_profile() -> TrafficProfile:
    return TrafficProfile()


@dataclass
class CostLedger:
    """Additive account of MAC cost units, raw MAC count, and DRAM bits."""

    mac_units: float = 0.0
    mac_count: float = 0.0
    dram_bits: dict[tuple[str, str], float] = field(default_factory=dict)

    def copy(self) -> "CostLedger":
        return CostLedger(self.mac_units, self.mac_count, dict(self.dram_bits))

    def merge(self, other: "CostLedger") -> "CostLedger":
        merged = self.copy()
        merged.mac_units += other.mac_units
        merged.mac_count += other.mac_count
        for key, bits in other.dram_bits.items():
            merged.dram_bits[key] = merged.dram_bits.get(key, 0.0) + bits
        return merged

    def scaled(self, factor: float) -> "CostLedger":
        return CostLedger(
            self.mac_units * factor,
            self.mac_count * factor,
            {key: bits * factor for key, bits in self.dram_bits.items()},
        )

    def total_dram_bits(self) -> float:
        return float(sum(self.dram_bits.values()))

    def class_bits(self, tensor_class: str) -> float:
        return float(
            sum(bits for (klass, _), bits in self.dram_bits.items() if klass == tensor_class)
        )

    def as_dict(self) -> dict:
        return {
            "mac_units": self.mac_units,
            "mac_count": self.mac_count,
            "dram_bits": {f"{klass}/{direction}": bits
                          for (klass, direction), bits in sorted(self.dram_bits.items())},
        }


def record_gemm(
    ledger: CostLedger,
    m: int,
    n: int,
    k: int,
    fmt_a: NumberFormat,
    fmt_b: NumberFormat,
    table: UnitCostTable,
    repeats: float = 1.0,
) -> CostLedger:
    """Charge one [m,k]x[k,n] GEMM (optionally repeated) to the ledger."""
    if m <= 0 or n <= 0 or k <= 0:
        raise ValueError("GEMM dimensions must be positive")
    macs = float(m) * float(n) * float(k) * repeats
    ledger.mac_count += macs
    ledger.mac_units += macs * table.mac_cost(fmt_a, fmt_b)
    return ledger


def record_dram(
    ledger: CostLedger,
    tensor_class: str,
    n_elements: int,
    fmt: NumberFormat,
    direction: str,
    profile: TrafficProfile,
    table: UnitCostTable | None = None,
    repeats: float = 1.0,
) -> CostLedger:
    """Charge a profile-included transfer of n_elements at fmt's width."""
    if tensor_class not in TENSOR_CLASSES:
        raise ValueError(f"unknown tensor class: {tensor_class}")
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction: {direction}")
    if not profile.includes(tensor_class):
        return ledger
    if table is None:
        bits = float(storage_bits(fmt, n_elements)) * repeats
    else:
        bits = table.storage_bits_per_element(fmt) * n_elements * repeats
    key = (tensor_class, direction)
    ledger.dram_bits[key] = ledger.dram_bits.get(key, 0.0) + bits
    return ledger


def record_node_forward(
    ledger: CostLedger,
    m: int,
    n: int,
    k: int,
    cfg,
    table: UnitCostTable,
    profile: TrafficProfile,
    stacks: int = 1,
    sequences: float = 1.0,
) -> CostLedger:
    """Account the forward pass of one GEMM node (shapes are per sequence)."""
    reps = stacks * sequences
    record_gemm(ledger, m, n, k, cfg.q0, cfg.q0, table, repeats=reps)
    w_fmt = profile.width_format("weight", cfg, consumer=cfg.q0)
    record_dram(ledger, "weight", k * n, w_fmt, "read", profile, table, repeats=reps)
    record_dram(ledger, "stash", m * k, cfg.q1, "write", profile, table, repeats=reps)
    a_fmt = profile.width_format("activation", cfg, consumer=cfg.q0)
    record_dram(ledger, "activation", m * n, a_fmt, "write", profile, table, repeats=reps)
    return ledger


def record_node_backward(
    ledger: CostLedger,
    m: int,
    n: int,
    k: int,
    cfg,
    table: UnitCostTable,
    profile: TrafficProfile,
    stacks: int = 1,
    sequences: float = 1.0,
) -> CostLedger:
    """Account the backward pass of one GEMM node (shapes are per sequence)."""
    reps = stacks * sequences
    record_gemm(ledger, m, k, n, cfg.q3, cfg.q2, table, repeats=reps)
    record_gemm(ledger, k, n, m, cfg.q1, cfg.q3, table, repeats=reps)
    w_fmt = profile.width_format("weight", cfg, consumer=cfg.q2)
    record_dram(ledger, "weight", k * n, w_fmt, "read", profile, table, repeats=reps)
    record_dram(ledger, "stash", m * k, cfg.q1, "read", profile, table, repeats=reps)
    record_dram(ledger, "act-grad", m * k, cfg.q3, "write", profile, table, repeats=reps)
    record_dram(ledger, "act-grad", m * k, cfg.q3, "read", profile, table, repeats=reps)
    record_dram(ledger, "weight-grad", k * n, REFERENCE, "write", profile, table, repeats=reps)
    return ledger


@dataclass(frozen=True)
class GemmNode:
    name: str
    m: int
    n: int
    k: int
    stacks: int = 1


def enumerate_gemm_nodes(spec) -> list[GemmNode]:
    """All GEMM nodes of one training step, shaped for a single sequence.

    Attention score and context products are stacked per head; projection
    and feed-forward nodes flatten the sequence into the row dimension.
    """
    if spec.d_model % spec.n_heads != 0:
        raise ValueError("d_model must be divisible by n_heads")
    s, d, h, ff = spec.seq_len, spec.d_model, spec.n_heads, spec.d_ff
    dh = d // h
    nodes: list[GemmNode] = []
    for layer in range(spec.n_layers):
        prefix = f"layer{layer}"
        for proj in ("q_proj", "k_proj", "v_proj", "out_proj"):
            nodes.append(GemmNode(f"{prefix}.{proj}", s, d, d))
        nodes.append(GemmNode(f"{prefix}.scores", s, s, dh, stacks=h))
        nodes.append(GemmNode(f"{prefix}.context", s, dh, s, stacks=h))
        nodes.append(GemmNode(f"{prefix}.ffn1", s, ff, d))
        nodes.append(GemmNode(f"{prefix}.ffn2", s, d, ff))
    nodes.append(GemmNode("head", s, spec.vocab, d))
    return nodes


def estimate_static(
    spec,
    cfg_or_trace,
    steps: float = 1.0,
    table: UnitCostTable | None = None,
    profile: TrafficProfile | None = None,
) -> CostLedger:
    """Whole-run cost of a model spec under a config or a phase trace.

    One step means one sequence through forward and backward.  A trace is
    an iterable of (config, weight) phases; each phase contributes
    weight * steps sequence-steps, so schedule fractions that sum to one
    combine naturally with a total step count.
    """
    table = table or default_unit_cost_table()
    profile = profile or default_traffic_profile()
    if hasattr(cfg_or_trace, "q0"):
        phases = [(cfg_or_trace, 1.0)]
    else:
        phases = [(cfg, float(weight)) for cfg, weight in cfg_or_trace]
    ledger = CostLedger()
    nodes = enumerate_gemm_nodes(spec)
    for cfg, weight in phases:
        phase_steps = weight * steps
        if phase_steps == 0.0:
            continue
        for node in nodes:
            record_node_forward(ledger, node.m, node.n, node.k, cfg, table, profile,
                                stacks=node.stacks, sequences=phase_steps)
            record_node_backward(ledger, node.m, node.n, node.k, cfg, table, profile,
                                 stacks=node.stacks, sequences=phase_steps)
    return ledger


def normalize(ledger: CostLedger, baseline: CostLedger) -> tuple[float, float]:
    """(arith_ratio, dram_ratio) of a ledger against a baseline ledger."""
    if baseline.mac_units == 0.0 or baseline.total_dram_bits() == 0.0:
        raise ValueError("baseline ledger has zero totals")
    return (
        ledger.mac_units / baseline.mac_units,
        ledger.total_dram_bits() / baseline.total_dram_bits(),
    )


@dataclass(frozen=True)
class RooflinePoint:
    operational_intensity: float
    attainable_performance: float


def roofline(
    ledger: CostLedger, peak_ops_per_sec: float, bandwidth_bytes_per_sec: float
) -> RooflinePoint:
    """Operational intensity (raw MACs per DRAM byte) and attainable rate."""
    if peak_ops_per_sec <= 0 or bandwidth_bytes_per_sec <= 0:
        raise ValueError("peak and bandwidth must be positive")
    dram_bytes = ledger.total_dram_bits() / 8.0
    if dram_bytes == 0.0:
        return RooflinePoint(math.inf, peak_ops_per_sec)
    intensity = ledger.mac_count / dram_bytes
    attained = min(peak_ops_per_sec, bandwidth_bytes_per_sec * intensity)
    return RooflinePoint(intensity, attained)


@dataclass(frozen=True)
class PhaseFit:
    fractions: tuple[float, ...]
    achieved: tuple[float, float]
    residual: float
    rung_ratios: tuple[tuple[float, float], ...]


def fit_phase_durations(
    table: UnitCostTable,
    spec,
    rung_configs,
    target_ratios: tuple[float, float],
    profile: TrafficProfile | None = None,
    baseline_cfg=None,
) -> PhaseFit:
    """Fit time fractions per schedule rung so run-average ratios hit a target.

    Minimizes the target-normalized squared mismatch over the probability
    simplex (the two ratio axes differ by an order of magnitude, so a raw
    least-squares objective would ignore the arithmetic axis).  The
    reported residual is the plain Euclidean distance between achieved and
    target ratios.  Infeasible targets yield the closest achievable point
    and its residual; no exception is raised.
    """
    profile = profile or default_traffic_profile()
    rungs = list(rung_configs)
    if not rungs:
        raise ValueError("at least one rung is required")
    if baseline_cfg is None:
        from .qtraining import PrecisionConfig  # deferred: avoids an import cycle

        baseline_cfg = PrecisionConfig.uniform("fixed", 32)
    baseline = estimate_static(spec, baseline_cfg, 1.0, table, profile)
    points = np.array(
        [normalize(estimate_static(spec, cfg, 1.0, table, profile), baseline) for cfg in rungs]
    )
    target = np.asarray(target_ratios, dtype=np.float64)
    weights = 1.0 / target

    def objective(x: np.ndarray) -> float:
        achieved = x @ points
        return float(np.sum(((achieved - target) * weights) ** 2))

    n = len(rungs)
    x0 = np.full(n, 1.0 / n)
    result = optimize.minimize(
        objective,
        x0,
        method="SLSQP",
        bounds=[(0.0, 1.0)] * n,
        constraints=[{"type": "eq", "fun": lambda x: float(np.sum(x)) - 1.0}],
        options={"ftol": 1e-14, "maxiter": 500},
    )
    fractions = np.clip(result.x, 0.0, None)
    fractions = fractions / np.sum(fractions)
    achieved = fractions @ points
    residual = float(np.hypot(*(achieved - target)))
    return PhaseFit(
        fractions=tuple(float(f) for f in fractions),
        achieved=(float(achieved[0]), float(achieved[1])),
        residual=residual,
        rung_ratios=tuple((float(a), float(d)) for a, d in points),
    )

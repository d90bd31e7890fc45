"""Quantized transformer training at desk scale.

Every GEMM in the model is a "node" with four precision injection points:
q0 snaps both forward operands, q1 snaps the activation copy stashed for
the backward pass, q2 snaps the re-fetched weight-side operand of the
input-gradient GEMM, and q3 is the grid on which activation gradients are
flushed between nodes.  Everything that is not a GEMM operand (softmax,
layer norm, residual adds, the optimizer) runs at Reference precision.

Block formats box each operand along the contraction axis on the way into
a forward GEMM; gradient GEMMs consume stashed tensors in their storage
layout.  Incoming gradients are snapped to the q3 grid on entry to each
node's backward, which is a no-op for tensors that were already flushed
and defines the grid for gradients merged inside attention.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .costmodel import (
    CostLedger,
    TrafficProfile,
    UnitCostTable,
    default_traffic_profile,
    default_unit_cost_table,
    record_node_backward,
    record_node_forward,
)
from .formats import NumberFormat, quantize_tensor, storage_bits

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PrecisionConfig:
    """The four per-node formats: forward operands, stash, re-fetched
    weight-side backward operand, and flushed activation gradient."""

    q0: NumberFormat
    q1: NumberFormat
    q2: NumberFormat
    q3: NumberFormat

    def __post_init__(self) -> None:
        kinds = {fmt.kind for fmt in self.formats if fmt.kind != "ref"}
        if len(kinds) > 1:
            raise ValueError(f"mixed format families in one config: {sorted(kinds)}")

    @property
    def formats(self) -> tuple[NumberFormat, NumberFormat, NumberFormat, NumberFormat]:
        return (self.q0, self.q1, self.q2, self.q3)

    @property
    def family(self) -> str:
        for fmt in self.formats:
            if fmt.kind != "ref":
                return fmt.kind
        return "ref"

    @property
    def bits(self) -> tuple[int, int, int, int]:
        return tuple(fmt.element_bits for fmt in self.formats)

    def setup_token(self) -> str:
        return "[" + ", ".join(str(b) for b in self.bits) + "]"

    def token(self) -> str:
        return f"{self.family}{self.setup_token()}"

    @classmethod
    def reference(cls) -> "PrecisionConfig":
        ref = NumberFormat.reference()
        return cls(ref, ref, ref, ref)

    @classmethod
    def uniform(cls, family: str, bits: int) -> "PrecisionConfig":
        return cls.from_bits(family, (bits, bits, bits, bits))

    @classmethod
    def from_bits(cls, family: str, bits) -> "PrecisionConfig":
        bits = tuple(int(b) for b in bits)
        if len(bits) != 4:
            raise ValueError("a precision setup needs exactly four widths")
        if family == "ref":
            return cls.reference()
        if family == "fixed":
            return cls(*(NumberFormat.fixed(b) for b in bits))
        if family == "bfp":
            return cls(*(NumberFormat.bfp(b) for b in bits))
        raise ValueError(f"unknown format family: {family}")


@dataclass
class StashRecord:
    values: np.ndarray
    fmt: NumberFormat
    bits_written: int


class StashBuffer:
    """Per-step store of q1-quantized forward activations, keyed by node.

    Each node writes exactly once per forward pass and its backward
    consumes the record exactly once; double writes and missing reads are
    contract violations.
    """

    def __init__(self) -> None:
        self._records: dict[str, StashRecord] = {}
        self.writes = 0
        self.reads = 0
        self.bits_written = 0

    def push(self, node_id: str, values: np.ndarray, fmt: NumberFormat) -> None:
        if node_id in self._records:
            raise RuntimeError(f"stash already holds a record for node {node_id!r}")
        bits = storage_bits(fmt, values.size)
        self._records[node_id] = StashRecord(values, fmt, bits)
        self.writes += 1
        self.bits_written += bits

    def pop(self, node_id: str) -> StashRecord:
        try:
            record = self._records.pop(node_id)
        except KeyError:
            raise RuntimeError(f"no stash record for node {node_id!r}") from None
        self.reads += 1
        return record

    def in_flight(self) -> int:
        return len(self._records)

    def drain(self) -> None:
        """Discard unread records (used when a step aborts mid-flight)."""
        self.reads += len(self._records)
        self._records.clear()


def _quantize_operand_b(w: np.ndarray, fmt: NumberFormat) -> np.ndarray:
    """Snap the weight-side operand [*, K, N] with blocks along K."""
    if fmt.kind != "bfp":
        return quantize_tensor(w, fmt)
    return np.swapaxes(quantize_tensor(np.swapaxes(w, -1, -2), fmt), -1, -2)


def _node_dims(x: np.ndarray, w: np.ndarray, sequences: int) -> tuple[int, int, int, int]:
    """Per-sequence (m, n, k, stacks) for accounting a node's GEMM shapes."""
    k, n = w.shape[-2], w.shape[-1]
    if x.ndim == 2:
        m, stacks = x.shape[0], 1
        if m % sequences:
            raise ValueError("row count must divide evenly into sequences")
        return m // sequences, n, k, 1
    stacks = x.shape[0]
    if stacks % sequences:
        raise ValueError("stack count must divide evenly into sequences")
    return x.shape[-2], n, k, stacks // sequences


def linear_forward(
    x: np.ndarray,
    w: np.ndarray,
    cfg: PrecisionConfig,
    ledger: CostLedger | None,
    stash: StashBuffer,
    node_id: str = "linear",
    table: UnitCostTable | None = None,
    profile: TrafficProfile | None = None,
    sequences: int = 1,
) -> np.ndarray:
    """Forward GEMM of one node: y = gemm(snap(x, q0), snap(w, q0)).

    The unquantized x is snapped to q1 and stashed under node_id.  When a
    ledger is given, records one GEMM at (q0, q0) plus the weight read,
    stash write, and output write at their profile widths.
    """
    xq = quantize_tensor(x, cfg.q0)
    wq = _quantize_operand_b(w, cfg.q0)
    y = engine.gemm(xq, wq)
    stash.push(node_id, quantize_tensor(x, cfg.q1), cfg.q1)
    if ledger is not None:
        m, n, k, stacks = _node_dims(x, w, sequences)
        record_node_forward(ledger, m, n, k, cfg, table or default_unit_cost_table(),
                            profile or default_traffic_profile(), stacks, sequences)
    return y


def linear_backward(
    dy: np.ndarray,
    w: np.ndarray,
    cfg: PrecisionConfig,
    ledger: CostLedger | None,
    stash: StashBuffer,
    node_id: str = "linear",
    table: UnitCostTable | None = None,
    profile: TrafficProfile | None = None,
    sequences: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Backward of one node; returns (dx flushed on the q3 grid, dw).

    dy is snapped to the q3 grid on entry (its stored width), then
    dx = gemm(dy, snap(w, q2)^T) and dw = gemm(stashed_x^T, dy).  The
    returned dx is itself snapped to q3: the conservative flush.  dw is
    left unquantized for the Reference-precision optimizer.
    """
    dy_eff = quantize_tensor(dy, cfg.q3)
    record = stash.pop(node_id)
    wq = quantize_tensor(w, cfg.q2)
    dx = engine.gemm(dy_eff, np.swapaxes(wq, -1, -2))
    dw = engine.gemm(np.swapaxes(record.values, -1, -2), dy_eff)
    dx = quantize_tensor(dx, cfg.q3)
    if ledger is not None:
        m, n, k, stacks = _node_dims(dx, w, sequences)
        record_node_backward(ledger, m, n, k, cfg, table or default_unit_cost_table(),
                             profile or default_traffic_profile(), stacks, sequences)
    return dx, dw


@dataclass(frozen=True)
class ModelSpec:
    """Encoder-only per-position classifier dimensions."""

    n_layers: int
    d_model: int
    n_heads: int
    d_ff: int
    vocab: int
    seq_len: int

    def __post_init__(self) -> None:
        if min(self.d_model, self.n_heads, self.d_ff, self.vocab, self.seq_len) <= 0:
            raise ValueError("all model dimensions must be positive")
        if self.n_layers < 0:
            raise ValueError("n_layers must be non-negative")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def toy(cls) -> "ModelSpec":
        return cls(n_layers=2, d_model=64, n_heads=4, d_ff=128, vocab=32, seq_len=16)

    @classmethod
    def base_6layer(cls) -> "ModelSpec":
        return cls(n_layers=6, d_model=512, n_heads=8, d_ff=2048, vocab=10000, seq_len=128)


@dataclass
class TrainState:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    seed: int


def sinusoidal_positions(seq_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    idx = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / d_model)
    enc = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


def init_state(spec: ModelSpec, seed: int) -> TrainState:
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}

    def matrix(name: str, rows: int, cols: int) -> None:
        params[name] = rng.normal(0.0, 0.02, size=(rows, cols))

    matrix("embed", spec.vocab, spec.d_model)
    for layer in range(spec.n_layers):
        p = f"layer{layer}"
        params[f"{p}.ln1.gamma"] = np.ones(spec.d_model)
        params[f"{p}.ln1.beta"] = np.zeros(spec.d_model)
        for proj in ("q_proj", "k_proj", "v_proj", "out_proj"):
            matrix(f"{p}.{proj}", spec.d_model, spec.d_model)
        params[f"{p}.ln2.gamma"] = np.ones(spec.d_model)
        params[f"{p}.ln2.beta"] = np.zeros(spec.d_model)
        matrix(f"{p}.ffn1", spec.d_model, spec.d_ff)
        matrix(f"{p}.ffn2", spec.d_ff, spec.d_model)
    params["final_ln.gamma"] = np.ones(spec.d_model)
    params["final_ln.beta"] = np.zeros(spec.d_model)
    matrix("head", spec.d_model, spec.vocab)
    zeros = {name: np.zeros_like(value) for name, value in params.items()}
    return TrainState(params=params, m=zeros,
                      v={name: np.zeros_like(value) for name, value in params.items()},
                      step=0, seed=seed)


def _split_heads(x: np.ndarray, b: int, s: int, h: int, dh: int) -> np.ndarray:
    return np.ascontiguousarray(x.reshape(b, s, h, dh).transpose(0, 2, 1, 3)).reshape(b * h, s, dh)


def _merge_heads(x: np.ndarray, b: int, s: int, h: int, dh: int) -> np.ndarray:
    return np.ascontiguousarray(x.reshape(b, h, s, dh).transpose(0, 2, 1, 3)).reshape(b * s, h * dh)


def _forward(
    params: dict[str, np.ndarray],
    spec: ModelSpec,
    tokens: np.ndarray,
    cfg: PrecisionConfig,
    ledger: CostLedger | None,
    stash: StashBuffer,
    table: UnitCostTable,
    profile: TrafficProfile,
) -> tuple[np.ndarray, dict]:
    """Run the model; returns per-position logits and the backward cache."""
    b, s = tokens.shape
    h, dh, d = spec.n_heads, spec.d_head, spec.d_model
    kw = dict(cfg=cfg, ledger=ledger, stash=stash, table=table, profile=profile, sequences=b)
    pos = sinusoidal_positions(s, d)
    hidden = params["embed"][tokens] + pos[None, :, :]
    cache: dict = {"tokens": tokens, "layers": []}
    for layer in range(spec.n_layers):
        p = f"layer{layer}"
        lc: dict = {}
        lc["h_in"] = hidden
        a = engine.layer_norm(hidden, params[f"{p}.ln1.gamma"], params[f"{p}.ln1.beta"])
        lc["a"] = a
        a_flat = a.reshape(b * s, d)
        q = linear_forward(a_flat, params[f"{p}.q_proj"], node_id=f"{p}.q_proj", **kw)
        k = linear_forward(a_flat, params[f"{p}.k_proj"], node_id=f"{p}.k_proj", **kw)
        v = linear_forward(a_flat, params[f"{p}.v_proj"], node_id=f"{p}.v_proj", **kw)
        qh = _split_heads(q, b, s, h, dh)
        kh = _split_heads(k, b, s, h, dh)
        vh = _split_heads(v, b, s, h, dh)
        lc["kh"], lc["vh"] = kh, vh
        kt = np.ascontiguousarray(np.swapaxes(kh, -1, -2))
        scores = linear_forward(qh, kt, node_id=f"{p}.scores", **kw)
        probs = engine.softmax_rows(scores / math.sqrt(dh))
        lc["probs"] = probs
        ctx = linear_forward(probs, vh, node_id=f"{p}.context", **kw)
        ctx_flat = _merge_heads(ctx, b, s, h, dh)
        o = linear_forward(ctx_flat, params[f"{p}.out_proj"], node_id=f"{p}.out_proj", **kw)
        hidden = hidden + o.reshape(b, s, d)
        lc["h_mid"] = hidden
        a2 = engine.layer_norm(hidden, params[f"{p}.ln2.gamma"], params[f"{p}.ln2.beta"])
        lc["a2"] = a2
        f1 = linear_forward(a2.reshape(b * s, d), params[f"{p}.ffn1"], node_id=f"{p}.ffn1", **kw)
        lc["f1"] = f1
        g = engine.gelu(f1)
        f2 = linear_forward(g, params[f"{p}.ffn2"], node_id=f"{p}.ffn2", **kw)
        hidden = hidden + f2.reshape(b, s, d)
        cache["layers"].append(lc)
    cache["h_top"] = hidden
    final = engine.layer_norm(hidden, params["final_ln.gamma"], params["final_ln.beta"])
    cache["final"] = final
    logits = linear_forward(final.reshape(b * s, d), params["head"], node_id="head", **kw)
    return logits, cache


def _backward(
    params: dict[str, np.ndarray],
    spec: ModelSpec,
    cache: dict,
    dlogits: np.ndarray,
    cfg: PrecisionConfig,
    ledger: CostLedger | None,
    stash: StashBuffer,
    table: UnitCostTable,
    profile: TrafficProfile,
) -> dict[str, np.ndarray]:
    tokens = cache["tokens"]
    b, s = tokens.shape
    h, dh, d = spec.n_heads, spec.d_head, spec.d_model
    kw = dict(cfg=cfg, ledger=ledger, stash=stash, table=table, profile=profile, sequences=b)
    grads: dict[str, np.ndarray] = {}

    dfinal_flat, grads["head"] = linear_backward(dlogits, params["head"], node_id="head", **kw)
    dh_top, grads["final_ln.gamma"], grads["final_ln.beta"] = engine.layer_norm_vjp(
        dfinal_flat.reshape(b, s, d), cache["h_top"], params["final_ln.gamma"]
    )
    dhidden = dh_top
    for layer in reversed(range(spec.n_layers)):
        p = f"layer{layer}"
        lc = cache["layers"][layer]
        df2_flat, grads[f"{p}.ffn2"] = linear_backward(
            dhidden.reshape(b * s, d), params[f"{p}.ffn2"], node_id=f"{p}.ffn2", **kw
        )
        df1 = engine.gelu_vjp(df2_flat, lc["f1"])
        da2_flat, grads[f"{p}.ffn1"] = linear_backward(
            df1, params[f"{p}.ffn1"], node_id=f"{p}.ffn1", **kw
        )
        dmid, grads[f"{p}.ln2.gamma"], grads[f"{p}.ln2.beta"] = engine.layer_norm_vjp(
            da2_flat.reshape(b, s, d), lc["h_mid"], params[f"{p}.ln2.gamma"]
        )
        dhidden = dhidden + dmid
        dctx_flat, grads[f"{p}.out_proj"] = linear_backward(
            dhidden.reshape(b * s, d), params[f"{p}.out_proj"], node_id=f"{p}.out_proj", **kw
        )
        dctx = _split_heads(dctx_flat, b, s, h, dh)
        dprobs, dvh = linear_backward(dctx, lc["vh"], node_id=f"{p}.context", **kw)
        dscores = engine.softmax_rows_vjp(dprobs, lc["probs"]) / math.sqrt(dh)
        dqh, dkt = linear_backward(dscores, np.ascontiguousarray(np.swapaxes(lc["kh"], -1, -2)),
                                   node_id=f"{p}.scores", **kw)
        dkh = np.swapaxes(dkt, -1, -2)
        dq = _merge_heads(dqh, b, s, h, dh)
        dk = _merge_heads(dkh, b, s, h, dh)
        dv = _merge_heads(dvh, b, s, h, dh)
        da_q, grads[f"{p}.q_proj"] = linear_backward(dq, params[f"{p}.q_proj"],
                                                     node_id=f"{p}.q_proj", **kw)
        da_k, grads[f"{p}.k_proj"] = linear_backward(dk, params[f"{p}.k_proj"],
                                                     node_id=f"{p}.k_proj", **kw)
        da_v, grads[f"{p}.v_proj"] = linear_backward(dv, params[f"{p}.v_proj"],
                                                     node_id=f"{p}.v_proj", **kw)
        da = (da_q + da_k + da_v).reshape(b, s, d)
        din, grads[f"{p}.ln1.gamma"], grads[f"{p}.ln1.beta"] = engine.layer_norm_vjp(
            da, lc["h_in"], params[f"{p}.ln1.gamma"]
        )
        dhidden = dhidden + din
    dembed = np.zeros_like(params["embed"])
    np.add.at(dembed, tokens.reshape(-1), dhidden.reshape(b * s, d))
    grads["embed"] = dembed
    return grads


def transformer_step(
    batch: tuple[np.ndarray, np.ndarray],
    state: TrainState,
    cfg: PrecisionConfig,
    ledger: CostLedger | None,
    stash: StashBuffer,
    spec: ModelSpec,
    lr: float,
    table: UnitCostTable | None = None,
    profile: TrafficProfile | None = None,
    label_smoothing: float = 0.0,
) -> tuple[float, TrainState]:
    """One optimization step: forward, backward, Adam update.

    A non-finite loss is logged as a divergence event and the parameter
    update is skipped so the caller can decide whether to abort.
    """
    table = table or default_unit_cost_table()
    profile = profile or default_traffic_profile()
    src, tgt = batch
    logits, cache = _forward(state.params, spec, src, cfg, ledger, stash, table, profile)
    targets = tgt.reshape(-1)
    loss = engine.cross_entropy(logits, targets, label_smoothing)
    if not math.isfinite(loss):
        logger.warning("divergence event: non-finite training loss %r", loss)
        stash.drain()
        state.step += 1
        return loss, state
    dlogits = engine.cross_entropy_vjp(logits, targets, label_smoothing)
    grads = _backward(state.params, spec, cache, dlogits, cfg, ledger, stash, table, profile)
    adam_step(state, grads, lr)
    return loss, state


def adam_step(
    state: TrainState,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-8,
) -> TrainState:
    """Bias-corrected Adam update at Reference precision."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    state.step += 1
    t = state.step
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        state.params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def lr_schedule(step: int, warmup: int, base: float) -> float:
    """Inverse-square-root decay with linear warmup."""
    if step < 1:
        raise ValueError("step starts at 1")
    return base * min(step**-0.5, step * warmup**-1.5)


@dataclass(frozen=True)
class Dataset:
    train_src: np.ndarray
    train_tgt: np.ndarray
    valid_src: np.ndarray
    valid_tgt: np.ndarray
    variant: str


def make_copy_task(
    vocab: int,
    seq_len: int,
    n_samples: int,
    seed: int,
    variant: str = "copy",
    valid_fraction: float = 0.25,
) -> Dataset:
    """Deterministic sequence pairs: target copies or reverses the source."""
    if vocab < 4:
        raise ValueError("vocab must be at least 4")
    if variant not in ("copy", "reverse"):
        raise ValueError(f"unknown task variant: {variant}")
    rng = np.random.default_rng(seed)
    src = rng.integers(0, vocab, size=(n_samples, seq_len), dtype=np.int64)
    tgt = src.copy() if variant == "copy" else src[:, ::-1].copy()
    n_valid = max(1, int(n_samples * valid_fraction))
    n_train = n_samples - n_valid
    if n_train < 1:
        raise ValueError("n_samples too small for a train/valid split")
    return Dataset(src[:n_train], tgt[:n_train], src[n_train:], tgt[n_train:], variant)


def evaluate(
    params: dict[str, np.ndarray],
    spec: ModelSpec,
    src: np.ndarray,
    tgt: np.ndarray,
    cfg: PrecisionConfig,
    table: UnitCostTable,
    profile: TrafficProfile,
    batch_size: int = 64,
) -> tuple[float, float]:
    """(mean loss, token accuracy) of a forward-only pass; nothing recorded."""
    losses = []
    correct = 0
    total = 0
    for start in range(0, src.shape[0], batch_size):
        sb = src[start:start + batch_size]
        tb = tgt[start:start + batch_size]
        logits, _ = _forward(params, spec, sb, cfg, None, StashBuffer(), table, profile)
        targets = tb.reshape(-1)
        losses.append(engine.cross_entropy(logits, targets) * targets.size)
        correct += int(np.sum(np.argmax(logits, axis=-1) == targets))
        total += targets.size
    return float(sum(losses) / total), correct / total


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float | None
    valid_loss: float
    token_acc: float
    config: str
    ledger: dict


@dataclass
class RunReport:
    records: list[EpochRecord]
    summary: dict
    ledger: CostLedger
    trace: list[tuple[PrecisionConfig, float]]


def train_run(
    spec: ModelSpec,
    task: Dataset,
    schedule_or_cfg,
    epochs: int,
    seed: int,
    batch_size: int = 16,
    lr_base: float = 0.05,
    warmup: int = 30,
    table: UnitCostTable | None = None,
    profile: TrafficProfile | None = None,
    divergence_abort: bool = True,
) -> RunReport:
    """Full deterministic training run with cost accounting.

    schedule_or_cfg is either a PrecisionConfig (static precision) or a
    ScheduleLadder advanced on validation-loss plateaus once per epoch.
    The run is declared "failed" after three consecutive evaluations whose
    loss is non-finite or above ten times the initial validation loss.
    """
    from .scheduler import ScheduleLadder, ScheduleState, observe_validation

    table = table or default_unit_cost_table()
    profile = profile or default_traffic_profile()
    rng = np.random.default_rng(seed)
    state = init_state(spec, seed)
    ledger = CostLedger()

    if isinstance(schedule_or_cfg, ScheduleLadder):
        ladder = schedule_or_cfg
        sched_state = ScheduleState()
        cfg = ladder.configs[0]
    else:
        ladder = None
        sched_state = None
        cfg = schedule_or_cfg

    records: list[EpochRecord] = []
    trace: list[tuple[PrecisionConfig, float]] = []
    valid_loss, acc = evaluate(state.params, spec, task.valid_src, task.valid_tgt,
                               cfg, table, profile)
    initial_loss = valid_loss
    records.append(EpochRecord(0, None, valid_loss, acc, cfg.token(), ledger.as_dict()))
    best_loss = valid_loss
    bad_streak = 0
    verdict = "ok"
    n_train = task.train_src.shape[0]

    for epoch in range(1, epochs + 1):
        order = rng.permutation(n_train)
        epoch_cfg = cfg
        epoch_sequences = 0
        loss_sum = 0.0
        for start in range(0, n_train, batch_size):
            idx = order[start:start + batch_size]
            batch = (task.train_src[idx], task.train_tgt[idx])
            lr = lr_schedule(state.step + 1, warmup, lr_base)
            stash = StashBuffer()
            loss, state = transformer_step(batch, state, epoch_cfg, ledger, stash,
                                           spec, lr, table, profile)
            if stash.in_flight():
                raise RuntimeError("stash buffer left with unread records")
            loss_sum += loss * len(idx)
            epoch_sequences += len(idx)
        trace.append((epoch_cfg, float(epoch_sequences)))
        train_loss = loss_sum / epoch_sequences
        valid_loss, acc = evaluate(state.params, spec, task.valid_src, task.valid_tgt,
                                   epoch_cfg, table, profile)
        records.append(EpochRecord(epoch, train_loss, valid_loss, acc,
                                   epoch_cfg.token(), ledger.as_dict()))
        if ladder is not None:
            sched_state, cfg = observe_validation(sched_state, valid_loss, ladder)
        if not math.isfinite(valid_loss) or valid_loss > 10.0 * initial_loss:
            bad_streak += 1
        else:
            bad_streak = 0
            best_loss = min(best_loss, valid_loss)
        if bad_streak >= 3:
            verdict = "failed"
            logger.warning("divergence: three consecutive bad evaluations at epoch %d", epoch)
            if divergence_abort:
                break

    final = records[-1]
    summary = {
        "verdict": verdict,
        "epochs_run": final.epoch,
        "final_valid_loss": final.valid_loss,
        "final_token_acc": final.token_acc,
        "best_valid_loss": best_loss,
        "total_sequences": float(sum(seqs for _, seqs in trace)),
        "config": final.config,
        "seed": seed,
        "mac_units": ledger.mac_units,
        "dram_bits": ledger.total_dram_bits(),
    }
    if ladder is not None:
        summary["schedule_trace"] = [[c.token(), seqs] for c, seqs in trace]
    return RunReport(records=records, summary=summary, ledger=ledger, trace=trace)

"""Quantized training layer: node semantics, model training, accounting.

The heavyweight oracle here is a test-local plain transformer (no
quantization hooks at all) built directly on the engine primitives; at
Reference precision the instrumented model must reproduce its loss and
parameter trajectory bit for bit.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest

from oracles import oracle_quantize_operand_b, oracle_quantize_tensor
from stashq import engine
from stashq.costmodel import (
    CostLedger,
    default_traffic_profile,
    default_unit_cost_table,
    estimate_static,
)
from stashq.formats import NumberFormat, quantize_tensor, storage_bits
from stashq.qtraining import (
    Dataset,
    ModelSpec,
    PrecisionConfig,
    StashBuffer,
    TrainState,
    adam_step,
    evaluate,
    init_state,
    linear_backward,
    linear_forward,
    lr_schedule,
    make_copy_task,
    sinusoidal_positions,
    train_run,
    transformer_step,
)

REF_CFG = PrecisionConfig.reference()


# ------------------------------------------------------- precision config

def test_precision_config_tokens_and_accessors() -> None:
    cfg = PrecisionConfig.from_bits("bfp", (16, 4, 4, 16))
    assert cfg.family == "bfp"
    assert cfg.bits == (16, 4, 4, 16)
    assert cfg.setup_token() == "[16, 4, 4, 16]"
    assert cfg.token() == "bfp[16, 4, 4, 16]"
    assert PrecisionConfig.reference().token() == "ref[32, 32, 32, 32]"
    assert PrecisionConfig.uniform("fixed", 16).bits == (16, 16, 16, 16)


def test_precision_config_rejects_mixed_families() -> None:
    with pytest.raises(ValueError):
        PrecisionConfig(NumberFormat.fixed(16), NumberFormat.bfp(4),
                        NumberFormat.fixed(4), NumberFormat.fixed(16))
    # a reference slot inside a quantized config is fine
    cfg = PrecisionConfig(NumberFormat.reference(), NumberFormat.bfp(4),
                          NumberFormat.bfp(4), NumberFormat.reference())
    assert cfg.family == "bfp"
    with pytest.raises(ValueError):
        PrecisionConfig.from_bits("bfp", (16, 4, 4))
    with pytest.raises(ValueError):
        PrecisionConfig.from_bits("float8", (8, 8, 8, 8))


# ------------------------------------------------------------ stash buffer

def test_stash_push_pop_discipline() -> None:
    stash = StashBuffer()
    x = np.ones((4, 8))
    stash.push("n0", x, NumberFormat.bfp(4))
    assert stash.writes == 1
    assert stash.in_flight() == 1
    # 32 elements at 4 bits plus two 8-bit shared exponents
    assert stash.bits_written == 144
    assert storage_bits(NumberFormat.bfp(4), 32) == 144
    with pytest.raises(RuntimeError):
        stash.push("n0", x, NumberFormat.bfp(4))
    rec = stash.pop("n0")
    assert rec.values is x
    assert stash.reads == 1
    assert stash.in_flight() == 0
    with pytest.raises(RuntimeError):
        stash.pop("n0")


def test_stash_drain_clears_unread_records() -> None:
    stash = StashBuffer()
    stash.push("a", np.zeros((2, 2)), NumberFormat.fixed(8))
    stash.push("b", np.zeros((2, 2)), NumberFormat.fixed(8))
    stash.drain()
    assert stash.in_flight() == 0
    assert stash.reads == 2


# ------------------------------------------------------ node-level algebra

def test_linear_forward_reference_is_plain_gemm() -> None:
    rng = np.random.default_rng(50)
    x = rng.normal(size=(6, 5))
    w = rng.normal(size=(5, 7))
    stash = StashBuffer()
    y = linear_forward(x, w, REF_CFG, None, stash, node_id="n")
    assert np.array_equal(y, engine.gemm(x, w))
    assert np.array_equal(stash.pop("n").values, x)


def test_linear_forward_matches_quantizer_composition() -> None:
    rng = np.random.default_rng(51)
    for kind, bits in (("fixed", 8), ("bfp", 8)):
        cfg = PrecisionConfig.uniform(kind, bits)
        x = rng.normal(size=(4, 32))
        w = rng.normal(size=(32, 16))
        y = linear_forward(x, w, cfg, None, StashBuffer(), node_id="n")
        expect = engine.gemm(oracle_quantize_tensor(x, kind, bits),
                             oracle_quantize_operand_b(w, kind, bits))
        assert np.array_equal(y, expect)


def test_linear_forward_stashes_narrow_copy() -> None:
    rng = np.random.default_rng(52)
    cfg = PrecisionConfig(NumberFormat.reference(), NumberFormat.bfp(4),
                          NumberFormat.reference(), NumberFormat.reference())
    x = rng.normal(size=(4, 32))
    w = rng.normal(size=(32, 8))
    stash = StashBuffer()
    y = linear_forward(x, w, cfg, None, stash, node_id="n")
    # narrow stash must not perturb the forward output
    assert np.array_equal(y, engine.gemm(x, w))
    assert np.array_equal(stash.pop("n").values, oracle_quantize_tensor(x, "bfp", 4))


def test_linear_backward_reference_matches_engine_vjp() -> None:
    rng = np.random.default_rng(53)
    x = rng.normal(size=(6, 5))
    w = rng.normal(size=(5, 7))
    dy = rng.normal(size=(6, 7))
    stash = StashBuffer()
    linear_forward(x, w, REF_CFG, None, stash, node_id="n")
    dx, dw = linear_backward(dy, w, REF_CFG, None, stash, node_id="n")
    dx_ref, dw_ref = engine.gemm_vjp(dy, x, w)
    assert np.array_equal(dx, dx_ref)
    assert np.array_equal(dw, dw_ref)


def test_linear_backward_zero_gradient_stays_zero() -> None:
    rng = np.random.default_rng(54)
    cfg = PrecisionConfig.from_bits("bfp", (16, 4, 4, 16))
    x = rng.normal(size=(4, 32))
    w = rng.normal(size=(32, 16))
    stash = StashBuffer()
    linear_forward(x, w, cfg, None, stash, node_id="n")
    dx, dw = linear_backward(np.zeros((4, 16)), w, cfg, None, stash, node_id="n")
    assert not dx.any()
    assert not dw.any()


def test_linear_backward_matches_quantizer_composition() -> None:
    rng = np.random.default_rng(55)
    cfg = PrecisionConfig.from_bits("bfp", (16, 4, 4, 16))
    x = rng.normal(size=(4, 32))
    w = rng.normal(size=(32, 16))
    dy = rng.normal(size=(4, 16))
    stash = StashBuffer()
    linear_forward(x, w, cfg, None, stash, node_id="n")
    dx, dw = linear_backward(dy, w, cfg, None, stash, node_id="n")
    dy_eff = oracle_quantize_tensor(dy, "bfp", 16)
    w_q2 = oracle_quantize_tensor(w, "bfp", 4)  # storage layout: boxes along N
    x_q1 = oracle_quantize_tensor(x, "bfp", 4)
    dx_expect = oracle_quantize_tensor(
        engine.gemm(dy_eff, np.swapaxes(w_q2, -1, -2)), "bfp", 16)
    dw_expect = engine.gemm(np.swapaxes(x_q1, -1, -2), dy_eff)
    assert np.array_equal(dx, dx_expect)
    assert np.array_equal(dw, dw_expect)


def test_linear_backward_flushes_own_output() -> None:
    rng = np.random.default_rng(56)
    cfg = PrecisionConfig.from_bits("fixed", (16, 4, 4, 8))
    x = rng.normal(size=(4, 32))
    w = rng.normal(size=(32, 16))
    dy = rng.normal(size=(4, 16))
    stash = StashBuffer()
    linear_forward(x, w, cfg, None, stash, node_id="n")
    dx, _ = linear_backward(dy, w, cfg, None, stash, node_id="n")
    # the returned gradient sits on its own q3 grid: snapping is a no-op
    assert np.array_equal(dx, oracle_quantize_tensor(dx, "fixed", 8))


# ------------------------------------------------------- whole-model oracle

def _split(x: np.ndarray, b: int, s: int, h: int, dh: int) -> np.ndarray:
    return np.ascontiguousarray(x.reshape(b, s, h, dh).transpose(0, 2, 1, 3)).reshape(b * h, s, dh)


def _merge(x: np.ndarray, b: int, s: int, h: int, dh: int) -> np.ndarray:
    return np.ascontiguousarray(x.reshape(b, h, s, dh).transpose(0, 2, 1, 3)).reshape(b * s, h * dh)


def plain_loss_and_grads(params, spec, src, tgt):
    """Unquantized transformer loss/grads built directly on engine ops."""
    b, s = src.shape
    h, dh, d = spec.n_heads, spec.d_head, spec.d_model
    pos = sinusoidal_positions(s, d)
    hidden = params["embed"][src] + pos[None, :, :]
    layers = []
    for i in range(spec.n_layers):
        p = f"layer{i}"
        lc = {"h_in": hidden}
        a = engine.layer_norm(hidden, params[f"{p}.ln1.gamma"], params[f"{p}.ln1.beta"])
        a_flat = a.reshape(b * s, d)
        lc["a_flat"] = a_flat
        q = engine.gemm(a_flat, params[f"{p}.q_proj"])
        k = engine.gemm(a_flat, params[f"{p}.k_proj"])
        v = engine.gemm(a_flat, params[f"{p}.v_proj"])
        qh, kh, vh = (_split(t, b, s, h, dh) for t in (q, k, v))
        lc["qh"], lc["kh"], lc["vh"] = qh, kh, vh
        kt = np.ascontiguousarray(np.swapaxes(kh, -1, -2))
        probs = engine.softmax_rows(engine.gemm(qh, kt) / math.sqrt(dh))
        lc["probs"] = probs
        ctx_flat = _merge(engine.gemm(probs, vh), b, s, h, dh)
        lc["ctx_flat"] = ctx_flat
        o = engine.gemm(ctx_flat, params[f"{p}.out_proj"])
        hidden = hidden + o.reshape(b, s, d)
        lc["h_mid"] = hidden
        a2 = engine.layer_norm(hidden, params[f"{p}.ln2.gamma"], params[f"{p}.ln2.beta"])
        a2_flat = a2.reshape(b * s, d)
        lc["a2_flat"] = a2_flat
        f1 = engine.gemm(a2_flat, params[f"{p}.ffn1"])
        lc["f1"] = f1
        g = engine.gelu(f1)
        lc["g"] = g
        f2 = engine.gemm(g, params[f"{p}.ffn2"])
        hidden = hidden + f2.reshape(b, s, d)
        layers.append(lc)
    h_top = hidden
    final = engine.layer_norm(h_top, params["final_ln.gamma"], params["final_ln.beta"])
    final_flat = final.reshape(b * s, d)
    logits = engine.gemm(final_flat, params["head"])
    targets = tgt.reshape(-1)
    loss = engine.cross_entropy(logits, targets)

    grads = {}
    dlogits = engine.cross_entropy_vjp(logits, targets)
    dfinal = engine.gemm(dlogits, np.swapaxes(params["head"], -1, -2))
    grads["head"] = engine.gemm(np.swapaxes(final_flat, -1, -2), dlogits)
    dh_top, grads["final_ln.gamma"], grads["final_ln.beta"] = engine.layer_norm_vjp(
        dfinal.reshape(b, s, d), h_top, params["final_ln.gamma"])
    dhidden = dh_top
    for i in reversed(range(spec.n_layers)):
        p = f"layer{i}"
        lc = layers[i]
        dh_flat = dhidden.reshape(b * s, d)
        df2 = engine.gemm(dh_flat, np.swapaxes(params[f"{p}.ffn2"], -1, -2))
        grads[f"{p}.ffn2"] = engine.gemm(np.swapaxes(lc["g"], -1, -2), dh_flat)
        df1 = engine.gelu_vjp(df2, lc["f1"])
        da2 = engine.gemm(df1, np.swapaxes(params[f"{p}.ffn1"], -1, -2))
        grads[f"{p}.ffn1"] = engine.gemm(np.swapaxes(lc["a2_flat"], -1, -2), df1)
        dmid, grads[f"{p}.ln2.gamma"], grads[f"{p}.ln2.beta"] = engine.layer_norm_vjp(
            da2.reshape(b, s, d), lc["h_mid"], params[f"{p}.ln2.gamma"])
        dhidden = dhidden + dmid
        dh_flat = dhidden.reshape(b * s, d)
        dctx_flat = engine.gemm(dh_flat, np.swapaxes(params[f"{p}.out_proj"], -1, -2))
        grads[f"{p}.out_proj"] = engine.gemm(np.swapaxes(lc["ctx_flat"], -1, -2), dh_flat)
        dctx = _split(dctx_flat, b, s, h, dh)
        dprobs = engine.gemm(dctx, np.swapaxes(lc["vh"], -1, -2))
        dvh = engine.gemm(np.swapaxes(lc["probs"], -1, -2), dctx)
        dscores = engine.softmax_rows_vjp(dprobs, lc["probs"]) / math.sqrt(dh)
        dqh = engine.gemm(dscores, lc["kh"])
        dkt = engine.gemm(np.swapaxes(lc["qh"], -1, -2), dscores)
        dkh = np.swapaxes(dkt, -1, -2)
        dq = _merge(dqh, b, s, h, dh)
        dk = _merge(dkh, b, s, h, dh)
        dv = _merge(dvh, b, s, h, dh)
        da_parts = []
        for name, grad_out in (("q_proj", dq), ("k_proj", dk), ("v_proj", dv)):
            da_parts.append(engine.gemm(grad_out, np.swapaxes(params[f"{p}.{name}"], -1, -2)))
            grads[f"{p}.{name}"] = engine.gemm(np.swapaxes(lc["a_flat"], -1, -2), grad_out)
        da = (da_parts[0] + da_parts[1] + da_parts[2]).reshape(b, s, d)
        din, grads[f"{p}.ln1.gamma"], grads[f"{p}.ln1.beta"] = engine.layer_norm_vjp(
            da, lc["h_in"], params[f"{p}.ln1.gamma"])
        dhidden = dhidden + din
    dembed = np.zeros_like(params["embed"])
    np.add.at(dembed, src.reshape(-1), dhidden.reshape(b * s, d))
    grads["embed"] = dembed
    return loss, grads


def test_reference_model_matches_plain_transformer_bitwise() -> None:
    spec = ModelSpec(n_layers=1, d_model=16, n_heads=2, d_ff=32, vocab=11, seq_len=6)
    rng = np.random.default_rng(57)
    src = rng.integers(0, spec.vocab, size=(3, spec.seq_len))
    tgt = src[:, ::-1].copy()
    state_a = init_state(spec, seed=7)
    state_b = init_state(spec, seed=7)
    for _ in range(3):
        lr = lr_schedule(state_a.step + 1, 30, 0.05)
        loss_a, state_a = transformer_step((src, tgt), state_a, REF_CFG, None,
                                           StashBuffer(), spec, lr)
        loss_b, grads = plain_loss_and_grads(state_b.params, spec, src, tgt)
        adam_step(state_b, grads, lr)
        assert loss_a == loss_b
    for name in state_a.params:
        assert np.array_equal(state_a.params[name], state_b.params[name]), name


def test_zero_layer_model_is_embedding_plus_head() -> None:
    spec = ModelSpec(n_layers=0, d_model=8, n_heads=2, d_ff=16, vocab=9, seq_len=4)
    state = init_state(spec, seed=3)
    src = np.arange(8).reshape(2, 4) % spec.vocab
    loss, grads = plain_loss_and_grads(state.params, spec, src, src)
    loss2, _ = transformer_step((src, src), state, REF_CFG, None, StashBuffer(),
                                spec, lr=0.01)
    assert loss == loss2
    assert set(grads) == {"embed", "head", "final_ln.gamma", "final_ln.beta"}


# -------------------------------------------------------- step accounting

def test_step_touches_every_node_once() -> None:
    spec = ModelSpec.toy()
    state = init_state(spec, seed=1)
    rng = np.random.default_rng(58)
    src = rng.integers(0, spec.vocab, size=(2, spec.seq_len))
    stash = StashBuffer()
    transformer_step((src, src), state, REF_CFG, CostLedger(), stash, spec, lr=0.01)
    assert stash.writes == 2 * 8 + 1
    assert stash.reads == stash.writes
    assert stash.in_flight() == 0


def test_gradient_flush_traffic_matches_hand_count() -> None:
    # toy model: sum of M*K over nodes is 19456 per sequence
    spec = ModelSpec.toy()
    cfg = PrecisionConfig.from_bits("fixed", (16, 4, 4, 16))
    state = init_state(spec, seed=2)
    rng = np.random.default_rng(59)
    src = rng.integers(0, spec.vocab, size=(4, spec.seq_len))
    ledger = CostLedger()
    transformer_step((src, src), state, cfg, ledger, StashBuffer(), spec, lr=0.01)
    assert ledger.dram_bits[("act-grad", "write")] == 16 * 19456 * 4
    assert ledger.dram_bits[("act-grad", "read")] == 16 * 19456 * 4
    assert ledger.dram_bits[("stash", "write")] == 4 * 19456 * 4
    assert ledger.dram_bits[("stash", "read")] == 4 * 19456 * 4


# ---------------------------------------------------------------- optimizer

def test_adam_zero_gradients_leave_params_unchanged() -> None:
    spec = ModelSpec(n_layers=0, d_model=8, n_heads=1, d_ff=8, vocab=5, seq_len=4)
    state = init_state(spec, seed=4)
    before = {k: v.copy() for k, v in state.params.items()}
    grads = {k: np.zeros_like(v) for k, v in state.params.items()}
    adam_step(state, grads, lr=0.1)
    assert state.step == 1
    for name in before:
        assert np.array_equal(state.params[name], before[name])


def test_adam_first_step_closed_form() -> None:
    w0 = np.array([[1.0, -2.0], [0.5, 3.0]])
    g = np.array([[0.3, -0.1], [2.0, 0.0]])
    state = TrainState(params={"w": w0.copy()}, m={"w": np.zeros_like(w0)},
                       v={"w": np.zeros_like(w0)}, step=0, seed=0)
    adam_step(state, {"w": g}, lr=0.05)
    # bias correction cancels at t=1: update is lr * g / (|g| + eps)
    expect = w0 - 0.05 * g / (np.sqrt(g * g) + 1e-8)
    np.testing.assert_allclose(state.params["w"], expect, rtol=1e-14)
    with pytest.raises(ValueError):
        adam_step(state, {"w": g}, lr=0.0)


def test_adam_trajectory_against_mpmath() -> None:
    mp = mpmath.mp
    old_dps = mp.dps
    mp.dps = 50
    try:
        grads_seq = [0.3, -0.7, 0.11, 2.4, -0.002]
        lr, b1, b2, eps = 0.01, 0.9, 0.98, 1e-8
        w = mpmath.mpf("1.5")
        m = mpmath.mpf(0)
        v = mpmath.mpf(0)
        w0 = np.array([[1.5]])
        state = TrainState(params={"w": w0.copy()}, m={"w": np.zeros_like(w0)},
                           v={"w": np.zeros_like(w0)}, step=0, seed=0)
        for t, g in enumerate(grads_seq, start=1):
            adam_step(state, {"w": np.array([[g]])}, lr)
            gm = mpmath.mpf(g)
            m = b1 * m + (1 - mpmath.mpf("0.9")) * gm
            v = b2 * v + (1 - mpmath.mpf("0.98")) * gm * gm
            m_hat = m / (1 - mpmath.mpf("0.9") ** t)
            v_hat = v / (1 - mpmath.mpf("0.98") ** t)
            w = w - lr * m_hat / (mpmath.sqrt(v_hat) + mpmath.mpf(eps))
            assert abs(state.params["w"][0, 0] - float(w)) < 1e-13
    finally:
        mp.dps = old_dps


def test_lr_schedule_shape() -> None:
    base, warmup = 0.05, 30
    assert lr_schedule(1, warmup, base) == base * warmup**-1.5
    assert lr_schedule(warmup, warmup, base) == pytest.approx(base * warmup**-0.5)
    values = [lr_schedule(s, warmup, base) for s in range(1, 200)]
    peak = int(np.argmax(values)) + 1
    assert abs(peak - warmup) <= 1
    assert all(a <= b for a, b in zip(values[: warmup - 1], values[1:warmup]))
    assert all(a >= b for a, b in zip(values[warmup - 1 :], values[warmup:]))
    with pytest.raises(ValueError):
        lr_schedule(0, warmup, base)


# ------------------------------------------------------------------- tasks

def test_make_copy_task_variants_and_split() -> None:
    data = make_copy_task(vocab=8, seq_len=16, n_samples=100, seed=11)
    again = make_copy_task(vocab=8, seq_len=16, n_samples=100, seed=11)
    assert np.array_equal(data.train_src, again.train_src)
    assert data.train_src.shape == (75, 16)
    assert data.valid_src.shape == (25, 16)
    assert np.array_equal(data.train_tgt, data.train_src)
    rev = make_copy_task(vocab=8, seq_len=16, n_samples=40, seed=11, variant="reverse")
    assert np.array_equal(rev.valid_tgt, rev.valid_src[:, ::-1])
    with pytest.raises(ValueError):
        make_copy_task(vocab=3, seq_len=16, n_samples=10, seed=0)
    with pytest.raises(ValueError):
        make_copy_task(vocab=8, seq_len=16, n_samples=10, seed=0, variant="sort")


def test_make_copy_task_tokens_roughly_uniform() -> None:
    data = make_copy_task(vocab=8, seq_len=16, n_samples=10000, seed=12)
    tokens = np.concatenate([data.train_src.reshape(-1), data.valid_src.reshape(-1)])
    counts = np.bincount(tokens, minlength=8)
    expected = tokens.size / 8
    assert np.all(np.abs(counts - expected) < 0.05 * expected)


# -------------------------------------------------------------- train_run

def test_train_run_zero_epochs_reports_initial_state_only() -> None:
    spec = ModelSpec(n_layers=1, d_model=16, n_heads=2, d_ff=32, vocab=8, seq_len=8)
    task = make_copy_task(8, 8, 40, seed=13)
    report = train_run(spec, task, REF_CFG, epochs=0, seed=13)
    assert len(report.records) == 1
    assert report.records[0].epoch == 0
    assert report.records[0].train_loss is None
    assert report.summary["total_sequences"] == 0.0
    assert report.ledger.mac_units == 0.0
    assert report.summary["verdict"] == "ok"


def test_train_run_same_seed_is_reproducible() -> None:
    spec = ModelSpec(n_layers=1, d_model=16, n_heads=2, d_ff=32, vocab=8, seq_len=8)
    task = make_copy_task(8, 8, 40, seed=14)
    cfg = PrecisionConfig.from_bits("bfp", (16, 4, 4, 16))
    r1 = train_run(spec, task, cfg, epochs=2, seed=5)
    r2 = train_run(spec, task, cfg, epochs=2, seed=5)
    assert [rec.valid_loss for rec in r1.records] == [rec.valid_loss for rec in r2.records]
    assert [rec.train_loss for rec in r1.records] == [rec.train_loss for rec in r2.records]
    assert r1.summary == r2.summary


def test_live_ledger_matches_static_estimate() -> None:
    spec = ModelSpec(n_layers=1, d_model=16, n_heads=2, d_ff=32, vocab=8, seq_len=8)
    task = make_copy_task(8, 8, 40, seed=15)
    for cfg in (PrecisionConfig.uniform("fixed", 32),
                PrecisionConfig.from_bits("bfp", (16, 4, 4, 16))):
        report = train_run(spec, task, cfg, epochs=2, seed=6)
        sequences = report.summary["total_sequences"]
        static = estimate_static(spec, cfg, steps=sequences,
                                 table=default_unit_cost_table(),
                                 profile=default_traffic_profile())
        assert report.ledger.mac_units == pytest.approx(static.mac_units, rel=1e-9)
        assert report.ledger.mac_count == pytest.approx(static.mac_count, rel=1e-9)
        assert report.ledger.total_dram_bits() == pytest.approx(
            static.total_dram_bits(), rel=1e-9)


def test_train_run_flags_divergence() -> None:
    spec = ModelSpec(n_layers=1, d_model=16, n_heads=2, d_ff=32, vocab=8, seq_len=8)
    task = make_copy_task(8, 8, 40, seed=16)
    report = train_run(spec, task, REF_CFG, epochs=10, seed=7, lr_base=1e6)
    assert report.summary["verdict"] == "failed"
    assert report.summary["epochs_run"] < 10  # aborted early


def test_evaluate_is_pure() -> None:
    spec = ModelSpec(n_layers=1, d_model=16, n_heads=2, d_ff=32, vocab=8, seq_len=8)
    task = make_copy_task(8, 8, 40, seed=17)
    state = init_state(spec, seed=8)
    before = {k: v.copy() for k, v in state.params.items()}
    loss, acc = evaluate(state.params, spec, task.valid_src, task.valid_tgt,
                         REF_CFG, default_unit_cost_table(), default_traffic_profile())
    assert math.isfinite(loss)
    assert 0.0 <= acc <= 1.0
    for name in before:
        assert np.array_equal(state.params[name], before[name])
    # batching must not change the result
    loss2, acc2 = evaluate(state.params, spec, task.valid_src, task.valid_tgt,
                           REF_CFG, default_unit_cost_table(),
                           default_traffic_profile(), batch_size=3)
    assert loss2 == pytest.approx(loss, rel=1e-12)
    assert acc2 == acc

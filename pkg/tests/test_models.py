import itertools
import math

import numpy as np
import pytest

from gradcheck import nll_gradient_error
from isingpaths.exact import enumerate_states
from isingpaths.models import (
    GRUModel,
    RnnConfig,
    TokenSequence,
    TransformerConfig,
    build_model,
    causal_attention,
    causal_mask,
    generate,
    load_checkpoint,
    save_checkpoint,
    sequence_nll,
)
from isingpaths.paths import make_path
from isingpaths.training import fit_exact, oracle_kld

KINDS = ["rnn", "transformer"]


def all_sequences(N):
    return np.array(list(itertools.product([0, 1], repeat=N)))


def random_model(kind, N, seed=0, **kw):
    return build_model(kind, N, seed=seed, zero_head=False, **kw)


@pytest.mark.parametrize("kind", KINDS)
def test_uniform_initial_model(kind):
    m = build_model(kind, 16, seed=3)
    toks = np.random.default_rng(0).integers(0, 2, size=(7, 16))
    lp = m.conditional_logprobs(toks)
    np.testing.assert_array_equal(lp, np.full((7, 16), math.log(0.5)))
    assert sequence_nll(m, toks) == pytest.approx(16 * math.log(2), abs=1e-12)
    assert 16 * math.log(2) == pytest.approx(11.0904, abs=1e-4)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("N,tol", [(4, 1e-8), (16, 1e-6)])
def test_normalisation_random_params(kind, N, tol):
    for seed in range(3 if N == 4 else 1):
        m = random_model(kind, N, seed)
        total = np.exp(m.sequence_logprob(all_sequences(N))).sum()
        assert abs(total - 1) < tol


@pytest.mark.parametrize("kind", KINDS)
def test_causality_by_perturbation(kind):
    N = 16
    m = random_model(kind, N, seed=5)
    rng = np.random.default_rng(1)
    base = rng.integers(0, 2, size=(20, N))
    lp = m.conditional_logprobs(base)
    for t in range(N - 1):
        pert = base.copy()
        pert[:, t + 1:] = rng.integers(0, 2, size=(20, N - t - 1))
        lp2 = m.conditional_logprobs(pert)
        np.testing.assert_array_equal(lp2[:, :t + 1], lp[:, :t + 1])


def test_rnn_prefix_replay_bit_exact():
    N = 16
    m = random_model("rnn", N, seed=2)
    toks = np.random.default_rng(2).integers(0, 2, size=(10, N))
    full = m.conditional_logprobs(toks)
    for t in (0, 5, 11):
        short = GRUModel(RnnConfig(N=t + 1, zero_head=False), seed=2)
        short.params.restore(m.params.snapshot())
        np.testing.assert_array_equal(short.conditional_logprobs(toks[:, :t + 1]), full[:, :t + 1])


@pytest.mark.parametrize("kind", KINDS)
def test_incremental_path_matches_full_forward(kind):
    m = random_model(kind, 16, seed=4)
    toks = np.random.default_rng(3).integers(0, 2, size=(9, 16))
    np.testing.assert_allclose(m.step_logits(toks), m.logits(toks).value, atol=1e-12, rtol=0)


def test_sequence_length_mismatch():
    m = build_model("transformer", 16)
    with pytest.raises(ValueError):
        m.conditional_logprobs(np.zeros((2, 15), dtype=int))
    with pytest.raises(ValueError):
        TokenSequence(np.zeros(5, dtype=int), "zigzag", 2)


def test_token_sequence_input():
    m = random_model("rnn", 4)
    seq = TokenSequence(np.array([1, 0, 1, 1]), "zigzag", 2)
    lp = m.conditional_logprobs(seq)
    assert lp.shape == (4,)
    np.testing.assert_array_equal(lp, m.conditional_logprobs(seq.tokens[None])[0])


@pytest.mark.parametrize("kind", KINDS)
def test_sequence_nll_is_a_mean(kind):
    m = random_model(kind, 4, seed=1)
    one = np.array([[1, 0, 0, 1]])
    assert sequence_nll(m, np.repeat(one, 5, axis=0)) == pytest.approx(sequence_nll(m, one), abs=1e-14)
    with pytest.raises(ValueError):
        sequence_nll(m, np.zeros((0, 4), dtype=int))


SMALL = {"transformer": {"ff": 8, "embed": 8, "heads": 2}, "rnn": {"hidden": 4}}


@pytest.mark.parametrize("kind", KINDS)
def test_end_to_end_nll_gradient(kind):
    """Finite differences on one entry of every parameter array."""
    rng = np.random.default_rng(7)
    for instance in range(10):
        m = random_model(kind, 4, seed=instance, **SMALL[kind])
        toks = rng.integers(0, 2, size=(6, 4))
        assert nll_gradient_error(m, toks, rng) < 1e-4


def test_causal_attention_examples():
    rng = np.random.default_rng(0)
    q, k, v = (rng.normal(size=(1, 5, 3)) for _ in range(3))
    ctx, w = causal_attention(q, k, v, causal_mask(5), return_weights=True)
    w = w.value
    assert w[0, 0, 0] == 1.0
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)
    assert (w[0][causal_mask(5)] == 0).all()
    np.testing.assert_allclose(ctx.value, w @ v, atol=1e-14)
    k_eq = np.ones((1, 5, 3))
    _, w_eq = causal_attention(q, k_eq, v, causal_mask(5), return_weights=True)
    for t in range(5):
        np.testing.assert_allclose(w_eq.value[0, t, :t + 1], 1.0 / (t + 1), atol=1e-15)


def test_causal_attention_mask_mismatch():
    q = np.zeros((1, 4, 2))
    with pytest.raises(ValueError):
        causal_attention(q, q, q, causal_mask(5))


def test_transformer_config_validation():
    with pytest.raises(ValueError):
        TransformerConfig(N=4, embed=30, heads=4)


def test_default_hyperparameters():
    t = build_model("transformer", 64)
    assert (t.config.embed, t.config.heads, t.config.ff, t.config.blocks) == (32, 4, 512, 2)
    assert build_model("rnn", 64).config.hidden == 16


@pytest.mark.parametrize("kind", KINDS)
def test_generate_uniform_model(kind):
    m = build_model(kind, 16)
    toks = m.generate(np.random.default_rng(0), 4000)
    freq = toks.mean(axis=0)
    assert np.abs(freq - 0.5).max() < 4 * 0.5 / math.sqrt(4000)


@pytest.mark.parametrize("kind", KINDS)
def test_generate_matches_model_distribution(kind):
    m = random_model(kind, 4, seed=8)
    seqs = all_sequences(4)
    p = np.exp(m.sequence_logprob(seqs))
    n = 40_000
    toks = m.generate(np.random.default_rng(1), n)
    emp = np.bincount(toks @ (1 << np.arange(3, -1, -1)), minlength=16) / n
    assert 0.5 * np.abs(emp - p).sum() < 0.02


@pytest.mark.parametrize("kind", KINDS)
def test_generate_deterministic(kind):
    m = random_model(kind, 4, seed=8)
    a = generate(m, np.random.default_rng(5))
    b = generate(m, np.random.default_rng(5))
    np.testing.assert_array_equal(a.tokens, b.tokens)
    assert a.L == 2


@pytest.mark.parametrize("kind", KINDS)
def test_checkpoint_roundtrip(kind, tmp_path):
    m = random_model(kind, 4, seed=9)
    f = tmp_path / "m.ckpt"
    save_checkpoint(m, f, epoch=12, extra={"path": "zigzag"})
    m2, header = load_checkpoint(f)
    assert header["epoch"] == 12 and header["architecture"] == kind
    for (k, a), (k2, b) in zip(m.params.items(), m2.params.items()):
        assert k == k2
        np.testing.assert_array_equal(a.value, b.value)
    toks = all_sequences(4)
    np.testing.assert_array_equal(m.conditional_logprobs(toks), m2.conditional_logprobs(toks))


def test_checkpoint_layout(tmp_path):
    import json
    import struct
    m = random_model("rnn", 4, seed=1, hidden=2)
    f = tmp_path / "m.ckpt"
    save_checkpoint(m, f)
    raw = f.read_bytes()
    assert raw[:8] == b"ISPCKPT\n"
    (n,) = struct.unpack_from("<Q", raw, 8)
    header = json.loads(raw[16:16 + n])
    assert [p["name"] for p in header["params"]] == m.params.names()
    first = np.frombuffer(raw, dtype="<f8", count=6, offset=16 + n)
    np.testing.assert_array_equal(first, m.params["embed"].value.ravel()[:6])


@pytest.mark.parametrize("kind", KINDS)
def test_permutation_consistency_l2(kind):
    """Zigzag- and Hilbert-ordered models both reach the same KLD floor."""
    d = enumerate_states(2, 0.435)
    minima = []
    for pk in ("zigzag", "hilbert"):
        m = build_model(kind, 4, seed=0)
        hist = fit_exact(m, make_path(pk, 2), d, steps=1500, lr=1e-2)
        minima.append(min(hist))
        assert oracle_kld(m, make_path(pk, 2), d) >= 0
    assert abs(minima[0] - minima[1]) < 1e-3


def test_oracle_fitted_nll_equals_data_cross_entropy():
    d = enumerate_states(2, 0.435)
    path = make_path("zigzag", 2)
    m = build_model("transformer", 4, seed=0)
    fit_exact(m, path, d, steps=1500, lr=1e-2)
    assert oracle_kld(m, path, d) < 1e-3
    rng = np.random.default_rng(2)
    idx = rng.choice(16, size=5000, p=d.probs)
    states = d.states()[idx]
    toks = (path.flatten(states) > 0).astype(int)
    data_ce = -d.log_probs[idx].mean()
    assert sequence_nll(m, toks) == pytest.approx(data_ce, abs=0.01)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isingpaths.exact import enumerate_states, exact_observables
from isingpaths.ising import ThermalParams, sample_dataset
from isingpaths.models import build_model
from isingpaths.paths import make_path
from isingpaths.training import (
    Checkpoint,
    TrainConfig,
    TrainingDiverged,
    TrainingTrace,
    anisotropy_score,
    epochs_to_threshold,
    fit_exact,
    model_correlation,
    oracle_kld,
    plateau_length,
    sample_correlation,
    train,
)


@pytest.fixture(scope="module")
def small_data():
    return sample_dataset(ThermalParams(0.435, 4, 500, seed=11)).configs


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(split=1.0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    cfg = TrainConfig(epochs=100, checkpoint_scale=0.1)
    assert cfg.resolved_checkpoints() == [6, 21, 24]
    assert TrainConfig.from_dict({"epochs": 3, "checkpoint_epochs": [1, 2]}).checkpoint_epochs == (1, 2)


@pytest.mark.parametrize("kind", ["rnn", "transformer"])
def test_epoch_zero_is_uniform(kind, small_data):
    m = build_model(kind, 16, seed=0)
    tr = train(m, small_data, make_path("zigzag", 4), TrainConfig(epochs=0)).trace
    assert tr.epochs == [0]
    assert tr.val_nll[0] == pytest.approx(16 * math.log(2), abs=1e-12)
    assert tr.train_nll[0] == pytest.approx(16 * math.log(2), abs=1e-12)


def test_training_reduces_nll(small_data):
    m = build_model("rnn", 16, seed=0)
    tr = train(m, small_data, make_path("hilbert", 4), TrainConfig(epochs=5, batch_size=50)).trace
    assert tr.epochs == list(range(6))
    assert tr.val_nll[-1] < tr.val_nll[0] - 1.0


def test_shape_mismatch(small_data):
    with pytest.raises(ValueError):
        train(build_model("rnn", 64), small_data, make_path("zigzag", 4), TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        train(build_model("rnn", 16), small_data, make_path("zigzag", 8), TrainConfig(epochs=1))


@pytest.mark.parametrize("kind", ["rnn", "transformer"])
def test_bit_identical_rerun(kind, small_data, tmp_path):
    cfg = TrainConfig(epochs=2, batch_size=100, seed=4, checkpoint_epochs=(1, 2), n_model_samples=200)
    traces = []
    for i in range(2):
        m = build_model(kind, 16, seed=3, **({"ff": 32} if kind == "transformer" else {}))
        train(m, small_data, make_path("snake", 4), cfg, out_dir=tmp_path / str(i))
        traces.append(tmp_path / str(i))
    for f in ("trace.csv", "checkpoints.json", "final.ckpt"):
        assert (traces[0] / f).read_bytes() == (traces[1] / f).read_bytes()


def test_trace_roundtrip(small_data, tmp_path):
    m = build_model("rnn", 16, seed=0)
    cfg = TrainConfig(epochs=2, checkpoint_epochs=(2,), n_model_samples=100)
    tr = train(m, small_data, make_path("morton", 4), cfg, out_dir=tmp_path).trace
    header = (tmp_path / "trace.csv").read_text().splitlines()[0]
    assert header.startswith("epoch,train_nll,val_nll")
    back = TrainingTrace.load(tmp_path)
    assert back.val_nll == tr.val_nll and back.train_nll == tr.train_nll
    assert back.provenance["path"] == "morton"
    assert back.provenance["train_config"]["batch_size"] == 100
    np.testing.assert_array_equal(back.checkpoints[0].correlation, tr.checkpoints[0].correlation)


def test_trace_epochs_monotone():
    tr = TrainingTrace(N=4)
    tr.record(0, 1.0, 1.0)
    with pytest.raises(ValueError):
        tr.record(0, 1.0, 1.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_snapshot(small_data):
    m = build_model("rnn", 16, seed=0, zero_head=False)
    m.params["w_out"].value[...] = np.inf
    with pytest.raises(TrainingDiverged) as info:
        train(m, small_data, make_path("zigzag", 4), TrainConfig(epochs=1))
    assert info.value.epoch == 1
    assert set(info.value.snapshot) == set(m.params.names())


def test_transformer_l2_kld_drops_tenfold():
    d = enumerate_states(2, 0.435)
    path = make_path("zigzag", 2)
    data = sample_dataset(ThermalParams(0.435, 2, 2000, seed=1)).configs
    m = build_model("transformer", 4, seed=0)
    before = oracle_kld(m, path, d)
    train(m, data, path, TrainConfig(epochs=200, batch_size=100, checkpoint_epochs=()))
    after = oracle_kld(m, path, d)
    assert after <= before / 10


# --- correlation estimator ---------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([2, 4, 8]), st.integers(1, 40))
def test_sample_correlation_symmetry_and_origin(seed, L, n):
    s = np.random.default_rng(seed).choice([-1, 1], size=(n, L, L))
    G = sample_correlation(s)
    neg = np.roll(G[::-1, ::-1], 1, axis=(0, 1))
    np.testing.assert_array_equal(G, neg)
    m = s.mean(axis=0)
    assert G[0, 0] == pytest.approx(1 - (m ** 2).mean(), abs=1e-12)


def test_sample_correlation_matches_loop():
    s = np.random.default_rng(3).choice([-1, 1], size=(7, 4, 4))
    n, L = 7, 4
    m = s.mean(axis=0)
    for dy in range(L):
        for dx in range(L):
            acc = 0.0
            for y in range(L):
                for x in range(L):
                    y2, x2 = (y + dy) % L, (x + dx) % L
                    acc += (s[:, y, x] * s[:, y2, x2]).mean() - m[y, x] * m[y2, x2]
            assert sample_correlation(s)[dy, dx] == pytest.approx(acc / L ** 2, abs=1e-12)


def test_sample_correlation_converges_to_exact():
    d = enumerate_states(4, 0.435)
    rng = np.random.default_rng(0)
    states = d.states()[rng.choice(len(d.probs), size=20_000, p=d.probs)]
    G = sample_correlation(states)
    np.testing.assert_allclose(G, exact_observables(d)["correlation_table"], atol=0.03)


def test_uniform_model_correlation_vanishes():
    n = 4000
    G = model_correlation(build_model("transformer", 64), n, make_path("hilbert", 8),
                          np.random.default_rng(1))
    off = G.copy()
    off[0, 0] = 0
    assert np.abs(off).max() < 4 / math.sqrt(n)


def test_fitted_l2_model_correlation_matches_oracle():
    d = enumerate_states(2, 0.435)
    path = make_path("hilbert", 2)
    m = build_model("rnn", 4, seed=0)
    fit_exact(m, path, d, steps=1500, lr=1e-2)
    n = 20_000
    G = model_correlation(m, n, path, np.random.default_rng(0))
    exact = exact_observables(d)["correlation_table"]
    np.testing.assert_allclose(G, exact, atol=3 * 2 / math.sqrt(n))


# --- scalar diagnostics -----------------------------------------------------

def test_anisotropy_examples():
    G = np.zeros((8, 8))
    assert anisotropy_score(G) == 0.0
    G[0, 1:] = G[1:, 0] = 0.3
    assert anisotropy_score(G) == 0.0
    H = np.zeros((8, 8))
    H[1:5, 0] = 0.4
    assert anisotropy_score(H) == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(ValueError):
        anisotropy_score(np.zeros((4, 2)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=16, max_size=16))
def test_anisotropy_bounds_and_transpose(vals):
    G = np.array(vals).reshape(4, 4)
    a = anisotropy_score(G)
    assert 0.0 <= a <= 1.0
    assert anisotropy_score(G.T) == pytest.approx(a, abs=1e-12)


def test_epochs_to_threshold_examples():
    assert epochs_to_threshold([1.0, 0.9, 0.8], tol=0.5, reference=0.8) == 0
    assert epochs_to_threshold([5.0, 4.0, 3.0, 2.0, 1.0], tol=0.0, reference=3.0) == 2
    assert epochs_to_threshold([5.0, 4.0], tol=0.01, reference=1.0) is None
    assert epochs_to_threshold([3.0, 2.0, 1.0], tol=0.0) == 2


def test_plateau_length():
    N = 4
    # fast drop, 5 stalled epochs, another drop, then flat
    vals = [4.0, 2.0] + [2.0] * 5 + [1.0, 1.0, 1.0, 1.0]
    assert plateau_length(vals, N) == 5
    assert plateau_length(np.linspace(4, 1, 20), N) == 0
    assert plateau_length([1.0] * 10, N) == 0


def test_checkpoint_dict_roundtrip():
    c = Checkpoint(3, np.eye(2), 0.5, 10)
    back = Checkpoint.from_dict(c.to_dict())
    assert back.epoch == 3 and back.anisotropy == 0.5
    np.testing.assert_array_equal(back.correlation, np.eye(2))

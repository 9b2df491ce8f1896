import numpy as np
import pytest
from hypothesis import given, strategies as st

from isingpaths.paths import (
    KINDS,
    InvalidSizeError,
    SiteCoord,
    hilbert_path,
    inverse_map,
    locality_metrics,
    make_path,
    morton_path,
    snake_path,
    step_distances,
    zigzag_path,
)

SIDES = [2, 4, 8, 16, 32]


def morton_oracle(x, y, nbits):
    """Interleave bit by bit: x -> even bits, y -> odd bits."""
    t = 0
    for b in range(nbits):
        t |= ((x >> b) & 1) << (2 * b)
        t |= ((y >> b) & 1) << (2 * b + 1)
    return t


def test_zigzag_small():
    assert zigzag_path(2).order == [(0, 0), (1, 0), (0, 1), (1, 1)]
    assert zigzag_path(4)[5] == SiteCoord(1, 1)


def test_zigzag_row_wraps():
    d = step_distances(zigzag_path(4))
    assert len(d) == 15
    assert (d == 4).sum() == 3
    assert (d == 1).sum() == 12


def test_snake_small():
    assert snake_path(2).order == [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert snake_path(4)[7] == SiteCoord(0, 1)
    assert set(step_distances(snake_path(4))) == {1}


def test_hilbert_small():
    assert hilbert_path(2).order == [(0, 0), (0, 1), (1, 1), (1, 0)]
    assert (step_distances(hilbert_path(8)) == 1).all()
    assert len(set(hilbert_path(4).order)) == 16


def test_morton_small():
    assert morton_path(2).order == [(0, 0), (1, 0), (0, 1), (1, 1)]
    assert morton_path(4)[3] == SiteCoord(1, 1)
    assert step_distances(morton_path(4)).max() > 1


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("L", SIDES)
def test_bijection(kind, L):
    p = make_path(kind, L)
    assert len(set(p.order)) == L * L
    assert sorted(p.flat_sites.tolist()) == list(range(L * L))


@pytest.mark.parametrize("kind", ["hilbert", "snake"])
@pytest.mark.parametrize("L", SIDES)
def test_jump_free(kind, L):
    assert (step_distances(make_path(kind, L)) == 1).all()


@pytest.mark.parametrize("L", SIDES)
def test_morton_matches_interleave(L):
    nbits = L.bit_length() - 1
    p = morton_path(L)
    for t, (x, y) in enumerate(p.order):
        assert morton_oracle(x, y, nbits) == t


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("L", [2, 4, 8])
def test_inverse_map_roundtrip(kind, L):
    p = make_path(kind, L)
    for t, s in enumerate(p.order):
        assert inverse_map(p, s) == t
    for y in range(L):
        for x in range(L):
            assert p[inverse_map(p, (x, y))] == (x, y)


def test_inverse_map_examples():
    assert inverse_map(zigzag_path(2), (1, 1)) == 3
    assert inverse_map(snake_path(2), (0, 1)) == 3
    with pytest.raises(IndexError):
        inverse_map(zigzag_path(2), (2, 0))


@pytest.mark.parametrize("L", SIDES)
def test_zigzag_snake_relation(L):
    z, s = zigzag_path(L), snake_path(L)
    for y in range(L):
        zrow = z.order[y * L:(y + 1) * L]
        srow = s.order[y * L:(y + 1) * L]
        assert srow == (zrow if y % 2 == 0 else zrow[::-1])


def test_locality_metrics():
    m = locality_metrics(zigzag_path(4))
    assert m.mean_step == 24 / 15 == 1.6
    assert m.max_step == 4
    assert m.histogram == {1: 12, 4: 3}
    for L in SIDES:
        sm = locality_metrics(snake_path(L))
        assert (sm.mean_step, sm.max_step) == (1.0, 1)
    assert locality_metrics(hilbert_path(8)).mean_step == 1.0


@pytest.mark.parametrize("bad", [0, 1, 3, 6, 12, -4, 2.5])
@pytest.mark.parametrize("kind", KINDS)
def test_invalid_sizes(kind, bad):
    with pytest.raises(InvalidSizeError):
        make_path(kind, bad)


def test_unknown_kind():
    with pytest.raises(ValueError):
        make_path("peano", 4)


@given(st.sampled_from(KINDS), st.sampled_from(SIDES), st.data())
def test_flatten_unflatten(kind, L, data):
    p = make_path(kind, L)
    seed = data.draw(st.integers(0, 2**32 - 1))
    grid = np.random.default_rng(seed).integers(0, 5, size=(3, L, L))
    seq = p.flatten(grid)
    assert seq.shape == (3, L * L)
    assert seq[:, 0].tolist() == grid[:, p.ys[0], p.xs[0]].tolist()
    np.testing.assert_array_equal(p.unflatten(seq), grid)

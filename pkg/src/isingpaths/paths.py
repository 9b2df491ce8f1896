"""Autoregressive orderings of an L x L square lattice.

Four orderings are provided: zigzag (raster), snake (boustrophedon), Hilbert
and Morton (Z-order).  Sites are ``(x, y)`` pairs with ``x`` the column and
``y`` the row; a path of side ``L`` lists all ``L*L`` sites in sequence order.

Conventions
-----------
* Hilbert: starts at ``(0, 0)`` and ends at ``(L-1, 0)``.  For ``L=2`` the
  order is ``(0,0), (0,1), (1,1), (1,0)``.
* Morton: ``x`` takes the least-significant interleaved bit, so position
  ``t`` has ``x`` in the even bits of ``t`` and ``y`` in the odd bits.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

KINDS = ("zigzag", "snake", "hilbert", "morton")


class InvalidSizeError(ValueError):
    """Raised for lattice sides that are not a power of two >= 2."""


class SiteCoord(NamedTuple):
    x: int
    y: int


def _check_side(L: int) -> int:
    if isinstance(L, bool) or int(L) != L:
        raise InvalidSizeError(f"lattice side must be an integer, got {L!r}")
    L = int(L)
    if L < 2 or (L & (L - 1)) != 0:
        raise InvalidSizeError(f"lattice side must be a power of two >= 2, got {L}")
    return L


@dataclass(frozen=True)
class PathOrdering:
    """A bijection between lattice sites and sequence positions.

    ``xs[t], ys[t]`` is the site visited at position ``t``.  ``index[y, x]``
    is the inverse map.
    """

    side: int
    kind: str
    xs: np.ndarray
    ys: np.ndarray
    index: np.ndarray = field(repr=False)

    @classmethod
    def from_coords(cls, side: int, kind: str, xs, ys) -> "PathOrdering":
        xs = np.asarray(xs, dtype=np.int64)
        ys = np.asarray(ys, dtype=np.int64)
        n = side * side
        if xs.shape != (n,) or ys.shape != (n,):
            raise ValueError(f"expected {n} coordinates")
        if xs.min() < 0 or ys.min() < 0 or xs.max() >= side or ys.max() >= side:
            raise ValueError("coordinate out of range")
        index = np.full((side, side), -1, dtype=np.int64)
        index[ys, xs] = np.arange(n)
        if (index < 0).any():
            raise ValueError("ordering is not a bijection over the lattice")
        for a in (xs, ys, index):
            a.setflags(write=False)
        return cls(side, kind, xs, ys, index)

    @property
    def order(self) -> list[SiteCoord]:
        return [SiteCoord(int(x), int(y)) for x, y in zip(self.xs, self.ys)]

    @property
    def flat_sites(self) -> np.ndarray:
        """Row-major site index ``y*L + x`` for each sequence position."""
        return self.ys * self.side + self.xs

    def __len__(self) -> int:
        return self.side * self.side

    def __getitem__(self, t: int) -> SiteCoord:
        return SiteCoord(int(self.xs[t]), int(self.ys[t]))

    def flatten(self, configs: np.ndarray) -> np.ndarray:
        """Map ``(..., L, L)`` arrays indexed ``[y, x]`` to ``(..., L*L)`` in path order."""
        return configs[..., self.ys, self.xs]

    def unflatten(self, seqs: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`flatten`."""
        seqs = np.asarray(seqs)
        out = np.empty(seqs.shape[:-1] + (self.side, self.side), dtype=seqs.dtype)
        out[..., self.ys, self.xs] = seqs
        return out


def zigzag_path(L: int) -> PathOrdering:
    L = _check_side(L)
    t = np.arange(L * L)
    return PathOrdering.from_coords(L, "zigzag", t % L, t // L)


def snake_path(L: int) -> PathOrdering:
    L = _check_side(L)
    t = np.arange(L * L)
    ys = t // L
    xs = np.where(ys % 2 == 0, t % L, L - 1 - t % L)
    return PathOrdering.from_coords(L, "snake", xs, ys)


def _hilbert_d2xy(L: int, d: int) -> tuple[int, int]:
    x = y = 0
    s = 1
    while s < L:
        rx = 1 & (d // 2)
        ry = 1 & (d ^ rx)
        if ry == 0:
            if rx == 1:
                x, y = s - 1 - x, s - 1 - y
            x, y = y, x
        x += s * rx
        y += s * ry
        d //= 4
        s *= 2
    return x, y


def hilbert_path(L: int) -> PathOrdering:
    L = _check_side(L)
    coords = [_hilbert_d2xy(L, d) for d in range(L * L)]
    xs, ys = zip(*coords)
    return PathOrdering.from_coords(L, "hilbert", xs, ys)


def morton_decode(t, nbits: int):
    """De-interleave ``t`` into ``(x, y)``; x from even bits, y from odd bits."""
    t = np.asarray(t, dtype=np.int64)
    x = np.zeros_like(t)
    y = np.zeros_like(t)
    for b in range(nbits):
        x |= ((t >> (2 * b)) & 1) << b
        y |= ((t >> (2 * b + 1)) & 1) << b
    return x, y


def morton_path(L: int) -> PathOrdering:
    L = _check_side(L)
    nbits = L.bit_length() - 1
    xs, ys = morton_decode(np.arange(L * L), nbits)
    return PathOrdering.from_coords(L, "morton", xs, ys)


_BUILDERS = {
    "zigzag": zigzag_path,
    "snake": snake_path,
    "hilbert": hilbert_path,
    "morton": morton_path,
}


def make_path(kind: str, L: int) -> PathOrdering:
    try:
        builder = _BUILDERS[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown path kind {kind!r}; expected one of {KINDS}") from None
    return builder(L)


def inverse_map(p: PathOrdering, s) -> int:
    """Sequence position of site ``s = (x, y)``."""
    x, y = s
    if not (0 <= x < p.side and 0 <= y < p.side):
        raise IndexError(f"site {tuple(s)} outside {p.side}x{p.side} lattice")
    return int(p.index[y, x])


@dataclass(frozen=True)
class LocalityMetrics:
    mean_step: float
    max_step: int
    histogram: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "mean_step": self.mean_step,
            "max_step": self.max_step,
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
        }


def step_distances(p: PathOrdering) -> np.ndarray:
    """Open-grid Manhattan distance between consecutive path sites."""
    return np.abs(np.diff(p.xs)) + np.abs(np.diff(p.ys))


def locality_metrics(p: PathOrdering) -> LocalityMetrics:
    d = step_distances(p)
    hist = Counter(int(v) for v in d)
    return LocalityMetrics(float(d.mean()), int(d.max()), dict(sorted(hist.items())))

"""Monte Carlo sampling of the 2D nearest-neighbour Ising ferromagnet.

Configurations are ``(L, L)`` int8 arrays of +-1 indexed ``[y, x]`` with
periodic boundaries.  Every bond is counted once as the right and down
neighbour of each site; on the 2x2 lattice this doubles the coupling between
each neighbouring pair, which is the literal periodic reading of the
Hamiltonian and is what both the sampler and the exact oracle use.

Sampling uses a hybrid chain: ``clusters_per_block`` Wolff cluster flips
followed by one checkerboard Metropolis sweep make up one block.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

ALGORITHM = "wolff+metropolis"


def critical_beta() -> float:
    """Exact inverse critical temperature of the square-lattice model."""
    return math.log1p(math.sqrt(2.0)) / 2.0


def energy(spins: np.ndarray) -> float:
    """Total energy ``-sum s_i s_j`` over right/down periodic bonds.

    Accepts a single ``(L, L)`` configuration or a stack ``(..., L, L)``.
    """
    s = np.asarray(spins, dtype=np.int64)
    e = -(s * np.roll(s, -1, axis=-1)).sum(axis=(-2, -1))
    e = e - (s * np.roll(s, -1, axis=-2)).sum(axis=(-2, -1))
    return e if np.ndim(e) else int(e)


def local_field(spins: np.ndarray) -> np.ndarray:
    """Sum of the four neighbouring spins at each site (with multiplicity)."""
    s = spins.astype(np.int64)
    return (np.roll(s, 1, axis=-1) + np.roll(s, -1, axis=-1)
            + np.roll(s, 1, axis=-2) + np.roll(s, -1, axis=-2))


def metropolis_acceptance(delta_e, beta: float):
    """``min(1, exp(-beta * dE))``."""
    return np.minimum(1.0, np.exp(-beta * np.asarray(delta_e, dtype=float)))


def wolff_add_probability(beta: float) -> float:
    return -math.expm1(-2.0 * beta)


def _checkerboard(L: int) -> tuple[np.ndarray, np.ndarray]:
    y, x = np.indices((L, L))
    even = (x + y) % 2 == 0
    return even, ~even


def metropolis_sweep(spins: np.ndarray, beta: float, rng: np.random.Generator) -> np.ndarray:
    """One sweep of L*L single-spin Metropolis attempts, in place.

    Sites are updated by sublattice (even then odd parity); spins of one
    sublattice only couple to the other, so each half-sweep is a set of
    independent single-spin updates.
    """
    L = spins.shape[0]
    for mask in _checkerboard(L):
        dE = 2 * spins.astype(np.int64) * local_field(spins)
        u = rng.random((L, L))
        flip = mask & (u < metropolis_acceptance(dE, beta))
        spins[flip] *= -1
    return spins


def _neighbour_table(L: int) -> list[tuple[int, int, int, int]]:
    table = []
    for i in range(L * L):
        y, x = divmod(i, L)
        table.append((y * L + (x + 1) % L, y * L + (x - 1) % L,
                      ((y + 1) % L) * L + x, ((y - 1) % L) * L + x))
    return table


def wolff_update(spins: np.ndarray, beta: float, rng: np.random.Generator,
                 _nbrs: list | None = None) -> int:
    """Grow and flip one Wolff cluster in place; returns the cluster size."""
    L = spins.shape[0]
    nbrs = _nbrs if _nbrs is not None else _neighbour_table(L)
    flat = spins.reshape(-1)
    p_add = wolff_add_probability(beta)
    seed = int(rng.integers(L * L))
    s0 = flat[seed]
    in_cluster = bytearray(L * L)
    in_cluster[seed] = 1
    stack = [seed]
    members = [seed]
    state = flat.tolist()
    while stack:
        i = stack.pop()
        for j in nbrs[i]:
            if not in_cluster[j] and state[j] == s0 and rng.random() < p_add:
                in_cluster[j] = 1
                stack.append(j)
                members.append(j)
    flat[members] = -s0
    return len(members)


@dataclass(frozen=True)
class ThermalParams:
    beta: float
    L: int
    n_samples: int
    seed: int = 0
    decorrelation_sweeps: int = 1
    equilibration_sweeps: int = 1000
    clusters_per_block: int = 5
    n_chains: int = 1

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if min(self.L, self.n_samples, self.decorrelation_sweeps, self.n_chains) <= 0:
            raise ValueError("counts must be positive")
        if self.equilibration_sweeps < 0 or self.clusters_per_block < 0:
            raise ValueError("counts must be non-negative")


@dataclass(frozen=True)
class SampleBatch:
    params: ThermalParams
    configs: np.ndarray  # (n, L, L) int8
    energy_per_site: tuple[float, float]  # mean, standard error
    abs_magnetization: tuple[float, float]

    def __len__(self) -> int:
        return len(self.configs)


def _mean_sem(v: np.ndarray) -> tuple[float, float]:
    v = np.asarray(v, dtype=float)
    if len(v) < 2:
        return float(v.mean()), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def batch_statistics(configs: np.ndarray) -> tuple[tuple[float, float], tuple[float, float]]:
    N = configs.shape[-1] * configs.shape[-2]
    e = energy(configs) / N
    m = np.abs(configs.reshape(len(configs), -1).astype(np.int64).sum(axis=1)) / N
    return _mean_sem(e), _mean_sem(m)


def hybrid_block(spins, beta, rng, n_clusters, nbrs):
    for _ in range(n_clusters):
        wolff_update(spins, beta, rng, nbrs)
    metropolis_sweep(spins, beta, rng)


def _run_chain(p: ThermalParams, n: int, rng: np.random.Generator) -> np.ndarray:
    L = p.L
    nbrs = _neighbour_table(L)
    spins = rng.choice(np.array([-1, 1], dtype=np.int8), size=(L, L))
    for _ in range(p.equilibration_sweeps):
        hybrid_block(spins, p.beta, rng, p.clusters_per_block, nbrs)
    out = np.empty((n, L, L), dtype=np.int8)
    for k in range(n):
        for _ in range(p.decorrelation_sweeps):
            hybrid_block(spins, p.beta, rng, p.clusters_per_block, nbrs)
        out[k] = spins
    return out


def chain_generators(seed: int, n_chains: int) -> list[np.random.Generator]:
    """Independent PCG64 streams, one per chain."""
    children = np.random.SeedSequence(seed).spawn(n_chains)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def sample_dataset(p: ThermalParams) -> SampleBatch:
    """Equilibrate, then record one configuration per ``decorrelation_sweeps`` blocks."""
    rngs = chain_generators(p.seed, p.n_chains)
    counts = [p.n_samples // p.n_chains + (i < p.n_samples % p.n_chains)
              for i in range(p.n_chains)]
    configs = np.concatenate([_run_chain(p, c, r) for c, r in zip(counts, rngs)])
    e_stats, m_stats = batch_statistics(configs)
    return SampleBatch(p, configs, e_stats, m_stats)


def autocorrelation(series, lag: int = 1) -> float:
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    var = (x * x).mean()
    if var == 0:
        return 0.0
    return float((x[:-lag] * x[lag:]).mean() / var)


# --- dataset files ---------------------------------------------------------
#
# Line 1: JSON header {"L", "beta", "n", "seed", "algorithm", ...}.
# Then one line per configuration: L*L characters in {0, 1}, row-major
# (zigzag) site order, 0 <-> -1 and 1 <-> +1.

def write_dataset(batch: SampleBatch, path) -> None:
    p = batch.params
    header = {"L": p.L, "beta": p.beta, "n": len(batch), "seed": p.seed,
              "algorithm": ALGORITHM, "params": asdict(p)}
    bits = (batch.configs.reshape(len(batch), -1) > 0).astype(np.uint8) + ord("0")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for row in bits:
            fh.write(row.tobytes().decode("ascii") + "\n")


def read_dataset(path) -> tuple[dict, np.ndarray]:
    """Return ``(header, configs)`` with configs shaped ``(n, L, L)`` in +-1."""
    text = Path(path).read_text(encoding="ascii").splitlines()
    header = json.loads(text[0])
    L = int(header["L"])
    rows = [r for r in text[1:] if r]
    if any(len(r) != L * L for r in rows):
        raise ValueError(f"{path}: record length does not match L={L}")
    raw = np.frombuffer("".join(rows).encode("ascii"), dtype=np.uint8) - ord("0")
    if raw.size and raw.max() > 1:
        raise ValueError(f"{path}: records must contain only 0/1")
    configs = (2 * raw.astype(np.int8) - 1).reshape(len(rows), L, L)
    if "n" in header and header["n"] != len(rows):
        raise ValueError(f"{path}: header says n={header['n']} but found {len(rows)} records")
    return header, configs


def load_batch(path) -> SampleBatch:
    header, configs = read_dataset(path)
    params = header.get("params") or {"beta": header["beta"], "L": header["L"],
                                      "n_samples": header["n"], "seed": header["seed"]}
    p = ThermalParams(**params)
    e_stats, m_stats = batch_statistics(configs)
    return SampleBatch(p, configs, e_stats, m_stats)

"""NLL training loop and the correlation diagnostics used to monitor it."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import no_grad
from .exact import ExactDistribution, model_kld
from .models import ARModel, save_checkpoint, spins_to_tokens, tokens_to_spins
from .optim import AdamState, NonFiniteGradientError, adam_step
from .paths import PathOrdering

log = logging.getLogger(__name__)

PAPER_CHECKPOINTS = (61, 211, 241, 3200)


class TrainingDiverged(FloatingPointError):
    """Raised when the loss or a gradient becomes non-finite.

    ``snapshot`` holds the parameters from before the offending step.
    """

    def __init__(self, message, epoch, snapshot):
        super().__init__(message)
        self.epoch = epoch
        self.snapshot = snapshot


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    lr: float = 1e-3
    split: float = 0.8
    seed: int = 0
    checkpoint_epochs: tuple = PAPER_CHECKPOINTS
    checkpoint_scale: float = 1.0
    n_model_samples: int = 10_000
    eval_batch_size: int = 2000

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ValueError("split fraction must lie in (0, 1)")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0 or self.batch_size <= 0:
            raise ValueError("epochs must be >= 0 and batch_size > 0")
        object.__setattr__(self, "checkpoint_epochs", tuple(int(e) for e in self.checkpoint_epochs))

    def resolved_checkpoints(self) -> list[int]:
        eps = {max(1, int(round(e * self.checkpoint_scale))) for e in self.checkpoint_epochs}
        return sorted(e for e in eps if e <= self.epochs)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "checkpoint_epochs" in d:
            d["checkpoint_epochs"] = tuple(d["checkpoint_epochs"])
        return cls(**d)


@dataclass
class Checkpoint:
    epoch: int
    correlation: np.ndarray
    anisotropy: float
    n_model_samples: int

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "anisotropy": self.anisotropy,
                "n_model_samples": self.n_model_samples,
                "correlation": self.correlation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        return cls(d["epoch"], np.asarray(d["correlation"], dtype=float), d["anisotropy"],
                   d["n_model_samples"])


@dataclass
class TrainingTrace:
    N: int
    epochs: list = field(default_factory=list)
    train_nll: list = field(default_factory=list)
    val_nll: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def record(self, epoch, train, val):
        if self.epochs and epoch <= self.epochs[-1]:
            raise ValueError("epoch indices must increase")
        self.epochs.append(int(epoch))
        self.train_nll.append(float(train))
        self.val_nll.append(float(val))

    @property
    def final_val(self) -> float:
        return self.val_nll[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_nll", "val_nll", "train_nll_per_site", "val_nll_per_site"])
        for e, tr, va in zip(self.epochs, self.train_nll, self.val_nll):
            w.writerow([e, repr(tr), repr(va), repr(tr / self.N), repr(va / self.N)])
        return buf.getvalue()

    def checkpoints_json(self) -> str:
        return json.dumps({"provenance": self.provenance,
                           "checkpoints": [c.to_dict() for c in self.checkpoints]},
                          indent=1, sort_keys=True)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "trace.csv").write_text(self.to_csv())
        (d / "checkpoints.json").write_text(self.checkpoints_json())

    @classmethod
    def load(cls, directory) -> "TrainingTrace":
        d = Path(directory)
        meta = json.loads((d / "checkpoints.json").read_text())
        rows = list(csv.DictReader((d / "trace.csv").read_text().splitlines()))
        prov = meta["provenance"]
        tr = cls(N=prov["N"], provenance=prov)
        for r in rows:
            tr.record(int(r["epoch"]), float(r["train_nll"]), float(r["val_nll"]))
        tr.checkpoints = [Checkpoint.from_dict(c) for c in meta["checkpoints"]]
        return tr


# --- diagnostics -----------------------------------------------------------

def sample_correlation(configs: np.ndarray) -> np.ndarray:
    """Connected two-point function estimated from ``(n, L, L)`` +-1 samples.

    ``G[dy, dx] = (1/N) sum_x <s_x s_{x+d}> - <s_x><s_{x+d}>`` with sample
    averages and periodic displacements.  Sums are taken in integers so the
    table is exactly symmetric under ``d -> -d``.
    """
    s = np.asarray(configs, dtype=np.int64)
    n, L, _ = s.shape
    N = L * L
    S = s.sum(axis=0)
    G = np.empty((L, L))
    for dy in range(L):
        for dx in range(L):
            pair = int((s * np.roll(s, (-dy, -dx), axis=(1, 2))).sum())
            mean_pair = int((S * np.roll(S, (-dy, -dx), axis=(0, 1))).sum())
            G[dy, dx] = pair / (n * N) - mean_pair / (n * n * N)
    return G


def model_correlation(model: ARModel, n_model_samples: int, path: PathOrdering,
                      rng: np.random.Generator) -> np.ndarray:
    """Sample the model, map sequences back onto the lattice and estimate G."""
    tokens = model.generate(rng, n_model_samples)
    return sample_correlation(path.unflatten(tokens_to_spins(tokens)))


def anisotropy_score(G: np.ndarray, eps0: float = 1e-9) -> float:
    """Normalised axial asymmetry of a correlation table ``G[dy, dx]``.

    ``sum_r |G(r,0) - G(0,r)| / sum_r (|G(r,0)| + |G(0,r)| + eps0)`` for
    ``r = 1..L/2``; 0 for an isotropic table, 1 when one axis is empty.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError("correlation table must be square")
    r = np.arange(1, G.shape[0] // 2 + 1)
    gx, gy = G[0, r], G[r, 0]
    return float(np.abs(gx - gy).sum() / (np.abs(gx) + np.abs(gy) + eps0).sum())


def epochs_to_threshold(trace, tol: float, reference: float | None = None):
    """First epoch whose validation NLL is within ``(1 + tol)`` of ``reference``.

    ``reference`` defaults to the trace's own final validation NLL; run
    groups pass the best final NLL across all their members.  Returns None
    when the threshold is never reached.
    """
    epochs, vals = _epochs_vals(trace)
    ref = vals[-1] if reference is None else reference
    hit = np.flatnonzero(vals <= (1.0 + tol) * ref)
    return int(epochs[hit[0]]) if hit.size else None


def plateau_length(trace, N: int | None = None, threshold: float = 1e-3, tol: float = 0.01) -> int:
    """Longest run of stalled epochs before convergence.

    An epoch is stalled when the validation NLL improves by less than
    ``threshold`` nats per site over the previous epoch.  Only epochs before
    the trace first comes within ``tol`` of its best validation NLL count,
    so the flat tail after convergence is excluded.
    """
    epochs, vals = _epochs_vals(trace)
    if N is None:
        N = trace.N
    conv = epochs_to_threshold((epochs, vals), tol, reference=float(vals.min()))
    stalled = (vals[:-1] - vals[1:]) / N < threshold
    best = run = 0
    for e, s in zip(epochs[1:], stalled):
        if conv is not None and e >= conv:
            break
        run = run + 1 if s else 0
        best = max(best, run)
    return best


def _epochs_vals(trace):
    if isinstance(trace, TrainingTrace):
        return np.asarray(trace.epochs), np.asarray(trace.val_nll, dtype=float)
    if isinstance(trace, tuple):
        return np.asarray(trace[0]), np.asarray(trace[1], dtype=float)
    vals = np.asarray(trace, dtype=float)
    return np.arange(len(vals)), vals


# --- exact-oracle helpers (L <= 4) ----------------------------------------

def state_tokens(d: ExactDistribution, path: PathOrdering) -> np.ndarray:
    """Every lattice state, flattened along ``path``, in oracle state order."""
    return spins_to_tokens(path.flatten(d.states()))


def model_state_logprobs(model: ARModel, path: PathOrdering, d: ExactDistribution) -> np.ndarray:
    return model.sequence_logprob(state_tokens(d, path))


def oracle_kld(model: ARModel, path: PathOrdering, d: ExactDistribution) -> float:
    """``KL(p || q)`` between the Boltzmann distribution and the model."""
    return model_kld(d, model_state_logprobs(model, path, d))


def fit_exact(model: ARModel, path: PathOrdering, d: ExactDistribution,
              steps: int = 1000, lr: float = 1e-2) -> list[float]:
    """Full-batch Adam on the exact cross-entropy ``-sum_s p(s) log q(s)``.

    Returns the KL divergence after every step.
    """
    tokens = state_tokens(d, path)
    p = d.probs
    keep = p > 1e-300
    tokens, p = tokens[keep], p[keep]
    entropy = float(-(p * np.log(p)).sum())
    opt = AdamState(lr=lr)
    values = {k: t.value for k, t in model.params.items()}
    history = []
    for _ in range(steps):
        model.params.zero_grad()
        lp = ad.tsum(model.token_logprobs(tokens), axis=1)
        loss = ad.neg(ad.tsum(ad.mul(lp, p)))
        loss.backward()
        history.append(float(loss.value) - entropy)
        adam_step(values, model.params.grads(), opt)
    return history


# --- training --------------------------------------------------------------

def split_dataset(tokens: np.ndarray, split: float) -> tuple[np.ndarray, np.ndarray]:
    n_train = int(round(split * len(tokens)))
    if n_train == 0 or n_train == len(tokens):
        raise ValueError("split leaves an empty training or validation set")
    return tokens[:n_train], tokens[n_train:]


def evaluate_nll(model: ARModel, tokens: np.ndarray, batch_size: int = 2000) -> float:
    total = 0.0
    with no_grad():
        for i in range(0, len(tokens), batch_size):
            total += float(model.token_logprobs(tokens[i:i + batch_size]).value.sum())
    return -total / len(tokens)


@dataclass
class TrainResult:
    trace: TrainingTrace
    model: ARModel
    optimizer: AdamState


def _streams(seed: int):
    shuffle, diag = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(shuffle), np.random.default_rng(diag)


def train(model: ARModel, dataset, path: PathOrdering, cfg: TrainConfig,
          out_dir=None, provenance: dict | None = None) -> TrainResult:
    """Mini-batch Adam on the NLL of path-flattened configurations.

    ``dataset`` is an ``(n, L, L)`` +-1 array or a SampleBatch.  The first
    ``split`` fraction is the training set, the rest validation.  Epoch 0
    records the untrained model.  For epochs >= 1 ``train_nll`` is the mean
    minibatch loss over the epoch and ``val_nll`` is evaluated afterwards.
    """
    configs = getattr(dataset, "configs", dataset)
    configs = np.asarray(configs)
    if configs.shape[1:] != (path.side, path.side):
        raise ValueError(f"dataset lattice {configs.shape[1:]} does not match path side {path.side}")
    if model.N != path.side ** 2:
        raise ValueError(f"model length {model.N} does not match lattice with {path.side ** 2} sites")
    tokens = spins_to_tokens(path.flatten(configs))
    train_tok, val_tok = split_dataset(tokens, cfg.split)
    shuffle_rng, diag_rng = _streams(cfg.seed)
    opt = AdamState(lr=cfg.lr)
    checkpoints = set(cfg.resolved_checkpoints())

    trace = TrainingTrace(N=model.N, provenance={
        "N": model.N, "L": path.side, "path": path.kind, "model": model.kind,
        "model_config": asdict(model.config), "model_seed": model.seed,
        "train_config": asdict(cfg), "n_train": len(train_tok), "n_val": len(val_tok),
        "checkpoint_epochs": sorted(checkpoints), **(provenance or {}),
    })

    def diagnose(epoch):
        G = model_correlation(model, cfg.n_model_samples, path, diag_rng)
        trace.checkpoints.append(Checkpoint(epoch, G, anisotropy_score(G), cfg.n_model_samples))

    trace.record(0, evaluate_nll(model, train_tok, cfg.eval_batch_size),
                 evaluate_nll(model, val_tok, cfg.eval_batch_size))
    if 0 in checkpoints:
        diagnose(0)
    params = model.params
    values = {k: p.value for k, p in params.items()}
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(train_tok))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            batch = train_tok[order[i:i + cfg.batch_size]]
            params.zero_grad()
            loss = model.nll(batch)
            lv = float(loss.value)
            if not math.isfinite(lv):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", epoch, params.snapshot())
            loss.backward()
            try:
                adam_step(values, params.grads(), opt)
            except NonFiniteGradientError as exc:
                raise TrainingDiverged(str(exc), epoch, params.snapshot()) from exc
            losses.append(lv * len(batch))
        trace.record(epoch, sum(losses) / len(train_tok),
                     evaluate_nll(model, val_tok, cfg.eval_batch_size))
        if epoch in checkpoints:
            diagnose(epoch)
        log.debug("epoch %d train %.5f val %.5f", epoch, trace.train_nll[-1], trace.val_nll[-1])

    if out_dir is not None:
        trace.save(out_dir)
        save_checkpoint(model, Path(out_dir) / "final.ckpt", epoch=cfg.epochs,
                        extra={"path": path.kind, "L": path.side})
    return TrainResult(trace, model, opt)

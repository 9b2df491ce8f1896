"""Central finite-difference gradient checking for the autodiff engine."""

import numpy as np

from isingpaths.autodiff import Tensor, backward, tsum, mul


def numeric_grad(f, arrays, i, h=1e-4):
    """Central-difference gradient of scalar ``f(*arrays)`` w.r.t. ``arrays[i]``."""
    x = arrays[i]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f(*arrays)
        x[idx] = old - h
        fm = f(*arrays)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def check_op(op, arrays, rng, h=1e-4, wrt=None):
    """Project ``op`` onto a random direction and compare both gradients.

    Returns the worst relative error over the inputs listed in ``wrt``.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    wrt = range(len(arrays)) if wrt is None else wrt
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*ts)
    w = rng.normal(size=out.shape)
    backward(tsum(mul(out, w)))

    def scalar(*xs):
        return float((op(*[Tensor(x) for x in xs]).value * w).sum())

    worst = 0.0
    for i in wrt:
        num = numeric_grad(scalar, arrays, i, h)
        ana = ts[i].grad if ts[i].grad is not None else np.zeros_like(arrays[i])
        worst = max(worst, relative_error(ana, num))
    return worst


def nll_gradient_error(model, tokens, rng, h=1e-4):
    """Worst relative error of the NLL gradient over one random entry per parameter.

    Entries whose gradient and finite difference are both below 1e-9 count as
    exact agreement.
    """
    model.params.zero_grad()
    backward(model.nll(tokens))
    worst = 0.0
    for _, p in model.params.items():
        idx = tuple(int(rng.integers(0, n)) for n in p.shape)
        old = p.value[idx]

        def f(v):
            p.value[idx] = v[0]
            return float(model.nll(tokens).value)
        num = numeric_grad(f, [np.array([old])], 0, h)[0]
        p.value[idx] = old
        ana = p.grad[idx]
        if abs(ana) < 1e-9 and abs(num) < 1e-9:
            continue
        worst = max(worst, relative_error(ana, num))
    return worst

"""Central finite-difference gradient checks for the autodiff engine."""
import numpy as np

from oatdiff.nn.tensor import Tensor


def numeric_grad(f, arrays, i, h=1e-6):
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


def rel_err(a, b, floor=1e-6):
    # the floor absorbs finite-difference noise on gradients that are exactly zero
    # (e.g. a key bias under softmax shift invariance)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def check_op(op, *arrays, h=1e-6, seed=0):
    """Worst relative error of d(sum(w * op(...)))/d(input) over all inputs.

    A fixed random weighting ``w`` makes the scalar sensitive to every output.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out0 = op(*[Tensor(a) for a in arrays]).data
    w = np.random.default_rng(seed).standard_normal(out0.shape)

    def scalar(*arrs):
        return float(np.sum(op(*[Tensor(a) for a in arrs]).data * w))

    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*ts)
    out.backward(w)
    worst = 0.0
    for i, t in enumerate(ts):
        num = numeric_grad(scalar, arrays, i, h)
        ana = t.grad if t.grad is not None else np.zeros_like(num)
        worst = max(worst, rel_err(ana, num))
    return worst


def check_module(module, loss_fn, h=1e-6, max_per_param=6, seed=0):
    """Finite-difference check of ``loss_fn()`` w.r.t. a sample of every parameter's entries."""
    module.zero_grad()
    loss_fn().backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in module.named_parameters():
        ana = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(max_per_param, flat.size), replace=False)
        num = np.zeros(len(picks))
        for j, k in enumerate(picks):
            old = flat[k]
            flat[k] = old + h
            fp = float(loss_fn().data)
            flat[k] = old - h
            fm = float(loss_fn().data)
            flat[k] = old
            num[j] = (fp - fm) / (2 * h)
        worst = max(worst, rel_err(ana.reshape(-1)[picks], num, floor=1e-4))
    module.zero_grad()
    return worst

"""Independent reference computations used by the test-suite."""

import math

import numpy as np


def numerical_grad(f, arrays, h=1e-5):
    """Central differences of scalar ``f(*arrays)`` with respect to each array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + h
            fp = f(*arrays)
            a[idx] = old - h
            fm = f(*arrays)
            a[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_grads(build, arrays, h=1e-5):
    """Compare autodiff gradients of ``build(*tensors)`` against central differences.

    ``build`` receives Tensors and must return a scalar Tensor.  Returns the
    worst relative error over all inputs.
    """
    from compcaps.tensor import Tensor

    arrays = [np.array(a, dtype=float) for a in arrays]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    build(*tensors).backward(tensors)
    analytic = [t.grad for t in tensors]

    def f(*arrs):
        return build(*[Tensor(x) for x in arrs]).item()

    numeric = numerical_grad(f, arrays, h)
    return max(rel_err(a, n) for a, n in zip(analytic, numeric))


def squash_ref(s):
    s = np.asarray(s, dtype=float)
    n2 = float(s @ s)
    if n2 == 0:
        return np.zeros_like(s)
    return n2 / (1 + n2) * s / np.sqrt(n2)


def softmax_ref(z):
    e = [np.exp(v - max(z)) for v in z]
    t = sum(e)
    return np.array([v / t for v in e])


def hand_routing(u_hat, iters):
    """Plain-python routing loop over lists; returns per-iteration (b, c, s, v)."""
    I, J, D = u_hat.shape
    b = [[0.0] * J for _ in range(I)]
    steps = []
    for it in range(iters):
        c = []
        for i in range(I):
            m = max(b[i])
            e = [math.exp(x - m) for x in b[i]]
            t = sum(e)
            c.append([x / t for x in e])
        s = [[sum(c[i][j] * u_hat[i, j, d] for i in range(I)) for d in range(D)] for j in range(J)]
        v = []
        for j in range(J):
            n2 = sum(x * x for x in s[j])
            f = n2 / (1 + n2) / math.sqrt(n2) if n2 > 0 else 0.0
            v.append([f * x for x in s[j]])
        steps.append({"b": np.array(b), "c": np.array(c), "s": np.array(s), "v": np.array(v)})
        if it < iters - 1:
            b = [[b[i][j] + sum(u_hat[i, j, d] * v[j][d] for d in range(D)) for j in range(J)] for i in range(I)]
    return steps


def roc_oracle(s, pos):
    pts = {(0.0, 0.0), (1.0, 1.0)}
    for thr in set(s):
        tp = sum(1 for a, b in zip(s, pos) if a >= thr and b)
        fp = sum(1 for a, b in zip(s, pos) if a >= thr and not b)
        pts.add((fp / (len(pos) - sum(pos)), tp / sum(pos)))
    return pts

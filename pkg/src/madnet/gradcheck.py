"""Central-difference gradient checking."""

import numpy as np

from .tensor import ContractError


def numerical_grad(f, inputs, h=1e-5):
    """Central differences of scalar ``f(*inputs)`` wrt every element of every input."""
    grads = []
    for t in inputs:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*inputs).item()
            flat[i] = orig - h
            fm = f(*inputs).item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def analytic_grad(f, inputs):
    saved = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    f(*inputs).backward()
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    for t, flag in zip(inputs, saved):
        t.requires_grad = flag
        t.grad = None
    return grads


def grad_check(f, inputs, h=1e-5, atol=1e-5):
    """Return the max relative error between backprop and central differences.

    Relative error per element is ``|a - b| / max(|a|, |b|, atol)``.  The
    floor matters only where the true gradient is (near) zero: there the
    central difference is pure roundoff, about eps * |f| / h ~ 1e-10, and a
    ratio against zero means nothing.  Inputs must be float64 leaf tensors;
    ``f`` must return a scalar tensor.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise ContractError("grad_check needs float64 inputs")
    if not 1e-6 <= h <= 1e-4:
        raise ContractError(f"grad_check step h={h} outside [1e-6, 1e-4]")
    analytic = analytic_grad(f, inputs)
    numeric = numerical_grad(f, inputs, h)
    worst = 0.0
    for a, b in zip(analytic, numeric):
        if a.size == 0:
            continue
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), atol)
        worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst

"""Shared test utilities: finite-difference gradient checking."""

import numpy as np

from speechalign import numerics as nm


def fd_gradcheck(fn, tensors, h=1e-5, rtol=1e-6, atol=1e-10, sample=None, rng=None):
    """Compare tape gradients of scalar fn(*tensors) against central differences.

    fn must rebuild its computation from the tensors' current data on every
    call. Checks every entry unless ``sample`` caps the count per tensor.
    Returns the worst relative error seen.
    """
    for t in tensors:
        t.zero_grad()
    with nm.recording() as tape:
        loss = fn(*tensors)
    nm.backward(loss, tape)
    analytic = [t.grad.copy() for t in tensors]

    worst = 0.0
    for t, grad in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        idxs = range(flat.size)
        if sample is not None and flat.size > sample:
            picker = rng or np.random.default_rng(0)
            idxs = picker.choice(flat.size, size=sample, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            hi = fn(*tensors).item()
            flat[i] = orig - h
            lo = fn(*tensors).item()
            flat[i] = orig
            numeric = (hi - lo) / (2 * h)
            a = grad.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), atol / rtol)
            worst = max(worst, err)
            assert err <= rtol, (
                f"gradient mismatch at entry {i}: analytic {a!r} vs numeric {numeric!r} "
                f"(rel err {err:.3e})"
            )
    return worst


def random_scalar_head(rng, shape):
    """Fixed random weights to collapse an op output into a scalar loss."""
    w = nm.Tensor(rng.standard_normal(shape))

    def head(y):
        return nm.sum(nm.mul(y, w))

    return head

"""Tour of the autodiff substrate: tensors, the tape, and gradient checking.

Run:  python3 demos/01_autodiff_and_gradcheck.py
"""

import numpy as np

from speechalign import numerics as nm

rng = np.random.default_rng(0)

print("== a scalar loss through matmul + softmax ==")
w = nm.Tensor(rng.standard_normal((4, 3)), requires_grad=True)
x = nm.Tensor(rng.standard_normal((3, 2)), requires_grad=True)
weights = nm.Tensor(rng.standard_normal((4, 2)))  # fixed readout


def compute_loss():
    probs = nm.softmax(nm.matmul(w, x), axis=-1)
    return nm.sum(nm.mul(probs, weights))


with nm.recording() as tape:
    loss = compute_loss()
print(f"recorded {len(tape)} operations; loss = {loss.item():.6f}")

nm.backward(loss, tape)
print(f"|dL/dw| = {np.linalg.norm(w.grad):.6f}, |dL/dx| = {np.linalg.norm(x.grad):.6f}")

print("\n== same gradient by central finite differences ==")
h = 1e-5
numeric = np.zeros_like(w.data)
for i in range(w.data.size):
    flat = w.data.reshape(-1)
    orig = flat[i]
    for sign in (+1, -1):
        flat[i] = orig + sign * h
        numeric.reshape(-1)[i] += sign * compute_loss().item() / (2 * h)
    flat[i] = orig
err = np.abs(numeric - w.grad).max()
print(f"max |analytic - numeric| = {err:.2e}  (double precision, h = {h})")

print("\n== the tape replays in reverse; unreached leaves keep zero grads ==")
a = nm.Tensor(np.ones(3), requires_grad=True)
b = nm.Tensor(np.ones(3), requires_grad=True)
with nm.recording() as tape:
    nm.sum(a)                # recorded, but not part of the loss below
    loss = nm.sum(nm.mul(b, b))
nm.backward(loss, tape)
print(f"grad(a) = {a.grad} (untouched), grad(b) = {b.grad}")

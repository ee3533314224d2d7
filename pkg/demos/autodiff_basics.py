"""Tour of the reverse-mode autodiff engine.

Builds a few expressions on the tape, pulls gradients back, and
cross-checks one composite function against central finite
differences.

Run:
    python demos/autodiff_basics.py
"""

from __future__ import annotations

import numpy as np

from dehomodet import tensor as T
from dehomodet.tensor import DiffTensor, Tape, finite_diff_check


def scalar_example() -> None:
    # d/dx of x^2 * sigmoid(x) at x=1.5, worked by hand below.
    x = DiffTensor(np.array([1.5]), requires_grad=True, name="x")
    with Tape() as tape:
        y = T.reduce_sum(T.mul(T.mul(x, x), T.sigmoid(x)))
        tape.backward(y)
    s = 1.0 / (1.0 + np.exp(-1.5))
    expected = 2 * 1.5 * s + 1.5**2 * s * (1 - s)
    print("scalar d/dx:", x.gradient()[0], "expected:", expected)


def matrix_example() -> None:
    rng = np.random.default_rng(7)
    w = DiffTensor(rng.normal(size=(3, 3)), requires_grad=True, name="w")
    v = DiffTensor(rng.normal(size=(3, 1)), requires_grad=True, name="v")
    with Tape() as tape:
        h = T.relu(T.matmul(w, v))
        loss = T.reduce_sum(T.mul(h, h))
        tape.backward(loss)
    print("dloss/dw row norms:", np.linalg.norm(w.gradient(), axis=1))
    print("dloss/dv:", v.gradient().ravel())


def fd_crosscheck() -> None:
    rng = np.random.default_rng(3)
    w = DiffTensor(rng.normal(size=(4, 4)), requires_grad=True, name="w")
    ones = np.ones((4, 1))

    def entropy(x: DiffTensor) -> DiffTensor:
        z = T.softmax(T.reshape(T.matmul(x, T.constant(ones)), (4,)))
        return T.reduce_sum(T.mul(z, T.log(T.add_const(z, 1e-9))))

    report = finite_diff_check(entropy, w, eps=1e-6)
    print("softmax entropy fd worst rel err:", report.max_rel_err)
    assert report.max_rel_err < 1e-5


def main() -> None:
    scalar_example()
    matrix_example()
    fd_crosscheck()
    # Ops outside a tape are forward-only; no graph is kept.
    x = DiffTensor(np.array([2.0]), requires_grad=True)
    y = T.mul(x, x)
    print("outside tape, y:", y.data[0], "grad stays zero:", x.gradient()[0] == 0.0)


if __name__ == "__main__":
    main()

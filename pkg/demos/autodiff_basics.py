"""A tour of the reverse-mode tape: record, differentiate, verify.

The package trains its networks with a small tape-based autodiff engine.
This script records a toy computation, pulls gradients back through it,
and checks one of them against central finite differences, which is the
same discipline the test suite applies to every layer.
"""

import numpy as np

from sase.autodiff import (Tape, backward, finite_difference_grad, matmul,
                           parameter, reduce_sum, tanh)


def main():
    rng = np.random.default_rng(0)
    w = parameter(rng.normal(size=(3, 4)), name="w")
    x = parameter(rng.normal(size=(4, 2)), name="x")

    # Gradients only flow while a tape is recording.
    with Tape():
        h = tanh(matmul(w, x))
        loss = reduce_sum(h * h)
        grads = backward(loss)

    print("loss:", float(loss.data))
    print("dL/dw shape:", grads[w].shape)
    print("dL/dx shape:", grads[x].shape)

    # The same loss as a plain function of w's array, for the numeric check.
    def f(arr):
        saved = w.data
        w.data = arr
        h = np.tanh(arr @ x.data)
        value = float(np.sum(h * h))
        w.data = saved
        return value

    numeric = finite_difference_grad(f, w.data.copy())
    err = np.max(np.abs(numeric - grads[w]))
    print(f"max |tape - finite difference| on dL/dw: {err:.3e}")

    # Each backward() call reports gradients for that call alone; .grad on
    # the tensors keeps accumulating until the caller resets it.
    with Tape():
        loss2 = reduce_sum(matmul(w, x))
        grads2 = backward(loss2)
    print("fresh call touches w again:", grads2[w].shape)
    print("accumulated w.grad is the sum of both calls:",
          np.allclose(w.grad, grads[w] + grads2[w]))


if __name__ == "__main__":
    main()

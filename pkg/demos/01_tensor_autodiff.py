"""A tour of the reverse-mode tape.

Builds a few expressions out of the differentiable ops, runs backward,
and checks the gradients against central finite differences.  Nothing
here is training-specific; the point is that the tape gives correct
gradients for every op the rest of the package composes.
"""

import numpy as np

import uqtrain.tensor as T


def scalar_chain():
    # f(x) = sum(relu(x W) / 3), a little two-op pipeline
    rng = np.random.default_rng(0)
    x = T.parameter(rng.standard_normal((4, 5)))
    w = T.parameter(rng.standard_normal((5, 3)))

    def f(arrays):
        xx, ww = arrays
        return T.scalar_mul(1.0 / 3.0, T.total_sum(T.relu(T.matmul(xx, ww))))

    err = T.check_gradients(f, [x, w])
    print(f"matmul/relu chain, worst relative gradient error: {err:.2e}")


def gradient_accumulation():
    # using a value twice must add both contributions
    x = T.parameter(np.array([2.0, -1.0]))
    with T.Tape() as tape:
        y = T.total_sum(T.add(T.mul(x, x), x))   # x^2 + x
    T.backward(y, tape)
    print(f"d/dx sum(x^2 + x) at {x.values}: {x.grad} (expect 2x + 1)")


def convolution_forward():
    rng = np.random.default_rng(1)
    img = T.constant(rng.standard_normal((1, 1, 5, 5)))
    kernel = T.parameter(rng.standard_normal((2, 1, 3, 3)) * 0.5)
    with T.Tape() as tape:
        out = T.total_sum(T.conv2d(img, kernel, padding=1))
    T.backward(out, tape)
    print(f"conv2d output map: {(2, 5, 5)}, kernel gradient shape "
          f"{kernel.grad.shape}, finite everywhere: "
          f"{np.isfinite(kernel.grad).all()}")


def stability_check():
    # log_softmax survives logits far outside the exp range
    big = T.constant(np.array([[1000.0, 999.0, 998.0]]))
    ls = T.log_softmax(big)
    print(f"log_softmax at logits ~1000: {np.round(ls.values, 4)}")


if __name__ == "__main__":
    scalar_chain()
    gradient_accumulation()
    convolution_forward()
    stability_check()

"""Shared test utilities: finite-difference probes against tape gradients."""

import numpy as np

from sase.autodiff import Tape, backward, finite_difference_grad


def tape_gradient(params, name, forward_fn):
    """Gradient of forward_fn() w.r.t. params[name] via the tape."""
    with Tape():
        loss = forward_fn()
        grads = backward(loss)
    g = grads.get(params[name])
    return np.zeros_like(params[name].data) if g is None else g


def fd_gradient(params, name, forward_fn, step=1e-5):
    """Central finite differences through the same forward function."""
    original = params[name].data

    def f(arr):
        params[name].data = arr
        try:
            return float(forward_fn().data)
        finally:
            params[name].data = original

    return finite_difference_grad(f, original.copy(), step=step)


def check_param_gradients(params, forward_fn, names=None, rtol=1e-4, atol=1e-7):
    """Assert tape and FD gradients agree for each named parameter."""
    for name in (names if names is not None else sorted(params)):
        if not params[name].requires_grad:
            continue
        analytic = tape_gradient(params, name, forward_fn)
        numeric = fd_gradient(params, name, forward_fn)
        err = np.max(np.abs(analytic - numeric))
        bound = atol + rtol * max(np.max(np.abs(numeric)), 1e-12)
        assert err <= bound, (f"{name}: gradient mismatch, max abs err {err:.3e}"
                              f" exceeds {bound:.3e}")


def straightline_mhsa(arrays, prefix, model_dim, heads, gamma):
    """Independent plain-numpy MHSA, written straight from the equations."""

    def ln(x, g, b, eps=1e-5):
        mu = x.mean(axis=0)
        sd = np.sqrt(((x - mu) ** 2).mean(axis=0) + eps)
        return (x - mu) / sd * g[:, None] + b[:, None]

    d = model_dim // heads
    g1 = ln(gamma, arrays[f"{prefix}.ln1.scale"], arrays[f"{prefix}.ln1.shift"])
    contexts = []
    for j in range(heads):
        q = arrays[f"{prefix}.h{j}.w_q"] @ g1
        k = arrays[f"{prefix}.h{j}.w_k"] @ g1
        v = arrays[f"{prefix}.h{j}.w_v"] @ g1
        scores = q.T @ k / np.sqrt(d)
        scores = scores - scores.max(axis=1, keepdims=True)
        a = np.exp(scores)
        a = a / a.sum(axis=1, keepdims=True)
        contexts.append(a @ v.T)
    e = (np.concatenate(contexts, axis=1) @ arrays[f"{prefix}.w_p"]).T + gamma
    e2 = ln(e, arrays[f"{prefix}.ln2.scale"], arrays[f"{prefix}.ln2.shift"])
    h = arrays[f"{prefix}.ffn.lin2.w"] @ e2 + arrays[f"{prefix}.ffn.lin2.b"][:, None]
    h = np.where(h >= 0, h, 0.01 * h)
    return (arrays[f"{prefix}.ffn.lin1.w"] @ h
            + arrays[f"{prefix}.ffn.lin1.b"][:, None])

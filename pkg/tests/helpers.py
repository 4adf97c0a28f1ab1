"""Finite-difference oracles shared by the toy-network and acceptance tests."""
import numpy as np

from impact.toynet import activate, per_sample_loss


def numeric_param_grads(model, x, t, step=1e-5):
    from impact.toynet import loss_of

    out = []
    for layer in model.layers:
        grads = {}
        for key in (("W1", "W2", "b_prime") if hasattr(layer, "W1") else ("W", "b")):
            arr = getattr(layer, key)
            g = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + step
                up = loss_of(model, x, t)
                arr[idx] = old - step
                down = loss_of(model, x, t)
                arr[idx] = old
                g[idx] = (up - down) / (2 * step)
            grads[key] = g
        out.append(grads)
    return out


def loss_from_preactivation(model, i, z, t):
    """Loss of a single sample when layer ``i``'s pre-activation is forced to ``z``."""
    h = activate(model.layers[i].activation, z)
    for layer in model.layers[i + 1:]:
        zz = (h @ layer.W.T + layer.b) if hasattr(layer, "W") else \
            (h @ layer.W1.T) @ layer.W2.T + layer.b_prime
        h = activate(layer.activation, zz)
    return float(per_sample_loss(model.loss, h[None, :], np.asarray(t)[None, ...])[0][0])


def numeric_tap_grad(model, i, z, t, step=1e-5):
    g = np.zeros_like(z)
    for k in range(z.shape[0]):
        zp, zm = z.copy(), z.copy()
        zp[k] += step
        zm[k] -= step
        g[k] = (loss_from_preactivation(model, i, zp, t) - loss_from_preactivation(model, i, zm, t)) / (2 * step)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)

import numpy as np
import pytest

from estm import kernels


def fd_grad(f, arrays, eps=1e-6):
    """Central-difference gradients of scalar f(*arrays) w.r.t. each array.

    Mutates entries in place one at a time; arrays must be float64.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gf = g.ravel()
        for i in range(flat.size):
            old = flat[i]
            h = eps * max(1.0, abs(old))
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(ga, gf):
    """Worst-case elementwise relative error between two gradient arrays."""
    denom = np.maximum(np.abs(ga) + np.abs(gf), 1e-6)
    return float(np.max(np.abs(ga - gf) / denom))


@pytest.fixture(params=["numpy", "numba"] if kernels.NUMBA_AVAILABLE else ["numpy"])
def backend(request):
    prev = kernels.active_backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)

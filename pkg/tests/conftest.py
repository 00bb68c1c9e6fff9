import numpy as np

# Central differences on an O(1) loss carry roughly 1e-11 of absolute
# round-off at step 1e-5, so relative errors are taken against this floor
# for gradients that are themselves near zero.
FD_FLOOR = 1e-7


def central_difference(f, arrays, step=1e-5):
    """Finite-difference gradient of scalar ``f()`` w.r.t. each array in place."""
    grads = []
    for a in arrays:
        g = np.empty_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = f()
            flat[i] = keep - step
            down = f()
            flat[i] = keep
            gflat[i] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=FD_FLOOR):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a, n = np.asarray(a), np.asarray(n)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst

"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np

BACKEND = "python"


def legendre_table(lmax, x):
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    s = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    p = np.zeros((lmax + 1, lmax + 1, x.size))
    pmm = np.full(x.size, np.sqrt(1.0 / (4.0 * np.pi)))
    p[0, 0] = pmm
    for m in range(lmax + 1):
        if m > 0:
            pmm = -np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * pmm
            p[m, m] = pmm
        if m + 1 <= lmax:
            p[m + 1, m] = x * np.sqrt(2.0 * m + 3.0) * pmm
        for l in range(m + 2, lmax + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            p[l, m] = a * (x * p[l - 1, m] - b * p[l - 2, m])
    return p


def l96_tendency(x, forcing, coupling=0.0):
    x = np.asarray(x, dtype=np.float64)
    dx = (np.roll(x, -1, axis=2) - np.roll(x, 2, axis=2)) * np.roll(x, 1, axis=2) - x + forcing
    up = np.concatenate([x[:, 1:], x[:, -1:]], axis=1)
    down = np.concatenate([x[:, :1], x[:, :-1]], axis=1)
    dx = dx + coupling * (up + down - 2.0 * x)
    if x.shape[0] > 1:
        dx = dx + coupling * (np.roll(x, -1, axis=0) - x)
    return dx


def l96_integrate(x0, forcing, coupling, dt, n_out, n_sub, bound):
    x = np.array(x0, dtype=np.float64, copy=True)
    out = np.zeros((n_out + 1,) + x.shape)
    out[0] = x
    failed = -1
    for i in range(1, n_out + 1):
        for _ in range(n_sub):
            k1 = l96_tendency(x, forcing, coupling)
            k2 = l96_tendency(x + 0.5 * dt * k1, forcing, coupling)
            k3 = l96_tendency(x + 0.5 * dt * k2, forcing, coupling)
            k4 = l96_tendency(x + dt * k3, forcing, coupling)
            x = x + dt / 6.0 * (k1 + 2.0 * (k2 + k3) + k4)
        out[i] = x
        if not np.all(np.abs(x) <= bound):
            failed = i
            break
    return out, failed


def fair_crps_points(members, truth):
    x = np.asarray(members, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64).ravel()
    K = x.shape[0]
    if K < 2:
        raise ValueError("fair CRPS needs at least two members")
    xs = np.sort(x.reshape(K, -1), axis=0)
    skill = np.abs(xs - y).mean(axis=0)
    rank = 2.0 * np.arange(K) - K + 1.0
    pair = 2.0 * (rank[:, None] * xs).sum(axis=0)
    return skill - pair / (2.0 * K * (K - 1.0))

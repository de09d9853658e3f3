"""ES and CV curves of a 4-row, 2-fold instance, from exact Lasso solutions.

Each fold's Lasso solution at every grid lambda is found by enumerating all
sign patterns (no iterative solver), then the fold paths are put on a
common tau grid and the ES/CV quantities evaluated directly.
"""
import itertools
import numpy as np

X = np.array([[1.0, 2.0], [0.0, 1.0], [3.0, -1.0], [2.0, 0.0]])
y = np.array([1.0, 2.0, -1.0, 1.0])
blocks = np.array([0, 1, 0, 1])
V, GRID, FLOOR, TAU_GRID = 2, 100, 1e-3, 5


def lasso_exact(Xt, yt, lam):
    p = Xt.shape[1]
    best, arg = yt @ yt, np.zeros(p)
    for signs in itertools.product([-1, 0, 1], repeat=p):
        act = [j for j in range(p) if signs[j] != 0]
        if not act:
            continue
        Xa = Xt[:, act]
        s = np.array([signs[j] for j in act], float)
        try:
            b = np.linalg.solve(Xa.T @ Xa, Xa.T @ yt - 0.5 * lam * s)
        except np.linalg.LinAlgError:
            continue
        if np.any(b * s <= 0):
            continue
        beta = np.zeros(p)
        beta[act] = b
        r = yt - Xt @ beta
        f = r @ r + lam * np.abs(beta).sum()
        if f < best:
            best, arg = f, beta
    return arg


def path(Xt, yt):
    lmax = 2 * np.max(np.abs(Xt.T @ yt))
    lams = [lmax] + [lmax * FLOOR ** (k / (GRID - 1)) for k in range(1, GRID)]
    betas = [np.zeros(Xt.shape[1])] + [lasso_exact(Xt, yt, l) for l in lams[1:]]
    taus = [np.abs(b).sum() for b in betas]
    return np.array(taus), betas


def interpolate(taus, betas, tau):
    for k, t in enumerate(taus):
        if t == tau:
            return betas[k]
    for k in range(len(taus) - 1):
        if taus[k] <= tau <= taus[k + 1] and taus[k + 1] > taus[k]:
            w = (tau - taus[k]) / (taus[k + 1] - taus[k])
            b = (1 - w) * betas[k] + w * betas[k + 1]
            return b * tau / np.abs(b).sum()
    raise ValueError(tau)


paths = [path(X[blocks != v], y[blocks != v]) for v in range(V)]
upper = min(t.max() for t, _ in paths)
grid = [upper * k / (TAU_GRID - 1) for k in range(TAU_GRID - 1)] + [upper]
n, d = 4, 2
for tau in grid:
    fits = np.column_stack([X @ interpolate(t, b, tau) for t, b in paths])
    m = fits.mean(axis=1)
    spread = ((fits - m[:, None]) ** 2).sum(axis=0).mean()
    that = (n - d) / d * spread
    norm2 = m @ m
    es = spread / norm2 if norm2 >= 1e-12 else float("nan")
    cv = np.mean([(y[i] - fits[i, blocks[i]]) ** 2 for i in range(n)])
    print(f"tau={tau!r} es={es!r} that={that!r} cv={cv!r}")

"""Hot per-sample simulation kernels.

One market sample = draw demand/revenue/bid for every interested operator,
run the auction, clip licensed service, size the opportunistic pool, and
waterfill it.  The estimator runs this millions of times, so the loop is
compiled with numba when available; a vectorized pure-numpy twin implements
the same operations in the same order and is selected with

    BANDPLAN_BACKEND=numpy      (or =numba to insist on the compiled path)

Both paths consume identical pre-drawn standard normals and produce the
per-sample statistic matrix with columns

    [0]              total demand served this slot (licensed + pool)
    [1 .. n]         pool allocation per operator (licensed ops first, then
                     unlicensed, each block ordered by id)
    [1+n .. 1+n+nl]  licensed-epoch revenue per licensed op (0 for losers)
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    HAS_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


_ENV_VAR = "BANDPLAN_BACKEND"
_VALID_BACKENDS = ("numba", "numpy")


def default_backend() -> str:
    """Backend selected by the environment, falling back to numba if present."""
    forced = os.environ.get(_ENV_VAR, "").strip().lower()
    if forced:
        if forced not in _VALID_BACKENDS:
            raise ValueError(f"{_ENV_VAR} must be one of {_VALID_BACKENDS}, got {forced!r}")
        if forced == "numba" and not HAS_NUMBA:
            raise RuntimeError(f"{_ENV_VAR}=numba but numba is not importable")
        return forced
    return "numba" if HAS_NUMBA else "numpy"


def resolve_backend(backend: str | None) -> str:
    if backend is None:
        return default_backend()
    if backend not in _VALID_BACKENDS:
        raise ValueError(f"backend must be one of {_VALID_BACKENDS}, got {backend!r}")
    if backend == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    return backend


def simulate_block_numpy(
    z_l: np.ndarray,
    z_u: np.ndarray,
    psi: np.ndarray,
    chol: np.ndarray,
    mu_u: np.ndarray,
    sd_u: np.ndarray,
    cap: float,
    p_eff: int,
    pool_base: float,
    phi: float,
    alpha_l: float,
    interweave: bool,
) -> np.ndarray:
    n_l = psi.shape[0]
    n_u = mu_u.shape[0]
    bs = z_l.shape[1] if n_l > 0 else z_u.shape[1]
    n = n_l + n_u

    x = np.empty((n, bs))
    r = np.empty((n_l, bs))
    v = np.empty((n_l, bs))
    for i in range(n_l):
        z0 = z_l[i, :, 0]
        z1 = z_l[i, :, 1]
        z2 = z_l[i, :, 2]
        th = psi[i, 0] + chol[i, 0, 0] * z0
        r[i] = psi[i, 1] + chol[i, 1, 0] * z0 + chol[i, 1, 1] * z1
        v[i] = psi[i, 2] + chol[i, 2, 0] * z0 + chol[i, 2, 1] * z1 + chol[i, 2, 2] * z2
        x[i] = np.maximum(th, 0.0)
    for j in range(n_u):
        x[n_l + j] = np.maximum(mu_u[j] + sd_u[j] * z_u[j], 0.0)

    win = np.zeros((n_l, bs), dtype=np.bool_)
    if n_l > 0 and p_eff > 0:
        order = np.argsort(-v, axis=0, kind="stable")
        cols = np.arange(bs)
        for s in range(p_eff):
            win[order[s], cols] = True

    u_lc = np.zeros(bs)
    pool = np.full(bs, pool_base)
    xbar = np.empty((n, bs))
    for i in range(n_l):
        u_lc = u_lc + np.where(win[i], np.minimum(x[i], cap), 0.0)
        if interweave:
            resid = np.where(x[i] == 0.0, alpha_l * cap, 0.0)
        else:
            resid = alpha_l * np.maximum(cap - x[i], 0.0)
        pool = pool + np.where(win[i], resid, 0.0)
        xbar[i] = np.where(win[i], phi * np.maximum(x[i] - cap, 0.0), x[i])
    for j in range(n_u):
        xbar[n_l + j] = x[n_l + j]

    alloc = np.zeros((n, bs))
    if n > 0:
        order2 = np.argsort(xbar, axis=0, kind="stable")
        srt = np.take_along_axis(xbar, order2, axis=0)
        alloc_srt = np.empty_like(srt)
        c = pool.copy()
        for pos in range(n):
            grant = np.minimum(srt[pos], c / (n - pos))
            alloc_srt[pos] = grant
            c = c - grant
        np.put_along_axis(alloc, order2, alloc_srt, axis=0)

    out = np.empty((bs, 1 + n + n_l))
    total = u_lc
    for k in range(n):
        total = total + alloc[k]
    out[:, 0] = total
    for k in range(n):
        out[:, 1 + k] = alloc[k]
    for i in range(n_l):
        out[:, 1 + n + i] = np.where(win[i], r[i], 0.0)
    return out


@njit(cache=True, nogil=True)
def _simulate_block_jit(z_l, z_u, psi, chol, mu_u, sd_u, cap, p_eff, pool_base,
                        phi, alpha_l, interweave):  # pragma: no cover - compiled
    n_l = psi.shape[0]
    n_u = mu_u.shape[0]
    bs = z_l.shape[1] if n_l > 0 else z_u.shape[1]
    n = n_l + n_u

    out = np.empty((bs, 1 + n + n_l))
    x = np.empty(n)
    rr = np.empty(n_l)
    vv = np.empty(n_l)
    xbar = np.empty(n)
    alloc = np.empty(n)
    winner = np.zeros(n_l, np.bool_)
    order = np.empty(n, np.int64)

    for s in range(bs):
        for i in range(n_l):
            z0 = z_l[i, s, 0]
            z1 = z_l[i, s, 1]
            z2 = z_l[i, s, 2]
            th = psi[i, 0] + chol[i, 0, 0] * z0
            rr[i] = psi[i, 1] + chol[i, 1, 0] * z0 + chol[i, 1, 1] * z1
            vv[i] = psi[i, 2] + chol[i, 2, 0] * z0 + chol[i, 2, 1] * z1 + chol[i, 2, 2] * z2
            x[i] = th if th > 0.0 else 0.0
        for j in range(n_u):
            th = mu_u[j] + sd_u[j] * z_u[j, s]
            x[n_l + j] = th if th > 0.0 else 0.0

        for i in range(n_l):
            winner[i] = False
        for _slot in range(p_eff):
            best = -np.inf
            bi = -1
            for i in range(n_l):
                if not winner[i] and vv[i] > best:
                    best = vv[i]
                    bi = i
            winner[bi] = True

        u_lc = 0.0
        pool = pool_base
        for i in range(n_l):
            if winner[i]:
                u_lc += x[i] if x[i] < cap else cap
                if interweave:
                    if x[i] == 0.0:
                        pool += alpha_l * cap
                else:
                    rem = cap - x[i]
                    if rem > 0.0:
                        pool += alpha_l * rem
                excess = x[i] - cap
                xbar[i] = phi * excess if excess > 0.0 else phi * 0.0
            else:
                xbar[i] = x[i]
        for j in range(n_u):
            xbar[n_l + j] = x[n_l + j]

        for k in range(n):
            order[k] = k
        for k in range(1, n):
            cur = order[k]
            val = xbar[cur]
            m = k - 1
            while m >= 0 and xbar[order[m]] > val:
                order[m + 1] = order[m]
                m -= 1
            order[m + 1] = cur

        c = pool
        for pos in range(n):
            k = order[pos]
            share = c / (n - pos)
            grant = xbar[k] if xbar[k] < share else share
            alloc[k] = grant
            c -= grant

        total = u_lc
        for k in range(n):
            total += alloc[k]
        out[s, 0] = total
        for k in range(n):
            out[s, 1 + k] = alloc[k]
        for i in range(n_l):
            out[s, 1 + n + i] = rr[i] if winner[i] else 0.0
    return out


def simulate_block(
    backend: str,
    z_l: np.ndarray,
    z_u: np.ndarray,
    psi: np.ndarray,
    chol: np.ndarray,
    mu_u: np.ndarray,
    sd_u: np.ndarray,
    cap: float,
    p_eff: int,
    pool_base: float,
    phi: float,
    alpha_l: float,
    interweave: bool,
) -> np.ndarray:
    """Run one block of samples on the requested backend."""
    if backend == "numba":
        return _simulate_block_jit(z_l, z_u, psi, chol, mu_u, sd_u, cap, p_eff,
                                   pool_base, phi, alpha_l, interweave)
    return simulate_block_numpy(z_l, z_u, psi, chol, mu_u, sd_u, cap, p_eff,
                                pool_base, phi, alpha_l, interweave)


@njit(cache=True, nogil=True)
def _accumulate_jit(vals, count0, means, variances):  # pragma: no cover - compiled
    bs, k = vals.shape
    r = count0
    for s in range(bs):
        r += 1
        for j in range(k):
            prev = means[j]
            new = ((r - 1) * prev + vals[s, j]) / r
            means[j] = new
            if r == 1:
                variances[j] = 0.0
            else:
                diff = new - prev
                variances[j] = ((r - 2) / (r - 1)) * variances[j] + r * diff * diff
    return r


def _accumulate_numpy(vals: np.ndarray, count0: int, means: np.ndarray,
                      variances: np.ndarray) -> int:
    """Fold a block into the running stats via exact batch-merge algebra."""
    nb = vals.shape[0]
    if nb == 0:
        return count0
    bmean = np.mean(vals, axis=0)
    bm2 = np.sum((vals - bmean) ** 2, axis=0)
    if count0 == 0:
        means[:] = bmean
        variances[:] = bm2 / (nb - 1) if nb > 1 else 0.0
        return nb
    total = count0 + nb
    delta = bmean - means
    m2 = variances * (count0 - 1) + bm2 + delta * delta * (count0 * nb / total)
    means[:] = means + delta * (nb / total)
    variances[:] = m2 / (total - 1)
    return total


def accumulate(backend: str, vals: np.ndarray, count0: int, means: np.ndarray,
               variances: np.ndarray) -> int:
    """Update running means and unbiased variances with one block of samples.

    The compiled path applies the per-sample recursions directly; the numpy
    path computes block statistics and merges them, which is algebraically
    the same and differs only at floating-point rounding level.
    """
    if backend == "numba":
        return int(_accumulate_jit(vals, count0, means, variances))
    return _accumulate_numpy(vals, count0, means, variances)


def warmup() -> None:
    """Trigger JIT compilation so timed runs exclude compile cost."""
    if not HAS_NUMBA:
        return
    psi = np.array([[0.0, 1.0, 1.0]])
    chol = np.zeros((1, 3, 3))
    z_l = np.zeros((1, 2, 3))
    z_u = np.zeros((1, 2))
    mu_u = np.array([0.5])
    sd_u = np.array([0.1])
    vals = simulate_block("numba", z_l, z_u, psi, chol, mu_u, sd_u,
                          1.0, 1, 0.5, 1.0, 0.5, False)
    means = np.zeros(vals.shape[1])
    variances = np.zeros(vals.shape[1])
    accumulate("numba", vals, 0, means, variances)

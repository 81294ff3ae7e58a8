"""Simplex pivot kernels.

Bounded-variable primal and dual simplex cores over a sparse column store.
The constraint matrix arrives transposed and compressed: for variable j the
entries vals[indptr[j]:indptr[j+1]] sit in rows cols[indptr[j]:indptr[j+1]].
varids repeats j per entry so right-hand-side accumulation can run over the
flat entry arrays.  A x = b with lb <= x <= ub; inequalities are handled by
slack columns the caller appends.

Two interchangeable implementations of the same algorithm live here:

* explicit-loop cores, compiled with numba @njit when the jit backend is on;
* vectorized numpy cores (np.bincount for the sparse products), the fallback
  when numba is unavailable or THERMOSYN_NUMBA is 0/false/no/off.

Pivot selection is written to identical tie-break rules in both (first
occurrence of the extreme value, two-pass ratio tests), so both backends
follow the same pivot path up to floating-point roundoff.

Conventions shared by the cores:

* basis holds m variable indices; x is kept consistent with basis and bounds
  between calls, so a second call continues where the first stopped
  (two-phase primal, or dual cleanup after branching bound changes);
* binv is an m x m scratch matrix owned by the caller.  When binv_ok is
  True it must hold the inverse of the basis matrix for the incoming basis;
  the core then skips the entry factorization.  On return binv always holds
  the inverse for the final basis, so chained calls that keep the basis
  (phase 1 to phase 2, dual repair then primal polish, parent to dive child)
  never pay a fresh inversion;
* status codes: 0 optimal, 1 unbounded (primal) / primal infeasible (dual),
  2 iteration limit, 3 numerical failure;
* the dense basis inverse is updated in product form and refreshed every
  REFRESH_EVERY pivots or when a pivot element degenerates.
"""

from __future__ import annotations

import os

import numpy as np

STATUS_OPTIMAL = 0
STATUS_UNBOUNDED = 1
STATUS_ITER_LIMIT = 2
STATUS_NUMERICAL = 3

PIVOT_TOL = 1e-9
REFRESH_EVERY = 192


# ---------------------------------------------------------------------------
# explicit-loop implementation (numba target)
# ---------------------------------------------------------------------------

def _primal_loops(indptr, cols, vals, varids, b, c, lb, ub, basis, x,
                  binv, binv_ok, feas_tol, opt_tol, max_iter):
    n = indptr.shape[0] - 1
    m = b.shape[0]
    nnz = cols.shape[0]
    in_basis = np.zeros(n, np.bool_)
    for i in range(m):
        in_basis[basis[i]] = True
    B_inv = binv
    if not binv_ok:
        B = np.zeros((m, m))
        for i in range(m):
            j = basis[i]
            for k in range(indptr[j], indptr[j + 1]):
                B[cols[k], i] = vals[k]
        B_inv[:, :] = np.linalg.inv(B)
    rhs = b.copy()
    for k in range(nnz):
        j = varids[k]
        if not in_basis[j]:
            rhs[cols[k]] -= vals[k] * x[j]
    xb = B_inv @ rhs
    for i in range(m):
        x[basis[i]] = xb[i]
    y = np.empty(m)
    d = np.empty(n)
    alpha = np.empty(m)
    since_refresh = 0
    bland = False
    stall = 0
    iters = 0
    while iters < max_iter:
        iters += 1
        cb = np.empty(m)
        for i in range(m):
            cb[i] = c[basis[i]]
        y = cb @ B_inv
        for j in range(n):
            s = c[j]
            for k in range(indptr[j], indptr[j + 1]):
                s -= vals[k] * y[cols[k]]
            d[j] = s
        q = -1
        best = opt_tol
        direction = 1.0
        for j in range(n):
            if in_basis[j]:
                continue
            dj = d[j]
            at_lb = x[j] <= lb[j] + feas_tol
            at_ub = x[j] >= ub[j] - feas_tol
            viol = 0.0
            dir_j = 1.0
            if at_lb and at_ub:
                viol = 0.0
            elif at_lb:
                if dj < -opt_tol:
                    viol = -dj
            elif at_ub:
                if dj > opt_tol:
                    viol = dj
                    dir_j = -1.0
            else:
                if dj > opt_tol:
                    viol = dj
                    dir_j = -1.0
                elif dj < -opt_tol:
                    viol = -dj
            if viol > best:
                best = viol
                q = j
                direction = dir_j
                if bland:
                    break
        if q < 0:
            return STATUS_OPTIMAL, iters
        for i in range(m):
            alpha[i] = 0.0
        for k in range(indptr[q], indptr[q + 1]):
            v = vals[k]
            col = cols[k]
            for i in range(m):
                alpha[i] += v * B_inv[i, col]
        theta = np.inf
        if np.isfinite(lb[q]) and np.isfinite(ub[q]):
            theta = ub[q] - lb[q]
        for i in range(m):
            ai = direction * alpha[i]
            bi = basis[i]
            if ai > PIVOT_TOL:
                t = (x[bi] - lb[bi] + feas_tol) / ai
            elif ai < -PIVOT_TOL:
                t = (ub[bi] - x[bi] + feas_tol) / (-ai)
            else:
                continue
            if t < theta:
                theta = t
        if not np.isfinite(theta):
            return STATUS_UNBOUNDED, iters
        limit_row = -1
        best_piv = 0.0
        best_id = n + 2 * m
        for i in range(m):
            ai = direction * alpha[i]
            bi = basis[i]
            if ai > PIVOT_TOL:
                t = (x[bi] - lb[bi]) / ai
            elif ai < -PIVOT_TOL:
                t = (ub[bi] - x[bi]) / (-ai)
            else:
                continue
            if t <= theta + 1e-12:
                if bland:
                    if bi < best_id:
                        best_id = bi
                        limit_row = i
                elif abs(alpha[i]) > best_piv:
                    best_piv = abs(alpha[i])
                    limit_row = i
        if limit_row >= 0:
            ai = direction * alpha[limit_row]
            bi = basis[limit_row]
            if ai > PIVOT_TOL:
                step = (x[bi] - lb[bi]) / ai
            else:
                step = (ub[bi] - x[bi]) / (-ai)
            if step < 0.0:
                step = 0.0
        else:
            step = theta
        if step <= 1e-12:
            stall += 1
            if stall > 2 * m + 20:
                bland = True
        else:
            stall = 0
            bland = False
        if limit_row < 0:
            if direction > 0:
                x[q] = ub[q]
            else:
                x[q] = lb[q]
            for i in range(m):
                x[basis[i]] -= direction * step * alpha[i]
            continue
        leave = basis[limit_row]
        x[q] += direction * step
        for i in range(m):
            x[basis[i]] -= direction * step * alpha[i]
        ai = direction * alpha[limit_row]
        if ai > 0:
            x[leave] = lb[leave]
        else:
            x[leave] = ub[leave]
        basis[limit_row] = q
        in_basis[q] = True
        in_basis[leave] = False
        piv = alpha[limit_row]
        refresh = abs(piv) < PIVOT_TOL
        if not refresh:
            row = B_inv[limit_row] / piv
            for i in range(m):
                ai2 = alpha[i]
                if ai2 != 0.0 and i != limit_row:
                    for jj in range(m):
                        B_inv[i, jj] -= ai2 * row[jj]
            B_inv[limit_row] = row
            since_refresh += 1
            refresh = since_refresh >= REFRESH_EVERY
        if refresh:
            B = np.zeros((m, m))
            for i in range(m):
                j = basis[i]
                for k in range(indptr[j], indptr[j + 1]):
                    B[cols[k], i] = vals[k]
            B_inv[:, :] = np.linalg.inv(B)
            rhs = b.copy()
            for k in range(nnz):
                j = varids[k]
                if not in_basis[j]:
                    rhs[cols[k]] -= vals[k] * x[j]
            xb = B_inv @ rhs
            for i in range(m):
                x[basis[i]] = xb[i]
            since_refresh = 0
    return STATUS_ITER_LIMIT, iters


def _dual_loops(indptr, cols, vals, varids, b, c, lb, ub, basis, x,
                binv, binv_ok, feas_tol, opt_tol, max_iter):
    n = indptr.shape[0] - 1
    m = b.shape[0]
    nnz = cols.shape[0]
    in_basis = np.zeros(n, np.bool_)
    for i in range(m):
        in_basis[basis[i]] = True
    for j in range(n):
        if in_basis[j]:
            continue
        if x[j] < lb[j]:
            x[j] = lb[j]
        elif x[j] > ub[j]:
            x[j] = ub[j]
    B_inv = binv
    if not binv_ok:
        B = np.zeros((m, m))
        for i in range(m):
            j = basis[i]
            for k in range(indptr[j], indptr[j + 1]):
                B[cols[k], i] = vals[k]
        B_inv[:, :] = np.linalg.inv(B)
    rhs = b.copy()
    for k in range(nnz):
        j = varids[k]
        if not in_basis[j]:
            rhs[cols[k]] -= vals[k] * x[j]
    xb = B_inv @ rhs
    for i in range(m):
        x[basis[i]] = xb[i]
    cb = np.empty(m)
    for i in range(m):
        cb[i] = c[basis[i]]
    y = cb @ B_inv
    d = np.empty(n)
    for j in range(n):
        s = c[j]
        for k in range(indptr[j], indptr[j + 1]):
            s -= vals[k] * y[cols[k]]
        d[j] = s
    arow = np.empty(n)
    alpha = np.empty(m)
    since_refresh = 0
    iters = 0
    while iters < max_iter:
        iters += 1
        r = -1
        worst = feas_tol
        for i in range(m):
            bi = basis[i]
            v = lb[bi] - x[bi]
            if v > worst:
                worst = v
                r = i
            v = x[bi] - ub[bi]
            if v > worst:
                worst = v
                r = i
        if r < 0:
            return STATUS_OPTIMAL, iters
        leave = basis[r]
        below = x[leave] < lb[leave]
        rho = B_inv[r]
        for j in range(n):
            s = 0.0
            for k in range(indptr[j], indptr[j + 1]):
                s += vals[k] * rho[cols[k]]
            arow[j] = s
        # pass 1: minimal dual ratio among sign-eligible entering candidates
        best_ratio = np.inf
        for j in range(n):
            if in_basis[j]:
                continue
            aj = arow[j]
            if abs(aj) <= PIVOT_TOL or lb[j] >= ub[j] - 1e-30:
                continue
            at_lb = x[j] <= lb[j] + feas_tol
            if below:
                ok = (at_lb and aj < 0.0) or ((not at_lb) and aj > 0.0)
            else:
                ok = (at_lb and aj > 0.0) or ((not at_lb) and aj < 0.0)
            if not ok:
                continue
            ratio = abs(d[j]) / abs(aj)
            if ratio < best_ratio:
                best_ratio = ratio
        if not np.isfinite(best_ratio):
            return STATUS_UNBOUNDED, iters
        # pass 2: largest pivot magnitude among near-minimal ratios
        q = -1
        best_piv = 0.0
        for j in range(n):
            if in_basis[j]:
                continue
            aj = arow[j]
            if abs(aj) <= PIVOT_TOL or lb[j] >= ub[j] - 1e-30:
                continue
            at_lb = x[j] <= lb[j] + feas_tol
            if below:
                ok = (at_lb and aj < 0.0) or ((not at_lb) and aj > 0.0)
            else:
                ok = (at_lb and aj > 0.0) or ((not at_lb) and aj < 0.0)
            if not ok:
                continue
            ratio = abs(d[j]) / abs(aj)
            if ratio <= best_ratio + 1e-12 and abs(aj) > best_piv:
                best_piv = abs(aj)
                q = j
        if q < 0:
            return STATUS_UNBOUNDED, iters
        for i in range(m):
            alpha[i] = 0.0
        for k in range(indptr[q], indptr[q + 1]):
            v = vals[k]
            col = cols[k]
            for i in range(m):
                alpha[i] += v * B_inv[i, col]
        if abs(alpha[r]) < PIVOT_TOL:
            return STATUS_NUMERICAL, iters
        if below:
            target = lb[leave]
        else:
            target = ub[leave]
        delta = (x[leave] - target) / alpha[r]
        x[q] += delta
        for i in range(m):
            x[basis[i]] -= delta * alpha[i]
        x[leave] = target
        basis[r] = q
        in_basis[q] = True
        in_basis[leave] = False
        dq = d[q]
        piv = arow[q]
        scale = dq / piv
        for j in range(n):
            d[j] -= scale * arow[j]
        d[leave] = -scale
        d[q] = 0.0
        pivc = alpha[r]
        row = B_inv[r] / pivc
        for i in range(m):
            ai2 = alpha[i]
            if ai2 != 0.0 and i != r:
                for jj in range(m):
                    B_inv[i, jj] -= ai2 * row[jj]
        B_inv[r] = row
        since_refresh += 1
        if since_refresh >= REFRESH_EVERY:
            B = np.zeros((m, m))
            for i in range(m):
                j = basis[i]
                for k in range(indptr[j], indptr[j + 1]):
                    B[cols[k], i] = vals[k]
            B_inv[:, :] = np.linalg.inv(B)
            rhs = b.copy()
            for k in range(nnz):
                j = varids[k]
                if not in_basis[j]:
                    rhs[cols[k]] -= vals[k] * x[j]
            xb = B_inv @ rhs
            for i in range(m):
                x[basis[i]] = xb[i]
            cb = np.empty(m)
            for i in range(m):
                cb[i] = c[basis[i]]
            y = cb @ B_inv
            for j in range(n):
                s = c[j]
                for k in range(indptr[j], indptr[j + 1]):
                    s -= vals[k] * y[cols[k]]
                d[j] = s
            since_refresh = 0
    return STATUS_ITER_LIMIT, iters


# ---------------------------------------------------------------------------
# vectorized numpy implementation (fallback backend)
# ---------------------------------------------------------------------------

def _np_refactor(indptr, cols, vals, basis, m):
    B = np.zeros((m, m))
    for i in range(m):
        j = basis[i]
        sl = slice(indptr[j], indptr[j + 1])
        B[cols[sl], i] = vals[sl]
    return np.linalg.inv(B)


def _np_recompute(indptr, cols, vals, varids, b, basis, x, B_inv, in_basis):
    xw = np.where(in_basis[varids], 0.0, x[varids])
    rhs = b - np.bincount(cols, weights=vals * xw, minlength=b.shape[0])
    x[basis] = B_inv @ rhs


def _np_reduced(indptr, cols, vals, varids, c, y, n):
    contrib = np.bincount(varids, weights=vals * y[cols], minlength=n)
    return c[:n] - contrib if c.shape[0] == n else c - contrib


def _np_column(indptr, cols, vals, B_inv, q):
    sl = slice(indptr[q], indptr[q + 1])
    return B_inv[:, cols[sl]] @ vals[sl]


def _primal_numpy(indptr, cols, vals, varids, b, c, lb, ub, basis, x,
                  binv, binv_ok, feas_tol, opt_tol, max_iter):
    n = indptr.shape[0] - 1
    m = b.shape[0]
    in_basis = np.zeros(n, np.bool_)
    in_basis[basis] = True
    B_inv = binv
    if not binv_ok:
        B_inv[:, :] = _np_refactor(indptr, cols, vals, basis, m)
    _np_recompute(indptr, cols, vals, varids, b, basis, x, B_inv, in_basis)
    since_refresh = 0
    bland = False
    stall = 0
    iters = 0
    big_id = n + 1
    while iters < max_iter:
        iters += 1
        y = c[basis] @ B_inv
        d = _np_reduced(indptr, cols, vals, varids, c, y, n)
        at_lb = x[:n] <= lb[:n] + feas_tol
        at_ub = x[:n] >= ub[:n] - feas_tol
        viol = np.zeros(n)
        dirs = np.ones(n)
        only_lb = at_lb & ~at_ub
        only_ub = at_ub & ~at_lb
        free = ~at_lb & ~at_ub
        mask = only_lb & (d < -opt_tol)
        viol[mask] = -d[mask]
        mask = only_ub & (d > opt_tol)
        viol[mask] = d[mask]
        dirs[mask] = -1.0
        mask = free & (d > opt_tol)
        viol[mask] = d[mask]
        dirs[mask] = -1.0
        mask = free & (d < -opt_tol)
        viol[mask] = -d[mask]
        viol[in_basis] = 0.0
        if bland:
            cand = np.nonzero(viol > opt_tol)[0]
            if cand.shape[0] == 0:
                return STATUS_OPTIMAL, iters
            q = int(cand[0])
        else:
            q = int(np.argmax(viol))
            if viol[q] <= opt_tol:
                return STATUS_OPTIMAL, iters
        direction = dirs[q]
        alpha = _np_column(indptr, cols, vals, B_inv, q)
        xb = x[basis]
        lbb = lb[basis]
        ubb = ub[basis]
        ai = direction * alpha
        pos = ai > PIVOT_TOL
        neg = ai < -PIVOT_TOL
        theta = np.inf
        if np.isfinite(lb[q]) and np.isfinite(ub[q]):
            theta = ub[q] - lb[q]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_pos = np.where(pos, (xb - lbb + feas_tol) / np.where(pos, ai, 1.0), np.inf)
            t_neg = np.where(neg, (ubb - xb + feas_tol) / np.where(neg, -ai, 1.0), np.inf)
        t_all = np.minimum(t_pos, t_neg)
        if t_all.shape[0]:
            theta = min(theta, float(np.min(t_all)))
        if not np.isfinite(theta):
            return STATUS_UNBOUNDED, iters
        with np.errstate(divide="ignore", invalid="ignore"):
            t0_pos = np.where(pos, (xb - lbb) / np.where(pos, ai, 1.0), np.inf)
            t0_neg = np.where(neg, (ubb - xb) / np.where(neg, -ai, 1.0), np.inf)
        t0 = np.minimum(t0_pos, t0_neg)
        eligible = (pos | neg) & (t0 <= theta + 1e-12)
        if np.any(eligible):
            if bland:
                ids = np.where(eligible, basis, big_id + m)
                limit_row = int(np.argmin(ids))
            else:
                piv_mag = np.where(eligible, np.abs(alpha), -1.0)
                limit_row = int(np.argmax(piv_mag))
            step = max(float(t0[limit_row]), 0.0)
        else:
            limit_row = -1
            step = theta
        if step <= 1e-12:
            stall += 1
            if stall > 2 * m + 20:
                bland = True
        else:
            stall = 0
            bland = False
        if limit_row < 0:
            x[q] = ub[q] if direction > 0 else lb[q]
            x[basis] -= direction * step * alpha
            continue
        leave = basis[limit_row]
        x[q] += direction * step
        x[basis] -= direction * step * alpha
        x[leave] = lb[leave] if direction * alpha[limit_row] > 0 else ub[leave]
        basis[limit_row] = q
        in_basis[q] = True
        in_basis[leave] = False
        piv = alpha[limit_row]
        refresh = abs(piv) < PIVOT_TOL
        if not refresh:
            row = B_inv[limit_row] / piv
            B_inv -= alpha.reshape(-1, 1) * row.reshape(1, -1)
            B_inv[limit_row] = row
            since_refresh += 1
            refresh = since_refresh >= REFRESH_EVERY
        if refresh:
            B_inv[:, :] = _np_refactor(indptr, cols, vals, basis, m)
            _np_recompute(indptr, cols, vals, varids, b, basis, x, B_inv, in_basis)
            since_refresh = 0
    return STATUS_ITER_LIMIT, iters


def _dual_numpy(indptr, cols, vals, varids, b, c, lb, ub, basis, x,
                binv, binv_ok, feas_tol, opt_tol, max_iter):
    n = indptr.shape[0] - 1
    m = b.shape[0]
    in_basis = np.zeros(n, np.bool_)
    in_basis[basis] = True
    nb = ~in_basis
    x[nb] = np.clip(x[nb], lb[nb], ub[nb])
    B_inv = binv
    if not binv_ok:
        B_inv[:, :] = _np_refactor(indptr, cols, vals, basis, m)
    _np_recompute(indptr, cols, vals, varids, b, basis, x, B_inv, in_basis)
    y = c[basis] @ B_inv
    d = _np_reduced(indptr, cols, vals, varids, c, y, n)
    since_refresh = 0
    iters = 0
    fixed = lb >= ub - 1e-30
    while iters < max_iter:
        iters += 1
        xb = x[basis]
        vio = np.maximum(lb[basis] - xb, xb - ub[basis])
        r = int(np.argmax(vio))
        if vio[r] <= feas_tol:
            return STATUS_OPTIMAL, iters
        leave = basis[r]
        below = x[leave] < lb[leave]
        rho = B_inv[r]
        arow = np.bincount(varids, weights=vals * rho[cols], minlength=n)
        at_lb = x[:n] <= lb[:n] + feas_tol
        usable = (~in_basis) & (~fixed[:n]) & (np.abs(arow) > PIVOT_TOL)
        if below:
            ok = usable & ((at_lb & (arow < 0.0)) | (~at_lb & (arow > 0.0)))
        else:
            ok = usable & ((at_lb & (arow > 0.0)) | (~at_lb & (arow < 0.0)))
        if not np.any(ok):
            return STATUS_UNBOUNDED, iters
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(ok, np.abs(d) / np.where(ok, np.abs(arow), 1.0), np.inf)
        best_ratio = float(np.min(ratio))
        near = ok & (ratio <= best_ratio + 1e-12)
        piv_mag = np.where(near, np.abs(arow), -1.0)
        q = int(np.argmax(piv_mag))
        alpha = _np_column(indptr, cols, vals, B_inv, q)
        if abs(alpha[r]) < PIVOT_TOL:
            return STATUS_NUMERICAL, iters
        target = lb[leave] if below else ub[leave]
        delta = (x[leave] - target) / alpha[r]
        x[q] += delta
        x[basis] -= delta * alpha
        x[leave] = target
        basis[r] = q
        in_basis[q] = True
        in_basis[leave] = False
        nb = ~in_basis
        scale = d[q] / arow[q]
        d -= scale * arow
        d[leave] = -scale
        d[q] = 0.0
        row = B_inv[r] / alpha[r]
        B_inv -= alpha.reshape(-1, 1) * row.reshape(1, -1)
        B_inv[r] = row
        since_refresh += 1
        if since_refresh >= REFRESH_EVERY:
            B_inv[:, :] = _np_refactor(indptr, cols, vals, basis, m)
            _np_recompute(indptr, cols, vals, varids, b, basis, x, B_inv, in_basis)
            y = c[basis] @ B_inv
            d = _np_reduced(indptr, cols, vals, varids, c, y, n)
            since_refresh = 0
    return STATUS_ITER_LIMIT, iters


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

def _env_wants_numba() -> bool:
    val = os.environ.get("THERMOSYN_NUMBA", "").strip().lower()
    return val not in ("0", "false", "no", "off")


_NUMPY_KERNELS = (_primal_numpy, _dual_numpy)
_numba_kernels = None
_numba_failed = False


def _build_numba_kernels():
    global _numba_kernels, _numba_failed
    if _numba_kernels is not None or _numba_failed:
        return
    try:
        from numba import njit
    except ImportError:
        _numba_failed = True
        return
    try:
        jit = njit(cache=True)
        _numba_kernels = (jit(_primal_loops), jit(_dual_loops))
    except Exception:
        _numba_failed = True


def get_kernels(backend: str | None = None):
    """Return (primal_core, dual_core) for the requested or default backend."""
    if backend is None:
        backend = "numba" if _env_wants_numba() else "numpy"
    if backend == "numpy":
        return _NUMPY_KERNELS
    if backend == "numba":
        _build_numba_kernels()
        if _numba_kernels is None:
            return _NUMPY_KERNELS
        return _numba_kernels
    raise ValueError(f"unknown kernel backend: {backend}")


def active_backend() -> str:
    """Name of the backend get_kernels() would hand out by default."""
    if _env_wants_numba():
        _build_numba_kernels()
        if _numba_kernels is not None:
            return "numba"
    return "numpy"

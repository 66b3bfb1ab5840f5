"""Per-hour L1-penalized autoregressions with rolling calibration windows.

fit_lasso solves

    min_{b0, b}  1/(2n) * sum_i (y_i - b0 - x_i'b)^2  +  penalty * sum_j |b_j|

by cyclic coordinate descent with soft thresholding.  The intercept is
not penalized.  Columns are centred and scaled to unit population
variance internally, so the penalty acts comparably across columns even
when the caller passes unstandardized data; returned coefficients are on
the original scale.

The day-ahead point forecast averages the predictions of several models
fitted on trailing windows of different lengths (56, 84, 1092 and 1461
rows by default), each refitted every forecast day.  LearForecaster runs
that scheme over a span of days, sharing the per-window Gram matrix
across the 24 hourly models and warm starting each fit from the previous
day's coefficients.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import linprog

from probcast.data import FeatureDataset, SPLIT_VALIDATION
from probcast.errors import ConfigError, DataError, NumericalError

DEFAULT_WINDOWS = (56, 84, 1092, 1461)
PENALTY_RANGE = (1e-5, 1e-1)


def soft_threshold(value: float, threshold: float) -> float:
    """sign(value) * max(|value| - threshold, 0)."""
    return float(np.sign(value) * max(abs(value) - threshold, 0.0))


@dataclass
class LassoModel:
    penalty: float
    intercept: float
    coefficients: np.ndarray
    hour: int | None = None
    n_sweeps: int = 0
    objective_path: np.ndarray | None = None

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.coefficients + self.intercept


RESCUE_EVERY = 16
RESCUE_RTOL = 1e-6


def _sym_solve(sub, rhs, allow_lstsq=True):
    """Solve the symmetric system, Cholesky first, least squares fallback."""
    try:
        sol = cho_solve(cho_factor(sub, lower=True, check_finite=False), rhs, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        sol = None
    if sol is None or not np.all(np.isfinite(sol)):
        if not allow_lstsq:
            return None
        try:
            sol, *_ = np.linalg.lstsq(sub, rhs, rcond=1e-8)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(sol)):
            return None
    return sol


def _polish_candidates(gram, cov, penalty, w, grad=None, allow_lstsq=True):
    """Support-stationary proposals: gram[A,A] w_A = cov_A - penalty*sign(w_A).

    The active set starts from the support of w, joined by zero
    coordinates whose optimality condition the gradient grad = cov - G w
    violates; sign guesses come from w on the support and from grad on
    the admitted coordinates.  Coordinates whose solved sign contradicts
    the guess are dropped for up to six refinement rounds.  Candidates
    are proposals only; the caller line searches toward each and keeps
    improvements.
    """
    active = np.flatnonzero(w)
    signs = np.sign(w[active])
    if grad is not None:
        admit = np.flatnonzero((np.abs(grad) > penalty) & (w == 0.0))
        if admit.size:
            active = np.concatenate([active, admit])
            signs = np.concatenate([signs, np.sign(grad[admit])])
    out = []
    for _ in range(6):
        if active.size == 0:
            break
        sub = gram[np.ix_(active, active)]
        rhs = cov[active] - penalty * signs
        sol = _sym_solve(sub, rhs, allow_lstsq)
        if sol is None:
            break
        cand = np.zeros_like(w)
        cand[active] = sol
        out.append(cand)
        consistent = sol * signs > 0.0
        if np.all(consistent):
            break
        active = active[consistent]
        signs = signs[consistent]
    return out


def _basis_cache(gram):
    """Callable returning the null basis of gram, computed on first use."""
    box = []

    def get():
        if not box:
            box.append(_null_basis(gram))
        return box[0]

    return get


def _lars_candidate(gram, cov, penalty):
    """Exact solution proposal at the given penalty, by l1 homotopy.

    Traces the piecewise-linear solution path from the empty model down
    to the requested penalty, joining the coordinate whose correlation
    reaches the equicorrelation level and dropping any coordinate whose
    coefficient crosses zero.  The inverse of the equicorrelation system
    is maintained across events by Schur-complement updates in
    preallocated buffers, so each step costs one matrix-vector product;
    near the saturated end of the path those updates degrade, so the
    inverse is refreshed from a fresh factorization periodically and
    whenever the equicorrelation residual drifts.  Stops early
    (returning the point reached) when the system turns singular or the
    path degenerates; the output is a proposal for the caller to verify
    and is correct whenever the path completes.
    """
    p = cov.size
    w = np.zeros(p)
    in_set = np.zeros(p, dtype=bool)
    act = np.empty(p, dtype=np.intp)
    sgnv = np.empty(p)
    kbuf = np.empty((p, p))
    ga = np.empty((p, p), order="F")
    tmp = np.empty((p, p))
    m = 0

    dep_u = None

    def join(j, sign):
        nonlocal m, dep_u
        dep_u = None
        gjj = gram[j, j]
        if m == 0:
            if gjj <= 0.0:
                return False
            kbuf[0, 0] = 1.0 / gjj
        else:
            b = gram[act[:m], j]
            u = kbuf[:m, :m] @ b
            s = gjj - float(b @ u)
            if s <= 1e-12 * gjj:
                dep_u = u
                return False
            np.outer(u, u, out=tmp[:m, :m])
            kbuf[:m, :m] += tmp[:m, :m] / s
            kbuf[:m, m] = u / -s
            kbuf[m, :m] = kbuf[:m, m]
            kbuf[m, m] = 1.0 / s
        ga[:, m] = gram[:, j]
        act[m] = j
        sgnv[m] = sign
        in_set[j] = True
        m += 1
        return True

    def drop(k):
        nonlocal m
        j = act[k]
        in_set[j] = False
        w[j] = 0.0
        kk = kbuf[k, k]
        col = kbuf[:m, k].copy()
        keep = np.concatenate([np.arange(k), np.arange(k + 1, m)])
        ck = col[keep]
        np.outer(ck, ck, out=tmp[: m - 1, : m - 1])
        kbuf[: m - 1, : m - 1] = kbuf[np.ix_(keep, keep)] - tmp[: m - 1, : m - 1] / kk
        ga[:, k : m - 1] = ga[:, k + 1 : m]
        act[k : m - 1] = act[k + 1 : m]
        sgnv[k : m - 1] = sgnv[k + 1 : m]
        m -= 1

    def refresh_k():
        sub = gram[np.ix_(act[:m], act[:m])]
        try:
            fac = cho_factor(sub, lower=True, check_finite=False)
            fresh = cho_solve(fac, np.eye(m), check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            return False
        if not np.all(np.isfinite(fresh)):
            return False
        kbuf[:m, :m] = fresh
        return True

    exchanges = 0

    def _exchange(j, sgn):
        # the entrant's column is a combination of the active columns;
        # slide along the fit-preserving swap direction until an active
        # coefficient reaches zero, drop it, and admit the entrant
        nonlocal exchanges
        if dep_u is None or exchanges >= p or m == 0:
            return False
        u = dep_u
        if np.max(np.abs(ga[:, :m] @ u - gram[:, j])) > 1e-6:
            return False
        ids = act[:m].copy()
        move = sgn * u
        wa = w[ids]
        with np.errstate(divide="ignore", invalid="ignore"):
            tk = wa / move
        tk = np.where(np.isfinite(tk) & (tk > 0.0), tk, np.inf)
        k = int(np.argmin(tk))
        t = float(tk[k])
        if not np.isfinite(t):
            return False
        drop(k)
        if not join(j, sgn):
            return False
        w[ids] = wa - t * move
        w[ids[k]] = 0.0
        w[j] = sgn * t
        exchanges += 1
        return True

    c = cov.copy()
    lam = float(np.max(np.abs(c)))
    tiny = 0
    for step in range(3 * p + 50):
        if step % 32 == 31:
            c = cov - gram @ w
            lam = float(np.max(np.abs(c)))
            if m:
                refresh_k()
        if lam <= penalty * (1.0 + 1e-12) + 1e-15:
            return w
        if m == 0:
            j = int(np.argmax(np.abs(c)))
            if not join(j, 1.0 if c[j] > 0 else -1.0):
                return w
        retried = False
        while True:
            d_a = kbuf[:m, :m] @ sgnv[:m]
            if not np.all(np.isfinite(d_a)) or np.max(np.abs(d_a)) > 1e12:
                return w
            a_full = ga[:, :m] @ d_a
            if np.max(np.abs(a_full[act[:m]] - sgnv[:m])) <= 1e-6:
                break
            if retried:
                return w
            c = cov - gram @ w
            lam = float(np.max(np.abs(c)))
            if lam <= penalty * (1.0 + 1e-12) + 1e-15 or not refresh_k():
                return w
            retried = True
        stuck = np.flatnonzero((w[act[:m]] == 0.0) & (sgnv[:m] * d_a < 0.0))
        if stuck.size:
            # a coordinate sitting exactly at zero whose direction points
            # against its sign would cross immediately; that is a
            # zero-length drop the event scan cannot see
            for k in stuck[::-1].tolist():
                drop(int(k))
            continue
        gamma = lam - penalty
        event = None
        out = np.flatnonzero(~in_set)
        if out.size:
            cj = c[out]
            aj = a_full[out]
            for sgn in (1.0, -1.0):
                with np.errstate(divide="ignore", invalid="ignore"):
                    g = (cj - sgn * lam) / (aj - sgn)
                g = np.where(np.isfinite(g) & (g > 1e-12), g, np.inf)
                k = int(np.argmin(g))
                if g[k] < gamma:
                    gamma = float(g[k])
                    event = ("join", int(out[k]), sgn)
        with np.errstate(divide="ignore", invalid="ignore"):
            gd = -w[act[:m]] / d_a
        gd = np.where(np.isfinite(gd) & (gd > 0.0), gd, np.inf)
        k = int(np.argmin(gd))
        if gd[k] <= gamma:
            gamma = float(gd[k])
            event = ("drop", k, 0.0)
        if gamma <= 1e-11:
            tiny += 1
            if tiny > 10:
                return w
        else:
            tiny = 0
        w[act[:m]] += gamma * d_a
        c -= gamma * a_full
        lam -= gamma
        if event is not None:
            kind, j, sgn = event
            if kind == "join":
                if not join(j, sgn) and not _exchange(j, sgn):
                    # degenerate entrant that no exchange can admit;
                    # leave it out of future join scans and keep tracing
                    # with the others
                    in_set[j] = True
            else:
                drop(j)
        crossed = np.flatnonzero(sgnv[:m] * w[act[:m]] < 0.0)
        if crossed.size:
            # a coefficient passed zero without its drop event firing;
            # tiny overshoots are cleaned up and folded back into the
            # residual correlations, anything larger means the traced
            # point is no longer on the path
            if np.max(np.abs(w[act[:m]][crossed])) > 1e-7 * (1.0 + np.max(np.abs(w))):
                return w
            for k in crossed[::-1].tolist():
                j = act[k]
                c += ga[:, k] * w[j]
                w[j] = 0.0
                drop(k)
            lam = float(np.max(np.abs(c[act[:m]]))) if m else float(np.max(np.abs(c)))
        if event is None:
            return w
    return w


def _null_basis(gram):
    """Orthonormal basis of the Gram null space, or None when it is trivial.

    Directions in the null space leave fitted values unchanged, so the
    objective depends on them only through the penalty; coordinate
    descent crawls along them when columns are collinear (p > n).
    """
    eigvals, eigvecs = np.linalg.eigh(gram)
    top = eigvals[-1]
    if top <= 0.0:
        return None
    null = eigvals <= 1e-12 * top
    if not np.any(null):
        return None
    return np.ascontiguousarray(eigvecs[:, null])


def _null_l1_sweep(null_basis, w):
    """One pass of exact l1 line searches along fit-preserving directions.

    Along each basis vector the objective reduces to sum_j a_j |t - b_j|,
    minimized at a weighted median of the breakpoints.  Returns the moved
    vector, or None when no direction moved.
    """
    w = w.copy()
    changed = False
    for k in range(null_basis.shape[1]):
        nk = null_basis[:, k]
        mask = np.abs(nk) > 1e-12
        if not np.any(mask):
            continue
        weights = np.abs(nk[mask])
        breaks = -w[mask] / nk[mask]
        order = np.argsort(breaks)
        csum = np.cumsum(weights[order])
        idx = int(np.searchsorted(csum, 0.5 * csum[-1]))
        t = float(breaks[order][min(idx, order.size - 1)])
        if t != 0.0:
            w += t * nk
            changed = True
    return w if changed else None


def _null_l1_exact(null_basis, w):
    """Joint l1 minimizer over the whole null space, by linear programming.

    minimize ||w + N u||_1 over u, posed with split positive parts; the
    one-at-a-time median sweep can stall on coupled directions, this
    cannot.  Coordinates no basis vector touches contribute a constant,
    so the program only carries the touched rows.  Returns the moved
    vector or None if the solve fails.
    """
    rows = np.flatnonzero(np.any(np.abs(null_basis) > 1e-12, axis=1))
    if rows.size == 0:
        return None
    nb = null_basis[rows]
    p, d = nb.shape
    cost = np.concatenate([np.zeros(d), np.ones(2 * p)])
    a_eq = np.hstack([nb, -np.eye(p), np.eye(p)])
    bounds = [(None, None)] * d + [(0.0, None)] * (2 * p)
    try:
        res = linprog(cost, A_eq=a_eq, b_eq=-w[rows], bounds=bounds, method="highs")
    except ValueError:
        return None
    if not res.success:
        return None
    return w + null_basis @ res.x[:d]


def _segment_min(gram, cov, yty_n, penalty, w, q, cand):
    """Exact minimizer of the objective on the segment from w to cand.

    The smooth part is quadratic in the step fraction t and the penalty
    is piecewise linear, so scanning sign breakpoints plus the parabola
    vertex of each interval finds the global segment minimum.  Returns
    (w_best, gram @ w_best, objective_best).
    """
    d = cand - w
    gd = gram @ d
    a = float(d @ gd)
    dq = float(d @ q)
    dc = float(d @ cov)
    b = dq - dc
    wq = float(w @ q)
    wc = float(w @ cov)

    moving = d != 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = np.where(moving, -w / np.where(moving, d, 1.0), -1.0)
    ts = cross[(cross > 0.0) & (cross < 1.0)]
    ts = np.unique(np.concatenate([ts, [0.0, 1.0]]))
    vertices = []
    if a > 0.0:
        for lo, hi in zip(ts[:-1], ts[1:]):
            mid = 0.5 * (lo + hi)
            slope_l1 = penalty * float(np.sign(w + mid * d) @ d)
            t_star = -(b + slope_l1) / a
            if lo < t_star < hi:
                vertices.append(t_star)
    ts = np.concatenate([ts, vertices]) if vertices else ts

    def objective(t):
        quad = 0.5 * (yty_n - 2.0 * (wc + t * dc) + wq + 2.0 * t * dq + t * t * a)
        return quad + penalty * np.abs(w + t * d).sum()

    best_t, best_obj = 0.0, objective(0.0)
    for t in ts:
        obj = objective(float(t))
        if obj < best_obj:
            best_obj, best_t = obj, float(t)
    if best_t == 0.0:
        return w, q, best_obj
    w_new = w + best_t * d
    return w_new, q + best_t * gd, best_obj


def _sweep(gram, cov, penalty, w, q, diag, idx):
    """One pass of soft-threshold updates over idx; returns the max change."""
    delta = 0.0
    for j in idx:
        dj = diag[j]
        if dj == 0.0:
            continue
        rho = cov[j] - q[j] + dj * w[j]
        if rho > penalty:
            new = (rho - penalty) / dj
        elif rho < -penalty:
            new = (rho + penalty) / dj
        else:
            new = 0.0
        step = new - w[j]
        if step != 0.0:
            q += gram[:, j] * step
            w[j] = new
            if step < 0.0:
                step = -step
            if step > delta:
                delta = step
    return delta


def _rescue(gram, cov, yty_n, penalty, w, q, obj, basis, tier):
    """Exact refinements, escalating in cost with the visit tier.

    Tier 1 rebuilds support-stationarity proposals from the current
    support plus the zero coordinates whose optimality condition is
    violated and line searches toward each (and its range-space
    projection), skipping proposals whose subsystem is not positive
    definite.  Tier 2 runs the homotopy proposal first, which solves the
    problem outright on the designs tier 1 cannot touch, then polishes
    from the proposal's support in case the path stopped early.  Tier 3
    allows everything: least squares fallbacks inside the proposals, l1
    minimization along fit-preserving null directions by coordinatewise
    medians, and one joint linear program over the null space when a
    round finds nothing else.  Every move is accepted only on a strict
    objective decrease, so the caller's objective path stays monotone.
    """

    def exact(cand):
        q_new = gram @ cand
        val = 0.5 * (yty_n - 2.0 * (cand @ cov) + cand @ q_new)
        return q_new, val + penalty * np.abs(cand).sum()

    q = gram @ w
    if tier == 2:
        # the homotopy lands the exact optimum on most designs; when the
        # path stops a coordinate or two short of a saturated support,
        # stationarity solves from its support finish the job.  Ties in
        # the objective are resolved toward strictly smaller supports,
        # which is what lets a coordinatewise fixed point be reached on
        # designs whose optimum is not unique.
        scale = max(1.0, abs(obj))

        def better(cand, obj_new):
            if obj_new < obj:
                return True
            return obj_new <= obj + 1e-12 * scale and np.count_nonzero(
                cand
            ) < np.count_nonzero(w)

        cand = _lars_candidate(gram, cov, penalty)
        q_new, obj_new = exact(cand)
        if better(cand, obj_new):
            w, q, obj = cand, q_new, obj_new
        for _ in range(6):
            moved = False
            for cand in _polish_candidates(gram, cov, penalty, w, cov - q):
                q_new, obj_new = exact(cand)
                if better(cand, obj_new):
                    w, q, obj, moved = cand, q_new, obj_new, True
            if not moved:
                break
        return w, q, obj
    arsenal = tier >= 3
    lp_left = arsenal
    for _ in range(8):
        improved = False
        cands = _polish_candidates(gram, cov, penalty, w, cov - q, allow_lstsq=arsenal)
        for cand in cands:
            w_new, q_new, obj_new = _segment_min(gram, cov, yty_n, penalty, w, q, cand)
            if obj_new < obj:
                w, q, obj, improved = w_new, q_new, obj_new, True
            if basis is not None:
                ranged = cand - basis @ (basis.T @ (cand - w))
                w_new, q_new, obj_new = _segment_min(gram, cov, yty_n, penalty, w, q, ranged)
                if obj_new < obj:
                    w, q, obj, improved = w_new, q_new, obj_new, True
        if arsenal and basis is not None and penalty > 0.0:
            for _ in range(3):
                cand = _null_l1_sweep(basis, w)
                if cand is None:
                    break
                q_new, obj_new = exact(cand)
                if obj_new < obj:
                    w, q, obj, improved = cand, q_new, obj_new, True
                else:
                    break
        if not improved and lp_left and basis is not None and penalty > 0.0:
            if basis.shape[1] > 1:
                lp_left = False
                cand = _null_l1_exact(basis, w)
                if cand is not None:
                    q_new, obj_new = exact(cand)
                    if obj_new < obj:
                        w, q, obj, improved = cand, q_new, obj_new, True
        if not improved:
            break
    return w, q, obj


def _cd_solve(gram, cov, yty_n, penalty, w0, tol, max_sweeps, null_basis_fn=None, hard=False):
    """Coordinate descent on the standardized problem.

    gram is (1/n) X'X and cov is (1/n) X'y for centred, unit-variance
    columns; yty_n is (1/n) y'y for the centred target.  Between full
    passes the sweep is restricted to the current support, which leaves
    every update an exact coordinatewise minimization; convergence is
    only certified by a full sweep whose largest coordinate change falls
    below tol.  When the objective stalls while coordinate changes stay
    above tol (collinear designs drift along fit-preserving directions),
    a rescue pass of exact refinements runs; it never accepts a move
    that fails to lower the objective.  Returns the coefficient vector,
    the sweep count, the per-sweep objective values, and the last
    maximum coordinate change.
    """
    p = cov.size
    gram = np.asfortranarray(gram)
    w = np.zeros(p) if w0 is None else w0.astype(float).copy()
    diag = np.ascontiguousarray(np.diag(gram))
    w[diag == 0.0] = 0.0
    q = gram @ w
    full = range(p)
    active = None
    path = []
    gate = 2
    step = RESCUE_EVERY
    visits = 0
    delta = np.inf
    for sweep in range(1, max_sweeps + 1):
        idx = full if active is None else active
        delta = _sweep(gram, cov, penalty, w, q, diag, idx)
        obj = 0.5 * (yty_n - 2.0 * float(w @ cov) + float(w @ q))
        obj += penalty * float(np.abs(w).sum())
        path.append(obj)
        if active is None:
            if delta < tol:
                return w, sweep, np.array(path), delta
            nz = np.flatnonzero(w)
            active = nz.tolist() if 0 < nz.size < p else None
        elif delta < tol:
            active = None
        if sweep >= gate:
            visits += 1
            tier = min(visits + (1 if hard else 0), 3)
            basis = None
            if tier != 2 and null_basis_fn is not None:
                basis = null_basis_fn()
            w, q, rescued = _rescue(gram, cov, yty_n, penalty, w, q, obj, basis, tier)
            if obj - rescued >= RESCUE_RTOL * max(1.0, abs(obj)):
                step = RESCUE_EVERY
            elif visits >= 3:
                step = 2 * step
            gate = sweep + step
            active = None
        if sweep % 128 == 0:
            q = gram @ w
    raise NumericalError(
        f"coordinate descent did not converge in {max_sweeps} sweeps (last change {delta:.3e})"
    )


def _scaled_moments(x: np.ndarray):
    """Means, scales and the centred unit-variance design of x."""
    xbar = x.mean(axis=0)
    scale = x.std(axis=0)
    safe = np.where(scale > 0.0, scale, 1.0)
    xs = (x - xbar) / safe
    if np.any(scale == 0.0):
        xs[:, scale == 0.0] = 0.0
    return xbar, scale, safe, xs


def fit_lasso(
    x: np.ndarray,
    y: np.ndarray,
    penalty: float,
    *,
    tol: float = 1e-6,
    max_sweeps: int = 10_000,
    hour: int | None = None,
) -> LassoModel:
    """Fit one L1-penalized linear model by coordinate descent.

    Constant columns keep a zero coefficient.  Raises NumericalError if
    the sweep limit is reached before the maximum coordinate change in
    the standardized problem drops below tol.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if x.ndim != 2 or x.shape[0] != y.size or x.shape[0] < 1:
        raise DataError("x must be (n, p) with one y value per row")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DataError("inputs to fit_lasso must be finite")
    if penalty < 0:
        raise ConfigError("penalty must be non-negative")
    n = x.shape[0]
    xbar, scale, safe, xs = _scaled_moments(x)
    ybar = float(y.mean())
    yc = y - ybar
    gram = xs.T @ xs / n
    cov = xs.T @ yc / n
    basis_fn = _basis_cache(gram)
    w, sweeps, path, _ = _cd_solve(
        gram,
        cov,
        float(yc @ yc) / n,
        penalty,
        None,
        tol,
        max_sweeps,
        null_basis_fn=basis_fn,
        hard=n <= x.shape[1],
    )
    coef = w / safe
    coef[scale == 0.0] = 0.0
    intercept = ybar - float(coef @ xbar)
    return LassoModel(penalty, intercept, coef, hour, sweeps, path)


@dataclass
class LearEnsembleForecast:
    """Per-hour member forecasts of every window length plus their mean."""

    day: date
    windows: tuple
    members: np.ndarray
    mean: np.ndarray

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        if self.members.shape != (len(self.windows), 24) or self.mean.shape != (24,):
            raise DataError("ensemble forecast shapes are inconsistent")


class LearForecaster:
    """Rolling refits of the per-hour models over a span of dataset rows.

    The 24 hourly fits of one (day, window) pair share the window's Gram
    matrix, and each (window, hour) coefficient vector warm starts the
    next day's fit.  Fits are independent, so results are identical to
    fitting each model from scratch.
    """

    def __init__(
        self,
        dataset: FeatureDataset,
        penalty: float,
        windows=DEFAULT_WINDOWS,
        *,
        tol: float = 1e-6,
        max_sweeps: int = 10_000,
    ):
        if not windows or any(w < 1 for w in windows):
            raise ConfigError("window lengths must be positive")
        if penalty < 0:
            raise ConfigError("penalty must be non-negative")
        self.dataset = dataset
        self.penalty = float(penalty)
        self.windows = tuple(int(w) for w in windows)
        self.tol = tol
        self.max_sweeps = max_sweeps
        self._warm: dict = {}

    def _window_models(self, i: int, window: int):
        """Intercepts and original-scale coefficients of the 24 hour models."""
        if i < window:
            raise DataError(
                f"insufficient history: window of {window} rows needs {window} rows before index {i}"
            )
        x = self.dataset.features[i - window : i]
        yall = self.dataset.targets[i - window : i]
        n = window
        xbar, scale, safe, xs = _scaled_moments(x)
        gram = np.asfortranarray(xs.T @ xs / n)
        basis_fn = _basis_cache(gram)
        ybar = yall.mean(axis=0)
        yc = yall - ybar
        cov_all = xs.T @ yc / n
        yty_all = np.einsum("ij,ij->j", yc, yc) / n
        intercepts = np.empty(24)
        coefs = np.empty((x.shape[1], 24))
        for h in range(24):
            key = (window, h)
            w0 = self._warm.get(key)
            if w0 is not None and w0.size != x.shape[1]:
                w0 = None
            w, _, _, _ = _cd_solve(
                gram,
                cov_all[:, h],
                float(yty_all[h]),
                self.penalty,
                w0,
                self.tol,
                self.max_sweeps,
                null_basis_fn=basis_fn,
                hard=n <= x.shape[1],
            )
            self._warm[key] = w
            coef = w / safe
            coef[scale == 0.0] = 0.0
            coefs[:, h] = coef
            intercepts[h] = ybar[h] - float(coef @ xbar)
        return intercepts, coefs

    def forecast_index(self, i: int) -> LearEnsembleForecast:
        members = np.empty((len(self.windows), 24))
        xrow = self.dataset.features[i]
        for k, window in enumerate(self.windows):
            intercepts, coefs = self._window_models(i, window)
            members[k] = xrow @ coefs + intercepts
        return LearEnsembleForecast(
            self.dataset.dates[i], self.windows, members, members.mean(axis=0)
        )

    def forecast_indices(self, indices):
        """Stacked member and mean forecasts for the given row indices."""
        indices = list(indices)
        members = np.empty((len(indices), len(self.windows), 24))
        for pos, i in enumerate(indices):
            members[pos] = self.forecast_index(i).members
        return members, members.mean(axis=1)


def fit_lear_hour(
    dataset: FeatureDataset,
    hour: int,
    window_days: int,
    as_of: date,
    penalty: float,
    **fit_kwargs,
) -> LassoModel:
    """Fit the model for one delivery hour on the trailing window.

    The window holds the last window_days dataset rows dated strictly
    before as_of.
    """
    if not 0 <= hour < 24:
        raise ConfigError(f"hour must be in 0..23, got {hour}")
    i = int(sum(1 for d in dataset.dates if d < as_of))
    if i < window_days:
        raise DataError(
            f"insufficient history before {as_of}: need {window_days} rows, have {i}"
        )
    x = dataset.features[i - window_days : i]
    y = dataset.targets[i - window_days : i, hour]
    return fit_lasso(x, y, penalty, hour=hour, **fit_kwargs)


def lear_point_forecast(
    dataset: FeatureDataset,
    day: date,
    penalty: float,
    windows=DEFAULT_WINDOWS,
    **kwargs,
) -> LearEnsembleForecast:
    """Refit all window models as of the given day and average them."""
    i = dataset.index_of(day)
    return LearForecaster(dataset, penalty, windows, **kwargs).forecast_index(i)


def tune_lambda(
    dataset: FeatureDataset,
    search_range=PENALTY_RANGE,
    trials: int = 200,
    seed: int = 0,
    window_days: int = 1461,
) -> float:
    """Pick the penalty by seeded log-uniform random search.

    Each trial refits the largest-window model over every validation day
    and scores mean absolute error against the validation targets; the
    winning penalty is shared by all window lengths downstream.  Ties
    keep the earliest trial, so the search is reproducible.
    """
    lo, hi = float(search_range[0]), float(search_range[1])
    if not (0 < lo <= hi) or trials < 1:
        raise ConfigError(f"invalid search range {search_range!r} or trial count {trials}")
    val_idx = dataset.indices(SPLIT_VALIDATION)
    if val_idx.size == 0:
        raise DataError("no validation rows to tune on")
    if val_idx[0] < window_days:
        raise DataError(
            f"first validation row has {val_idx[0]} rows of history; window needs {window_days}"
        )
    rng = np.random.default_rng(seed)
    draws = np.exp(rng.uniform(np.log(lo), np.log(hi), size=trials))
    actual = dataset.targets[val_idx]
    best_penalty, best_mae = None, np.inf
    for lam in draws:
        engine = LearForecaster(dataset, float(lam), (window_days,))
        _, mean = engine.forecast_indices(val_idx)
        mae = float(np.mean(np.abs(mean - actual)))
        if mae < best_mae:
            best_mae, best_penalty = mae, float(lam)
    return best_penalty


def save_lear_models(models, path) -> None:
    """CSV dump: one row per (hour, window) model with its coefficients.

    The horizon column records the calibration window length in days.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["hour", "horizon", "intercept"]
            + [f"c{i:03d}" for i in range(151)]
            + ["penalty"]
        )
        for window_days, model in models:
            writer.writerow(
                [model.hour, window_days, repr(float(model.intercept))]
                + [repr(float(v)) for v in model.coefficients]
                + [repr(float(model.penalty))]
            )


def load_lear_models(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["hour", "horizon", "intercept"]:
            raise DataError(f"{path}: not a model file")
        for rec in reader:
            model = LassoModel(
                penalty=float(rec[-1]),
                intercept=float(rec[2]),
                coefficients=np.array([float(v) for v in rec[3:-1]]),
                hour=int(rec[0]),
            )
            out.append((int(rec[1]), model))
    return out

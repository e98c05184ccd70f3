"""Bounded local optimizers: a model-based derivative-free trust-region
method (BOBYQA family) and a projected BFGS with backtracking line search.

Both are pure minimizers; callers maximize by negating their objective.
minimize_df keeps a set of interpolation points, fits the minimum-Frobenius-
norm quadratic through them, and takes bound-constrained trust-region steps;
it terminates when the resolution radius implies a parameter change below
``stop`` (the 1e-4 rule), or when the evaluation budget runs out. There is
no hidden randomness: given the same problem it retraces the same path.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass
class OptimProblem:
    """Minimization problem with box bounds.

    bounds is (n, 2) [lo, hi]; x0 must lie inside. stop is the parameter-
    change tolerance that ends the search.
    """

    objective: Callable[[np.ndarray], float]
    bounds: np.ndarray
    x0: np.ndarray
    stop: float = 1e-4
    max_evaluations: int = 1000

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=np.float64).reshape(-1, 2)
        self.x0 = np.asarray(self.x0, dtype=np.float64).ravel().copy()
        if self.bounds.shape[0] != self.x0.size:
            raise ValueError("bounds and x0 length mismatch")
        if np.any(self.bounds[:, 0] > self.bounds[:, 1]):
            raise ValueError("each bound must satisfy lo <= hi")
        if np.any(self.x0 < self.bounds[:, 0] - 1e-12) or np.any(self.x0 > self.bounds[:, 1] + 1e-12):
            raise ValueError("x0 must lie within bounds")
        self.x0 = np.clip(self.x0, self.bounds[:, 0], self.bounds[:, 1])
        if not (self.stop > 0):
            raise ValueError("stop tolerance must be positive")
        if self.max_evaluations < 1:
            raise ValueError("max_evaluations must be >= 1")


@dataclass
class OptimResult:
    x: np.ndarray
    f: float
    evaluations: int
    status: str
    iterations: int = 0
    warning: bool = False
    final_radius: float = float("nan")


class _Budget:
    """Counts objective evaluations and tracks the best point seen."""

    def __init__(self, fn, limit):
        self.fn = fn
        self.limit = limit
        self.count = 0
        self.best_x = None
        self.best_f = np.inf

    @property
    def exhausted(self):
        return self.count >= self.limit

    def __call__(self, x):
        self.count += 1
        f = float(self.fn(np.asarray(x, dtype=np.float64)))
        if np.isnan(f):
            f = np.inf
        if f < self.best_f:
            self.best_f = f
            self.best_x = np.array(x, dtype=np.float64)
        return f


def _trsbox(g, hmul, delta, lo, hi):
    """Minimize g.s + 0.5 s.H.s subject to |s| <= delta and lo <= s <= hi.

    Truncated CG with bound activation; restarts with a coordinate fixed
    whenever a bound is hit.
    """
    n = g.size
    s = np.zeros(n)
    fixed = (hi - lo) <= 0
    tiny = 1e-14

    for _outer in range(2 * n + 5):
        gq = g + hmul(s)
        gq[fixed] = 0.0
        r = -gq
        if np.linalg.norm(r) <= 1e-12 * max(1.0, np.linalg.norm(g)):
            return s
        p = r.copy()
        rr = r @ r
        hit_tr = False
        hit_bound = False
        for _inner in range(2 * n):
            hp = hmul(p)
            hp[fixed] = 0.0
            curv = p @ hp
            # step length to the trust-region sphere along p
            ss, sp, pp = s @ s, s @ p, p @ p
            if pp <= tiny:
                return s
            disc = max(sp * sp + pp * (delta * delta - ss), 0.0)
            alpha_tr = (-sp + np.sqrt(disc)) / pp
            if curv <= tiny * pp:
                alpha = alpha_tr
                hit_tr = True
            else:
                alpha = rr / curv
                if alpha >= alpha_tr:
                    alpha = alpha_tr
                    hit_tr = True
            # first bound crossing along p
            bound_idx = -1
            for i in range(n):
                if fixed[i] or p[i] == 0.0:
                    continue
                lim = (hi[i] - s[i]) / p[i] if p[i] > 0 else (lo[i] - s[i]) / p[i]
                if lim < alpha:
                    alpha = lim
                    bound_idx = i
                    hit_tr = False
            if alpha > 0:
                s = s + alpha * p
            if bound_idx >= 0:
                s[bound_idx] = hi[bound_idx] if p[bound_idx] > 0 else lo[bound_idx]
                fixed = fixed.copy()
                fixed[bound_idx] = True
                hit_bound = True
                break
            if hit_tr:
                return s
            r = r - alpha * hp
            rr_new = r @ r
            if rr_new <= 1e-24:
                return s
            p = r + (rr_new / rr) * p
            rr = rr_new
        if not hit_bound:
            return s
    return s


def _mfn_model(points, fvals, center_idx):
    """Minimum-Frobenius-norm quadratic interpolant of the point set.

    Returns (g, hmul, span) for q about the center, expressed in the
    span-normalized frame: the caller works with steps s' = s / span, which
    keeps the interpolation system well-scaled at small radii.
    """
    z = points - points[center_idx]
    npt, n = z.shape
    span = float(np.linalg.norm(z, axis=1).max())
    if span <= 0:
        span = 1.0
    z = z / span
    a = 0.5 * (z @ z.T) ** 2
    p = np.concatenate([np.ones((npt, 1)), z], axis=1)
    kkt = np.zeros((npt + n + 1, npt + n + 1))
    kkt[:npt, :npt] = a + 1e-12 * np.eye(npt)  # ridge against degenerate sets
    kkt[:npt, npt:] = p
    kkt[npt:, :npt] = p.T
    rhs = np.concatenate([fvals, np.zeros(n + 1)])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    lam = sol[:npt]
    g = sol[npt + 1:]

    def hmul(s, _z=z, _lam=lam):
        return _z.T @ (_lam * (_z @ s))

    return g, hmul, span


def minimize_df(problem: OptimProblem) -> OptimResult:
    """Derivative-free bounded minimization (quadratic trust-region model)."""
    lo, hi = problem.bounds[:, 0], problem.bounds[:, 1]
    ranges = hi - lo
    n = problem.x0.size
    budget = _Budget(problem.objective, problem.max_evaluations)

    f0 = budget(problem.x0)
    if not np.isfinite(f0):
        raise ValueError("objective is not finite at x0")
    if not np.any(ranges > 0):
        return OptimResult(problem.x0.copy(), f0, budget.count, "xtol", final_radius=0.0)

    scale = np.where(ranges > 0, ranges, 1.0)
    to_s = lambda x: (x - lo) / scale
    to_x = lambda s: lo + s * scale
    slo = np.zeros(n)
    shi = np.where(ranges > 0, 1.0, 0.0)
    free_idx = np.nonzero(ranges > 0)[0]

    rho_end = problem.stop / ranges.max()
    rho = max(0.1, rho_end)
    delta = rho

    s0 = to_s(problem.x0)
    pts = [s0]
    fv = [f0]

    def try_point(s):
        if budget.exhausted:
            return False
        s = np.clip(s, slo, shi)
        for q in pts:
            if np.array_equal(q, s):
                return False
        pts.append(s)
        fv.append(budget(to_x(s)))
        return True

    def drop_farthest(anchor, keep_last):
        dists = [float(np.linalg.norm(q - anchor)) for q in pts]
        dists[int(np.argmin(fv))] = -1.0
        if keep_last:
            dists[-1] = -1.0
        victim = int(np.argmax(dists))
        pts.pop(victim)
        fv.pop(victim)

    def shrink_rho(r):
        # Powell's staged reduction toward rho_end
        if r <= 16.0 * rho_end:
            return rho_end
        if r <= 250.0 * rho_end:
            return np.sqrt(r * rho_end)
        return 0.1 * r

    npt_target = min(2 * n + 1, max(n + 2, problem.max_evaluations - n))

    # a resolution stage may only end after the model has seen a fresh
    # symmetric +/-rho stencil around the incumbent; this is what keeps the
    # interpolation geometry poised before rho is reduced
    stencil_center = None
    stencil_rho = -1.0

    def stencil_fresh(sb):
        return (stencil_rho == rho and stencil_center is not None
                and np.linalg.norm(stencil_center - sb) <= 0.5 * rho)

    def refresh_stencil(sb):
        nonlocal stencil_center, stencil_rho
        added = 0
        for i in free_idx:
            if budget.exhausted:
                return
            for sign in (1.0, -1.0):
                if added >= npt_target - 1:
                    break
                cand = sb.copy()
                cand[i] = np.clip(cand[i] + sign * rho, 0.0, 1.0)
                if try_point(cand):
                    added += 1
                    if len(pts) > npt_target:
                        drop_farthest(sb, keep_last=True)
        stencil_center = sb.copy()
        stencil_rho = rho

    # initial stencil doubles as the first interpolation set
    refresh_stencil(s0)

    status = "maxeval"
    iterations = 0
    stagnation = 0
    fail_streak = 0
    stagnation_cap = 3 * n + 10
    stop_now = False
    while not budget.exhausted and not stop_now:
        if len(pts) < n + 2:
            break
        iterations += 1
        if iterations > 100 + 60 * problem.max_evaluations:
            break
        points = np.array(pts)
        fvals = np.array(fv)
        b = int(np.argmin(fvals))
        sb = points[b]
        at_resolution = delta <= rho * 1.0001

        def stage_end():
            # returns True when the search is over ('xtol')
            nonlocal rho, delta, stagnation, fail_streak
            affordable = budget.limit - budget.count >= 2 * len(free_idx)
            if not stencil_fresh(sb) and affordable:
                refresh_stencil(sb)
                return False
            if rho <= rho_end:
                return affordable  # an unverified model must not claim xtol
            rho = shrink_rho(rho)
            delta = rho
            stagnation = 0
            fail_streak = 0
            return False

        if stagnation >= stagnation_cap and at_resolution:
            if stage_end():
                status = "xtol"
                stop_now = True
            continue

        # fit the model on points near the incumbent; stale far points would
        # wreck the interpolation system's conditioning
        dist = np.linalg.norm(points - sb, axis=1)
        local = dist <= max(4.0 * delta, 2.0 * rho)
        if local.sum() < min(n + 2, len(pts)):
            order = np.argsort(dist)
            local = np.zeros(len(pts), dtype=bool)
            local[order[:n + 2]] = True
        sel = np.nonzero(local)[0]
        b_sel = int(np.nonzero(sel == b)[0][0])

        g, hmul, span = _mfn_model(points[sel], fvals[sel], b_sel)
        step = span * _trsbox(g, hmul, delta / span,
                              (slo - sb) / span, (shi - sb) / span)
        step_norm = np.linalg.norm(step)

        if step_norm < 0.5 * rho:
            # the model sees nothing above the resolution scale
            far = np.linalg.norm(points - sb, axis=1)
            far[b] = -1.0
            worst = int(np.argmax(far))
            if far[worst] > 2.0 * delta:
                # pull the stalest point toward the incumbent first
                direction = points[worst] - sb
                nrm = np.linalg.norm(direction)
                cand = sb + (rho / nrm) * direction if nrm > 0 else sb
                if try_point(np.clip(cand, slo, shi)):
                    pts.pop(worst)
                    fv.pop(worst)
                    continue
            if stage_end():
                status = "xtol"
                stop_now = True
            continue

        step_s = step / span
        pred = -(g @ step_s + 0.5 * step_s @ hmul(step_s))
        s_new = np.clip(sb + step, slo, shi)
        if any(np.array_equal(q, s_new) for q in pts):
            stagnation += 1
            delta = max(0.5 * delta, rho)
            continue
        f_new = budget(to_x(s_new))
        pts.append(s_new)
        fv.append(f_new)
        ratio = (fvals[b] - f_new) / pred if pred > 0 else -1.0
        improved = f_new < fvals[b]
        stagnation = 0 if improved else stagnation + 1
        if improved:
            fail_streak = 0
        if ratio >= 0.7:
            delta = min(max(delta, 2.0 * step_norm), 1.0)
        elif ratio < 0.1:
            delta = max(0.25 * min(delta, step_norm), rho)
            if not improved and at_resolution:
                fail_streak += 1
                if fail_streak >= 3:
                    if stage_end():
                        status = "xtol"
                        stop_now = True
                    continue

        if len(pts) > npt_target:
            anchor = s_new if improved else sb
            drop_farthest(anchor, keep_last=True)

    x_best = budget.best_x if budget.best_x is not None else problem.x0.copy()
    return OptimResult(np.clip(x_best, lo, hi), budget.best_f, budget.count,
                       status, iterations=iterations,
                       final_radius=float(rho * ranges.max()))


def _fd_gradient(fn, x, lo, hi, steps, budget):
    g = np.zeros_like(x)
    for i in range(x.size):
        h = steps[i]
        if h <= 0 or budget.exhausted:
            continue
        xp = x.copy()
        xm = x.copy()
        xp[i] = min(x[i] + h, hi[i])
        xm[i] = max(x[i] - h, lo[i])
        denom = xp[i] - xm[i]
        if denom <= 0:
            continue
        g[i] = (budget(xp) - budget(xm)) / denom
    return g


def minimize_bfgs(problem: OptimProblem,
                  gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
                  ) -> OptimResult:
    """BFGS with backtracking Armijo line search; bounds kept by projection.

    Without an analytic gradient, central differences with a step of 1e-3 of
    each parameter's bound range are used. A failed line search returns the
    best point seen with the warning flag set.
    """
    lo, hi = problem.bounds[:, 0], problem.bounds[:, 1]
    ranges = hi - lo
    steps = 1e-3 * ranges
    budget = _Budget(problem.objective, problem.max_evaluations)

    x = problem.x0.copy()
    fx = budget(x)
    if not np.isfinite(fx):
        raise ValueError("objective is not finite at x0")

    def grad(xq):
        if gradient is not None:
            return np.asarray(gradient(xq), dtype=np.float64)
        return _fd_gradient(problem.objective, xq, lo, hi, steps, budget)

    n = x.size
    h = np.eye(n)
    g = grad(x)
    status = "maxeval"
    warning = False
    iterations = 0
    gtol = 1e-10 * max(1.0, abs(fx))

    while not budget.exhausted:
        iterations += 1
        if np.abs(g).max() <= gtol:
            status = "gtol"
            break
        p = -h @ g
        if p @ g >= 0:  # safeguard against a corrupted inverse Hessian
            h = np.eye(n)
            p = -g
        t = 1.0
        accepted = False
        for _ in range(30):
            xc = np.clip(x + t * p, lo, hi)
            if np.array_equal(xc, x):
                t *= 0.5
                continue
            fc = budget(xc)
            if fc <= fx + 1e-4 * (g @ (xc - x)):
                accepted = True
                break
            t *= 0.5
            if budget.exhausted:
                break
        if not accepted:
            status = "linesearch"
            warning = True
            break
        s = xc - x
        if np.abs(s).max() < problem.stop:
            x, fx = xc, fc
            status = "xtol"
            break
        g_new = grad(xc)
        y = g_new - g
        sy = s @ y
        if sy > 1e-10 * np.linalg.norm(s) * max(np.linalg.norm(y), 1e-30):
            rho_ = 1.0 / sy
            v = np.eye(n) - rho_ * np.outer(s, y)
            h = v @ h @ v.T + rho_ * np.outer(s, s)
        x, fx, g = xc, fc, g_new

    x_best = budget.best_x if budget.best_x is not None else x
    return OptimResult(np.clip(x_best, lo, hi), budget.best_f, budget.count,
                       status, iterations=iterations, warning=warning)

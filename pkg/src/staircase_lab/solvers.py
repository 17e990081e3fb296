"""Newton solvers for periodic and clamped-segment minimal configurations.

Both problems share the same structure: gradient = Euler-Lagrange residual,
Hessian = second variation, tridiagonal with an extra corner entry in the
periodic case.  Steps are damped by an Armijo backtracking line search on the
action; indefinite or singular Hessians fall back to a dense eigenvalue-clipped
direction.

The periodic problem is solved in displacement coordinates u_i = x_i - i*p/q
(periodic in i, O(1) magnitude).  Working on the lift directly quantizes
positions at ulp(p), which floors the residual near p * eps * d11h and breaks
the 1e-12 tolerance once p is large; in u-coordinates every partial-derivative
argument is O(1), using only the integer-translation invariance
h(x+1, x'+1) = h(x, x') guaranteed by the model contract.  All final action
totals go through math.fsum so repeated runs and cache round-trips are
bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import NoConvergence, SaddleOnly
from .model import GeneratingModel


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-12
    max_iter: int = 120
    starts: int = 6
    jitter: float = 0.2
    seed: int = 0
    psd_shift: float = 1e-8
    action_tie: float = 1e-9  # per-site action tie tolerance


@dataclass
class CriticalPoint:
    label: str
    positions: np.ndarray  # canonical lift period, x0 in [0,1)
    action: float
    residual_sup: float
    psd: bool


# ---- linear solves --------------------------------------------------------


def solve_tridiag_sym(diag, off, rhs):
    """Solve the symmetric tridiagonal system; returns None on failure."""
    n = len(diag)
    ab = np.zeros((3, n))
    ab[1] = diag
    if n > 1:
        ab[0, 1:] = off
        ab[2, :-1] = off
    try:
        out = solve_banded((1, 1), ab, rhs)
    except Exception:
        return None
    if not np.all(np.isfinite(out)):
        return None
    return out


def solve_cyclic_tridiag_sym(diag, off, corner, rhs):
    """Solve (tridiag + symmetric corner) via a rank-one Sherman-Morrison update.

    off has length n-1 (interior couplings); corner couples entries 0 and n-1.
    """
    n = len(diag)
    if n < 3:
        H = np.zeros((n, n))
        idx = np.arange(n)
        H[idx, idx] = diag
        if n == 2:
            H[0, 1] = H[1, 0] = off[0] + corner
        try:
            out = np.linalg.solve(H, rhs)
        except np.linalg.LinAlgError:
            return None
        return out if np.all(np.isfinite(out)) else None
    gamma = -diag[0] if diag[0] != 0.0 else 1.0
    d = diag.copy()
    d[0] -= gamma
    d[-1] -= corner * corner / gamma
    y = solve_tridiag_sym(d, off, rhs)
    if y is None:
        return None
    u = np.zeros(n)
    u[0] = gamma
    u[-1] = corner
    z = solve_tridiag_sym(d, off, u)
    if z is None:
        return None
    # v = e0 + (corner/gamma) e_{n-1}
    vy = y[0] + (corner / gamma) * y[-1]
    vz = z[0] + (corner / gamma) * z[-1]
    denom = 1.0 + vz
    if denom == 0.0 or not np.isfinite(denom):
        return None
    out = y - z * (vy / denom)
    return out if np.all(np.isfinite(out)) else None


def modified_newton_direction(H, g):
    """Eigenvalue-clipped descent direction -U f(L)^-1 U^T g with f = max(|l|, floor).

    Handles indefinite and singular Hessians; near-null components of g are
    damped by the floor instead of exploding.
    """
    lam, U = np.linalg.eigh(H)
    lam_abs = np.abs(lam)
    floor = max(1e-8 * float(lam_abs.max(initial=0.0)), 1e-12)
    inv = 1.0 / np.maximum(lam_abs, floor)
    return -(U @ (inv * (U.T @ g)))


# ---- periodic problem in displacement coordinates ---------------------------


class PeriodicProblem:
    """State u with x_i = u_i + i*p/q; u is q-periodic."""

    def __init__(self, model: GeneratingModel, p: int, q: int):
        self.model = model
        self.p = int(p)
        self.q = int(q)
        self.rat = p / q
        # (i*p) mod q is exact in integers; one rounding in the division
        self.frac = ((np.arange(q) * p) % q) / q

    def z(self, u):
        return np.mod(u + self.frac, 1.0)

    def dnxt(self, u):
        return np.roll(u, -1) - u + self.rat  # x_{i+1} - x_i

    def dprev(self, u):
        return np.roll(u, 1) - u - self.rat  # x_{i-1} - x_i

    def gradient(self, u):
        z = self.z(u)
        zp = z + self.dprev(u)
        zn = z + self.dnxt(u)
        return np.asarray(self.model.d2h(zp, z) + self.model.d1h(z, zn), dtype=float)

    def action_fast(self, u):
        z = self.z(u)
        return float(np.sum(self.model.eval_h(z, z + self.dnxt(u))))

    def action_exact(self, u):
        z = self.z(u)
        terms = np.asarray(self.model.eval_h(z, z + self.dnxt(u)), dtype=float)
        return math.fsum(terms.tolist())

    def hessian_parts(self, u):
        z = self.z(u)
        zp = z + self.dprev(u)
        zn = z + self.dnxt(u)
        diag = np.asarray(self.model.d11h(z, zn) + self.model.d22h(zp, z), dtype=float)
        off = np.atleast_1d(np.asarray(self.model.d12h(z, zn), dtype=float))
        return diag, off

    def hessian_dense(self, u):
        diag, off = self.hessian_parts(u)
        q = self.q
        H = np.zeros((q, q))
        idx = np.arange(q)
        H[idx, idx] = diag
        jdx = (idx + 1) % q
        np.add.at(H, (idx, jdx), off)
        np.add.at(H, (jdx, idx), off)
        return H

    def from_lift(self, x):
        return np.asarray(x, dtype=float) - np.arange(self.q) * self.rat

    def canonical_shift(self, u):
        """Index shift whose representative has the smallest x0 in [0,1)."""
        z = self.z(u)
        order = np.argsort(z, kind="stable")
        best = int(order[0])
        # break exact ties lexicographically on the rolled fractional sequence
        ties = [int(m) for m in order if abs(z[m] - z[best]) <= 1e-12]
        if len(ties) > 1:
            best = min(ties, key=lambda m: tuple(np.roll(z, -m)))
        return best

    def to_lift(self, u, shift=None):
        """Canonical lift period: x0 in [0,1), x_{i+q} = x_i + p."""
        m = self.canonical_shift(u) if shift is None else shift
        q = self.q
        i = np.arange(q)
        um = u[(m + i) % q]
        z0 = float(np.mod(u[m] + self.frac[m], 1.0))
        return (um - u[m]) + i * self.rat + z0


def periodic_action(model: GeneratingModel, x, p: int, q: int) -> float:
    """fsum action of one period of a lift array (external configurations)."""
    x = np.asarray(x, dtype=float)
    nxt = np.roll(x, -1)
    nxt[-1] += p
    return math.fsum(np.asarray(model.eval_h(x, nxt), dtype=float).tolist())


def periodic_hessian_dense(model, x, p, q):
    """Second variation on a lift period (small q; hyperbolicity reports)."""
    x = np.asarray(x, dtype=float)
    prob = PeriodicProblem(model, p, q)
    return prob.hessian_dense(prob.from_lift(x))


def newton_periodic_u(prob: PeriodicProblem, u0, opts: SolveOptions):
    """Damped Newton in displacement coordinates; returns (u, residual_sup, ok)."""
    u = np.array(u0, dtype=float)
    q = prob.q
    target = 0.25 * opts.tol  # margin so re-evaluation stays under tol
    res = float(np.abs(prob.gradient(u)).max())
    for _ in range(opts.max_iter):
        g = prob.gradient(u)
        res = float(np.abs(g).max())
        if res < target:
            return u, res, True
        diag, off = prob.hessian_parts(u)
        if q <= 3:
            s = None
        else:
            s = solve_cyclic_tridiag_sym(diag, off[:-1], float(off[-1]), -g)
        if s is None or float(np.dot(g, s)) >= 0.0 or np.abs(s).max() > 1e8 * (1.0 + np.abs(u).max()):
            if q <= 200:
                s = modified_newton_direction(prob.hessian_dense(u), g)
            else:
                # Gershgorin shift keeps the fallback O(q) at large periods
                radius = np.abs(off) + np.abs(np.roll(off, 1))
                mu = max(0.0, -float((diag - radius).min())) + 1e-3 * max(1.0, float(np.abs(diag).max()))
                s = solve_cyclic_tridiag_sym(diag + mu, off[:-1], float(off[-1]), -g)
                if s is None or float(np.dot(g, s)) >= 0.0:
                    s = -g
        slope = float(np.dot(g, s))
        if slope >= 0.0:
            s = -g
            slope = -float(np.dot(g, g))
        if res < 1e-6:
            # quadratic basin: full steps, no action comparisons in noise
            u = u + s
            continue
        w0 = prob.action_fast(u)
        t = 1.0
        accepted = False
        while t >= 2.0 ** -40:
            ut = u + t * s
            if prob.action_fast(ut) <= w0 + 1e-4 * t * slope:
                u = ut
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return u, res, False
    res = float(np.abs(prob.gradient(u)).max())
    return u, res, res < opts.tol


def newton_periodic(model, x0, p, q, opts: SolveOptions):
    """Lift-array wrapper around the displacement-coordinate Newton solver."""
    prob = PeriodicProblem(model, p, q)
    u, res, ok = newton_periodic_u(prob, prob.from_lift(x0), opts)
    return prob.to_lift(u), res, ok


def certify_psd_periodic_u(prob: PeriodicProblem, u, shift=1e-8):
    H = prob.hessian_dense(u)
    scale = max(1.0, float(np.abs(np.diag(H)).max()))
    try:
        np.linalg.cholesky(H + shift * scale * np.eye(prob.q))
        return True
    except np.linalg.LinAlgError:
        return False


def canonicalize_periodic(x, p, q):
    x = np.asarray(x, dtype=float)
    if x.shape != (q,):
        raise ValueError(f"expected {q} positions, got shape {x.shape}")
    i = np.arange(q)
    u = x - i * (p / q)
    frac = ((i * p) % q) / q
    z = np.mod(u + frac, 1.0)
    order = np.argsort(z, kind="stable")
    m = int(order[0])
    ties = [int(t) for t in order if abs(z[t] - z[m]) <= 1e-12]
    if len(ties) > 1:
        m = min(ties, key=lambda t: tuple(np.roll(z, -t)))
    um = u[(m + i) % q]
    return (um - u[m]) + i * (p / q) + float(z[m])


# ---- seeds ------------------------------------------------------------------


def class_distance(x1, x2, q):
    """Distance between configuration classes modulo shift and translation.

    Compares fractional sequences z_i = x_i mod 1 over all index shifts with
    a circular per-entry metric, so representatives on opposite sides of the
    seam (x near 0 versus x near 1) compare as the same class.
    """
    z1 = np.mod(np.asarray(x1, dtype=float), 1.0)
    z2 = np.mod(np.asarray(x2, dtype=float), 1.0)
    best = np.inf
    for s in range(q):
        d = np.roll(z1, -s) - z2
        d = np.abs(d - np.round(d))
        best = min(best, float(d.max()))
    return best


def integrable_seed(p, q, phase=0.0):
    return phase + np.arange(q) * (p / q)


def anti_integrable_seed(model, p, q, phase=0.0):
    """Each site snapped to the nearest lift of a potential minimum."""
    minima = model.potential_minima()
    t = phase + np.arange(q) * (p / q)
    d = t[:, None] - minima[None, :]
    shift = np.round(d)
    dist = np.abs(d - shift)
    pick = np.argmin(dist, axis=1)
    rows = np.arange(q)
    return minima[pick] + shift[rows, pick]


def build_seeds(model, p, q, opts: SolveOptions):
    seeds = [("integrable", integrable_seed(p, q))]
    try:
        seeds.append(("anti-integrable", anti_integrable_seed(model, p, q)))
        seeds.append(("anti-integrable+half", anti_integrable_seed(model, p, q, 0.5 / q)))
    except Exception:
        pass
    n_jitter = max(0, opts.starts - len(seeds))
    if n_jitter:
        ss = np.random.SeedSequence(entropy=opts.seed, spawn_key=(q, p % (2**32), 0x57A1))
        rng = np.random.default_rng(ss)
        for j in range(n_jitter):
            base = integrable_seed(p, q, float(rng.uniform(0.0, 1.0)))
            seeds.append((f"jitter-{j}", base + rng.uniform(-opts.jitter, opts.jitter, q)))
    return seeds


def solve_all_starts(model, p, q, opts: SolveOptions, extra_seeds=None):
    """Runs every seed to convergence; returns distinct critical points.

    Deduplication is by the canonical fractional sequence within 1e-9, so the
    PSD certificate runs once per class.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    if math.gcd(abs(p), q) != 1:
        raise ValueError(f"p/q = {p}/{q} is not in lowest terms")
    prob = PeriodicProblem(model, p, q)
    seeds = list(extra_seeds or []) + build_seeds(model, p, q, opts)
    found: list[CriticalPoint] = []
    for label, s0 in seeds:
        u0 = prob.from_lift(np.asarray(s0, dtype=float))
        u, res, ok = newton_periodic_u(prob, u0, opts)
        if not ok:
            continue
        lift = prob.to_lift(u)
        if any(class_distance(lift, c.positions, q) <= 1e-8 for c in found):
            continue
        psd = certify_psd_periodic_u(prob, u, opts.psd_shift)
        found.append(
            CriticalPoint(
                label=label,
                positions=lift,
                action=prob.action_exact(u),
                residual_sup=res,
                psd=psd,
            )
        )
    return sorted(found, key=lambda c: (c.action, tuple(c.positions)))


def best_minimizer(model, p, q, opts: SolveOptions, extra_seeds=None) -> CriticalPoint:
    points = solve_all_starts(model, p, q, opts, extra_seeds)
    if not points:
        raise NoConvergence(f"no start converged for p/q = {p}/{q}")
    minima = [c for c in points if c.psd]
    if not minima:
        raise SaddleOnly(f"only indefinite critical points found for p/q = {p}/{q}")
    return minima[0]


# ---- clamped segments -------------------------------------------------------


def segment_action(model: GeneratingModel, w: np.ndarray) -> float:
    return math.fsum(np.asarray(model.eval_h(w[:-1], w[1:]), dtype=float).tolist())


def _segment_action_fast(model, w, lo, hi):
    # only the steps touching free sites [lo, hi)
    a, b = lo - 1, hi
    return float(np.sum(model.eval_h(w[a:b], w[a + 1 : b + 1])))


def segment_gradient(model, w, lo, hi):
    return np.asarray(
        model.d2h(w[lo - 1 : hi - 1], w[lo:hi]) + model.d1h(w[lo:hi], w[lo + 1 : hi + 1]),
        dtype=float,
    )


def segment_hessian_parts(model, w, lo, hi):
    diag = np.asarray(
        model.d11h(w[lo:hi], w[lo + 1 : hi + 1]) + model.d22h(w[lo - 1 : hi - 1], w[lo:hi]),
        dtype=float,
    )
    off = np.asarray(model.d12h(w[lo : hi - 1], w[lo + 1 : hi]), dtype=float)
    off = np.atleast_1d(off)
    return diag, off


def newton_segment(model, w0, n_fix_left, n_fix_right, opts: SolveOptions):
    """Minimize the segment action over interior sites with clamped ends.

    w0 holds all site values; the first n_fix_left and last n_fix_right stay
    fixed.  Returns (w, residual_sup, converged); residual over free sites.
    """
    w = np.array(w0, dtype=float)
    n = len(w)
    lo, hi = n_fix_left, n - n_fix_right
    if n_fix_left < 1 or n_fix_right < 1:
        raise ValueError("segment needs at least one clamped site per end")
    if hi <= lo:
        return w, 0.0, True
    target = 0.25 * opts.tol
    for _ in range(opts.max_iter):
        g = segment_gradient(model, w, lo, hi)
        res = float(np.abs(g).max())
        if res < target:
            return w, res, True
        diag, off = segment_hessian_parts(model, w, lo, hi)
        m = hi - lo
        s = solve_tridiag_sym(diag, off if m > 1 else off[:0], -g)
        if s is None or float(np.dot(g, s)) >= 0.0 or np.abs(s).max() > 1e8 * (1.0 + np.abs(w).max()):
            H = np.zeros((m, m))
            idx = np.arange(m)
            H[idx, idx] = diag
            if m > 1:
                H[idx[:-1], idx[1:]] = off
                H[idx[1:], idx[:-1]] = off
            s = modified_newton_direction(H, g)
        slope = float(np.dot(g, s))
        if slope >= 0.0:
            s = -g
            slope = -float(np.dot(g, g))
        if res < 1e-6:
            w[lo:hi] += s
            continue
        a0 = _segment_action_fast(model, w, lo, hi)
        t = 1.0
        accepted = False
        while t >= 2.0 ** -40:
            wt = w.copy()
            wt[lo:hi] += t * s
            if _segment_action_fast(model, wt, lo, hi) <= a0 + 1e-4 * t * slope:
                w = wt
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return w, res, False
    g = segment_gradient(model, w, lo, hi)
    res = float(np.abs(g).max())
    return w, res, res < opts.tol


def certify_psd_segment(model, w, n_fix_left, n_fix_right, shift=1e-8):
    n = len(w)
    lo, hi = n_fix_left, n - n_fix_right
    if hi <= lo:
        return True
    diag, off = segment_hessian_parts(model, w, lo, hi)
    m = hi - lo
    H = np.zeros((m, m))
    idx = np.arange(m)
    H[idx, idx] = diag
    if m > 1:
        H[idx[:-1], idx[1:]] = off
        H[idx[1:], idx[:-1]] = off
    scale = max(1.0, float(np.abs(diag).max()))
    try:
        np.linalg.cholesky(H + shift * scale * np.eye(m))
        return True
    except np.linalg.LinAlgError:
        return False

"""Hyperbolicity diagnostics for periodic minimizers.

Linearizing the Euler-Lagrange recursion along an orbit gives 2x2 transfer
matrices whose ordered product (the monodromy) measures orbit stability: the
per-step Lyapunov exponent is log of its largest eigenvalue magnitude divided
by q.  The same data in symmetric form is the second variation, a periodic
tridiagonal matrix whose smallest eigenvalue is the phonon gap.  The
Peierls-Nabarro barrier is the spread of the pinned minimal action as the
constrained site sweeps one period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTwist, NoConvergence
from .model import GeneratingModel
from . import solvers
from .variational import PeriodicConfiguration


@dataclass
class HyperbolicityReport:
    p: int
    q: int
    trace: float
    det: float
    eigenvalues: tuple[complex, complex]
    lyapunov: float
    phonon_gap: float | None = None
    pn_barrier: float | None = None
    C0_estimate: float | None = None
    spectrum: np.ndarray | None = field(default=None, repr=False)


def _orbit_partials(model: GeneratingModel, config: PeriodicConfiguration):
    """Per-site d11, d22 and step couplings b_i = d12h(x_i, x_{i+1})."""
    x = np.asarray(config.positions, dtype=float)
    nxt = np.roll(x, -1)
    nxt[-1] += config.p
    prev = np.roll(x, 1)
    prev[0] -= config.p
    d11 = np.asarray(model.d11h(x, nxt), dtype=float)
    d22 = np.asarray(model.d22h(prev, x), dtype=float)
    b = np.atleast_1d(np.asarray(model.d12h(x, nxt), dtype=float))
    return d11, d22, b


def transfer_matrices(model: GeneratingModel, config: PeriodicConfiguration):
    """2x2 matrices M_i mapping (xi_i, xi_{i-1}) to (xi_{i+1}, xi_i).

    From the linearized recursion
    b_i xi_{i+1} + D_i xi_i + b_{i-1} xi_{i-1} = 0 with
    D_i = d11h(x_i, x_{i+1}) + d22h(x_{i-1}, x_i) and b_i = d12h(x_i, x_{i+1});
    det M_i = b_{i-1}/b_i telescopes to 1 over a period.
    """
    d11, d22, b = _orbit_partials(model, config)
    if np.any(b == 0.0):
        raise DegenerateTwist("d12h vanishes at an orbit point")
    q = config.q
    mats = []
    for i in range(q):
        bi = b[i]
        bim = b[i - 1]  # wraps to b[q-1] at i = 0
        D = d11[i] + d22[i]
        mats.append(np.array([[-D / bi, -bim / bi], [1.0, 0.0]]))
    return mats


def monodromy(model: GeneratingModel, config: PeriodicConfiguration) -> HyperbolicityReport:
    """Ordered product of transfer matrices and the per-step Lyapunov exponent.

    The determinant is evaluated as the product of the per-matrix determinants
    b_{i-1}/b_i.  That telescoping form is exact; reading ad - bc off the
    accumulated product instead would cancel catastrophically once the trace
    is large (entries ~1e9 leave nothing of a unit determinant in float64).
    The small eigenvalue is recovered as det/mu_max for the same reason.
    """
    mats = transfer_matrices(model, config)
    M = np.eye(2)
    for m in mats:
        M = m @ M
    tr = float(M[0, 0] + M[1, 1])
    _, _, b = _orbit_partials(model, config)
    det = float(np.prod(np.roll(b, 1) / b))
    disc = tr * tr - 4.0 * det
    if disc >= 0.0:
        mu_big = (tr + math.copysign(math.sqrt(disc), tr)) / 2.0
        if mu_big == 0.0:
            eigs = (complex(tr / 2.0), complex(tr / 2.0))
        else:
            eigs = (complex(mu_big), complex(det / mu_big))
    else:
        root = math.sqrt(-disc)
        eigs = (complex(tr / 2.0, root / 2.0), complex(tr / 2.0, -root / 2.0))
    mu_max = max(abs(eigs[0]), abs(eigs[1]))
    lam = max(0.0, math.log(mu_max)) / config.q if mu_max > 0 else 0.0
    return HyperbolicityReport(
        p=config.p,
        q=config.q,
        trace=tr,
        det=det,
        eigenvalues=eigs,
        lyapunov=lam,
    )


def second_variation_spectrum(model: GeneratingModel, config: PeriodicConfiguration) -> np.ndarray:
    """Ascending eigenvalues of the periodic tridiagonal second variation."""
    H = solvers.periodic_hessian_dense(model, config.positions, config.p, config.q)
    return np.linalg.eigvalsh(H)


def phonon_gap(model: GeneratingModel, config: PeriodicConfiguration) -> float:
    return float(second_variation_spectrum(model, config)[0])


def full_report(
    model: GeneratingModel,
    config: PeriodicConfiguration,
    sweep_n: int = 16,
    with_barrier: bool = True,
) -> HyperbolicityReport:
    rep = monodromy(model, config)
    spec = second_variation_spectrum(model, config)
    rep.spectrum = spec
    rep.phonon_gap = float(spec[0])
    if with_barrier:
        rep.pn_barrier = pn_barrier(model, config.p, config.q, sweep_n)
    return rep


# ---- Peierls-Nabarro barrier ------------------------------------------------


def _pinned_action(model, p, q, s, w_init, opts):
    """Minimal (p,q)-period action with x_0 clamped at s.

    The period is embedded as a segment s, x_1..x_{q-1}, s+p with both ends
    clamped; the segment action then equals the periodic action of the pinned
    configuration.
    """
    w0 = np.empty(q + 1)
    w0[0] = s
    w0[-1] = s + p
    w0[1:-1] = w_init
    w, res, ok = solvers.newton_segment(model, w0, 1, 1, opts)
    if not ok:
        raise NoConvergence(f"pinned solve failed at s={s:.6f} for {p}/{q}")
    return solvers.segment_action(model, w), w[1:-1]


def pn_barrier(model: GeneratingModel, p: int, q: int, n: int = 16) -> float:
    """max_s E(s) - min_s E(s) with E the pinned minimal action on the grid s = j/n.

    Continuation in s: each solve starts from the previous grid point's
    interior sites.  A forward and a backward sweep are combined pointwise,
    which keeps the result on the global branch across hysteresis loops where
    local pinned branches exchange stability.
    """
    if n < 16:
        raise ValueError("sweep resolution n must be >= 16")
    if q < 1 or math.gcd(abs(p), q) != 1:
        raise ValueError(f"bad rational {p}/{q}")
    opts = solvers.SolveOptions()
    ss = np.arange(n) / n
    if q == 1:
        vals = np.asarray(model.eval_h(ss, ss + p), dtype=float)
        return float(vals.max() - vals.min())
    base = solvers.best_minimizer(model, p, q, opts)
    x = np.asarray(base.positions, dtype=float)
    seed0 = x[1:] - x[0]  # interior sites for a pin at s = 0
    fwd = np.empty(n + 1)
    w_init = seed0.copy()
    for j in range(n + 1):
        fwd[j], w_init = _pinned_action(model, p, q, j / n, w_init, opts)
    if abs(fwd[-1] - fwd[0]) > 1e-8 * max(1.0, abs(fwd[0])):
        raise NoConvergence(f"pinned sweep did not close up for {p}/{q}")
    bwd = np.empty(n + 1)
    w_init = seed0 + 1.0
    for j in range(n, -1, -1):
        bwd[j], w_init = _pinned_action(model, p, q, j / n, w_init, opts)
    vals = np.minimum(fwd, bwd)[:n]
    return float(vals.max() - vals.min())

"""Generating-function models h(x, x') for monotone twist maps.

A model is h(x, x') = a*(x - x')^2 + V(x) with V a trigonometric polynomial
of period 1.  The classical nearest-neighbor chain with cosine on-site
potential is the special case a = 1/2, V(x) = -k*cos(2*pi*x).  All partial
derivatives are analytic, so the twist bound and Euler-Lagrange residuals
are exact up to rounding.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, TwistViolated

TWO_PI = 2.0 * math.pi

FAMILIES = ("frenkel-kontorova", "fourier-potential")


def _canon(x: float) -> str:
    # canonical 17-significant-digit decimal rendering; round-trips float64
    return format(float(x), ".17g")


class StandardMapStep(NamedTuple):
    """One step of the standard map in the 2*pi convention.

    x is the lift; x_mod is x reduced to [0, 2*pi).
    """

    x: float
    y: float
    x_mod: float


@dataclass(frozen=True)
class GeneratingModel:
    """Twist generating function h(x, x') = a*(x-x')^2 + V(x).

    family: "frenkel-kontorova" (V = -k*cos(2*pi*x), a = 1/2) or
    "fourier-potential" (V = sum of harmonics, arbitrary a > 0).
    harmonics: tuple of (order, cos_amp, sin_amp).
    """

    family: str
    k: float = 0.0
    a: float = 0.5
    harmonics: tuple[tuple[int, float, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}")
        if not math.isfinite(self.k) or self.k < 0.0:
            raise ConfigError(f"coupling k must be finite and >= 0, got {self.k}")
        if not math.isfinite(self.a):
            raise ConfigError(f"elastic coefficient a must be finite, got {self.a}")
        if self.family == "frenkel-kontorova" and self.harmonics:
            raise ConfigError("frenkel-kontorova takes no explicit harmonics")
        for h in self.harmonics:
            if len(h) != 3 or int(h[0]) < 1:
                raise ConfigError(f"bad harmonic entry {h!r}")

    # ---- potential -------------------------------------------------

    def _v_terms(self):
        """Yields (order, cos_amp, sin_amp) including the implicit FK cosine."""
        if self.family == "frenkel-kontorova":
            yield (1, -self.k, 0.0)
        else:
            for order, ca, sa in self.harmonics:
                yield (int(order), float(ca), float(sa))

    def potential(self, x):
        # V has period 1, and float mod by 1 is exact: reduce first so large
        # lift values do not lose precision inside the trig argument
        x = np.mod(np.asarray(x, dtype=float), 1.0)
        v = np.zeros_like(x)
        for n, ca, sa in self._v_terms():
            w = TWO_PI * n
            v = v + ca * np.cos(w * x) + sa * np.sin(w * x)
        return v if v.ndim else float(v)

    def potential_d1(self, x):
        x = np.mod(np.asarray(x, dtype=float), 1.0)
        v = np.zeros_like(x)
        for n, ca, sa in self._v_terms():
            w = TWO_PI * n
            v = v + w * (-ca * np.sin(w * x) + sa * np.cos(w * x))
        return v if v.ndim else float(v)

    def potential_d2(self, x):
        x = np.mod(np.asarray(x, dtype=float), 1.0)
        v = np.zeros_like(x)
        for n, ca, sa in self._v_terms():
            w = TWO_PI * n
            v = v - w * w * (ca * np.cos(w * x) + sa * np.sin(w * x))
        return v if v.ndim else float(v)

    def potential_minima(self, samples: int = 2048) -> np.ndarray:
        """Local minima of V on [0, 1), refined by Newton on V'."""
        xs = np.arange(samples) / samples
        v = np.atleast_1d(self.potential(xs))
        if np.ptp(v) == 0.0:
            return np.array([0.0])
        left = np.roll(v, 1)
        right = np.roll(v, -1)
        cand = xs[(v <= left) & (v <= right)]
        mins = []
        for x0 in cand:
            x = float(x0)
            for _ in range(60):
                d2 = self.potential_d2(x)
                if d2 <= 0.0:
                    break
                step = self.potential_d1(x) / d2
                x -= step
                if abs(step) < 1e-14:
                    break
            mins.append(x % 1.0)
        mins = np.sort(np.unique(np.round(np.asarray(mins), 12) % 1.0))
        # collapse near-duplicates from adjacent grid candidates
        keep = [mins[0]]
        for m in mins[1:]:
            if m - keep[-1] > 1e-9:
                keep.append(m)
        return np.asarray(keep)

    # ---- generating function ----------------------------------------

    def eval_h(self, x, xp):
        x = np.asarray(x, dtype=float)
        xp = np.asarray(xp, dtype=float)
        d = x - xp
        out = self.a * d * d + self.potential(x)
        return out if out.ndim else float(out)

    def d1h(self, x, xp):
        x = np.asarray(x, dtype=float)
        xp = np.asarray(xp, dtype=float)
        out = 2.0 * self.a * (x - xp) + self.potential_d1(x)
        return out if out.ndim else float(out)

    def d2h(self, x, xp):
        x = np.asarray(x, dtype=float)
        xp = np.asarray(xp, dtype=float)
        out = -2.0 * self.a * (x - xp)
        return out if out.ndim else float(out)

    def d11h(self, x, xp):
        x = np.asarray(x, dtype=float)
        out = 2.0 * self.a + self.potential_d2(x)
        out = np.broadcast_to(out, np.broadcast(x, np.asarray(xp)).shape)
        return out if out.ndim else float(out)

    def d12h(self, x, xp):
        shape = np.broadcast(np.asarray(x), np.asarray(xp)).shape
        out = np.broadcast_to(-2.0 * self.a, shape)
        return out if out.ndim else float(out)

    def d22h(self, x, xp):
        shape = np.broadcast(np.asarray(x), np.asarray(xp)).shape
        out = np.broadcast_to(2.0 * self.a, shape)
        return out if out.ndim else float(out)

    def partials(self, x, xp):
        """(d1h, d2h, d11h, d12h, d22h) at (x, x')."""
        return (
            self.d1h(x, xp),
            self.d2h(x, xp),
            self.d11h(x, xp),
            self.d12h(x, xp),
            self.d22h(x, xp),
        )

    # ---- contracts ---------------------------------------------------

    def check_twist(self, n: int = 256) -> float:
        """Sample d12h on an n*n grid over [0,1)^2.

        Returns the tightest b with d12h <= -1/b on the grid.  Raises
        TwistViolated when the mixed partial is >= 0 anywhere.
        """
        xs = np.arange(n) / n
        g = np.asarray(self.d12h(xs[:, None], xs[None, :]), dtype=float)
        worst = float(g.max())
        if worst >= 0.0:
            raise TwistViolated(
                f"d12h reaches {worst:.6g} >= 0 on the {n}x{n} sample grid"
            )
        return -1.0 / worst

    def standard_map_step(self, x: float, y: float) -> StandardMapStep:
        """(x, y) -> (x + y + k*sin x, y + k*sin x), x reported as lift and mod 2*pi.

        The k here multiplies sin x in the 2*pi convention; the chain model at
        coupling k corresponds to standard-map parameter K = 4*pi^2*k.
        """
        y_new = y + self.k * math.sin(x)
        x_new = x + y_new
        return StandardMapStep(x_new, y_new, x_new % TWO_PI)

    def el_residual(self, positions: Sequence[float], p: int, q: int) -> np.ndarray:
        """Euler-Lagrange residual d2h(x_{i-1}, x_i) + d1h(x_i, x_{i+1}) for i < q.

        positions holds one period x_0..x_{q-1}; the lift rule x_{i+q} = x_i + p
        supplies both neighbors at the seam.
        """
        x = np.asarray(positions, dtype=float)
        if x.shape != (q,):
            raise ValueError(f"expected {q} positions, got shape {x.shape}")
        prev = np.roll(x, 1)
        prev[0] -= p
        nxt = np.roll(x, -1)
        nxt[-1] += p
        return np.asarray(self.d2h(prev, x) + self.d1h(x, nxt), dtype=float)

    # ---- identity ------------------------------------------------------

    def canonical_string(self) -> str:
        parts = [self.family, _canon(self.k), _canon(self.a)]
        for n, ca, sa in self.harmonics:
            parts.append(f"{int(n)}:{_canon(ca)}:{_canon(sa)}")
        return "|".join(parts)

    @property
    def model_hash(self) -> str:
        return hashlib.sha256(self.canonical_string().encode()).hexdigest()

    def to_config_dict(self) -> dict:
        d = {"family": self.family, "k": self.k, "a": self.a}
        if self.harmonics:
            d["harmonics"] = [list(h) for h in self.harmonics]
        return d


def frenkel_kontorova(k: float) -> GeneratingModel:
    return GeneratingModel(family="frenkel-kontorova", k=float(k), a=0.5)


# ---- model file format -------------------------------------------------
#
# [model]
# family = frenkel-kontorova
# k = 2.0
# a = 0.5
#
# [harmonic]          (repeatable; fourier-potential only)
# order = 1
# cos_amp = -0.5
# sin_amp = 0.0

_MODEL_KEYS = {"family", "k", "a"}
_HARMONIC_KEYS = {"order", "cos_amp", "sin_amp"}


def parse_sections(text: str) -> list[tuple[str, dict]]:
    """Parses the sectioned key=value format; sections may repeat."""
    sections: list[tuple[str, dict]] = []
    current: dict | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"line {lineno}: empty section name")
            current = {}
            sections.append((name, current))
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in current:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        current[key] = val
    return sections


def _require_float(section: str, data: dict, key: str, default=None) -> float:
    if key not in data:
        if default is not None:
            return default
        raise ConfigError(f"[{section}] missing required key {key!r}")
    try:
        return float(data[key])
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {data[key]!r} is not a number") from exc


def model_from_sections(sections: list[tuple[str, dict]]) -> GeneratingModel:
    model_data = None
    harmonics = []
    for name, data in sections:
        if name == "model":
            if model_data is not None:
                raise ConfigError("more than one [model] section")
            model_data = data
        elif name == "harmonic":
            unknown = set(data) - _HARMONIC_KEYS
            if unknown:
                raise ConfigError(f"[harmonic] unknown keys {sorted(unknown)}")
            try:
                order = int(data.get("order", "1"))
            except ValueError as exc:
                raise ConfigError(f"[harmonic] bad order {data['order']!r}") from exc
            harmonics.append(
                (
                    order,
                    _require_float("harmonic", data, "cos_amp", 0.0),
                    _require_float("harmonic", data, "sin_amp", 0.0),
                )
            )
        else:
            raise ConfigError(f"unknown section [{name}] in model file")
    if model_data is None:
        raise ConfigError("missing [model] section")
    unknown = set(model_data) - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"[model] unknown keys {sorted(unknown)}")
    family = model_data.get("family")
    if family is None:
        raise ConfigError("[model] missing required key 'family'")
    k = _require_float("model", model_data, "k", 0.0)
    a = _require_float("model", model_data, "a", 0.5)
    return GeneratingModel(family=family, k=k, a=a, harmonics=tuple(harmonics))


def load_model(path) -> GeneratingModel:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return model_from_sections(parse_sections(text))


def parse_model(text: str) -> GeneratingModel:
    return model_from_sections(parse_sections(text))

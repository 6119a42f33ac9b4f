"""Analytic data families: periodic trigonometric polynomials.

Drifts, costs and kernel factors are all built from these so that sup-norms
and Hölder/Lipschitz constants are computable in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TrigTerm:
    amp: float
    freq: tuple[int, ...]
    phase: float = 0.0


@dataclass(frozen=True)
class TrigPoly:
    """``const + sum(amp * cos(2 pi freq . y + phase))`` on ``R^nvars``.

    All terms have integer frequencies, so the function is 1-periodic in every
    variable.
    """

    nvars: int
    const: float = 0.0
    terms: tuple[TrigTerm, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for t in self.terms:
            if len(t.freq) != self.nvars:
                raise ValueError(f"frequency {t.freq} has wrong length for {self.nvars} variables")

    @classmethod
    def constant(cls, nvars: int, c: float) -> "TrigPoly":
        return cls(nvars, float(c))

    @classmethod
    def from_dict(cls, spec, nvars: int) -> "TrigPoly":
        """Build from ``{"const": c, "terms": [{"amp", "freq", "phase"|"kind"}]}``.

        A bare number is a constant. ``kind: "sin"`` is shorthand for phase
        ``-pi/2``.
        """
        if isinstance(spec, (int, float)):
            return cls.constant(nvars, spec)
        terms = []
        for t in spec.get("terms", []):
            phase = float(t.get("phase", 0.0))
            kind = t.get("kind", "cos")
            if kind == "sin":
                phase -= math.pi / 2
            elif kind != "cos":
                raise ValueError(f"unknown term kind {kind!r}")
            freq = t["freq"]
            freq = (freq,) if isinstance(freq, int) else tuple(int(k) for k in freq)
            terms.append(TrigTerm(float(t["amp"]), freq, phase))
        return cls(nvars, float(spec.get("const", 0.0)), tuple(terms))

    def to_dict(self) -> dict:
        return {
            "const": self.const,
            "terms": [{"amp": t.amp, "freq": list(t.freq), "phase": t.phase} for t in self.terms],
        }

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.nvars:
            raise ValueError(f"expected trailing dimension {self.nvars}, got {y.shape}")
        out = np.full(y.shape[:-1], self.const)
        for t in self.terms:
            out = out + t.amp * np.cos(2 * np.pi * (y @ np.asarray(t.freq, dtype=float)) + t.phase)
        return out

    def scaled(self, s: float) -> "TrigPoly":
        return TrigPoly(self.nvars, s * self.const, tuple(TrigTerm(s * t.amp, t.freq, t.phase) for t in self.terms))

    def shifted(self, c: float) -> "TrigPoly":
        return TrigPoly(self.nvars, self.const + c, self.terms)

    def sup_bound(self) -> float:
        return abs(self.const) + sum(abs(t.amp) for t in self.terms)

    def lower_bound(self) -> float:
        return self.const - sum(abs(t.amp) for t in self.terms)

    def lipschitz(self, variables: slice | None = None) -> float:
        """Lipschitz constant in the selected variables (all by default)."""
        sel = variables if variables is not None else slice(None)
        return sum(abs(t.amp) * 2 * np.pi * float(np.linalg.norm(t.freq[sel])) for t in self.terms)

    def depends_on(self, variables: slice) -> bool:
        return any(any(k != 0 for k in t.freq[variables]) for t in self.terms)


def eval_slow_fast(poly: TrigPoly, x, xi) -> np.ndarray:
    """Evaluate a polynomial on ``R^{2d}`` at ``(x, xi)`` with broadcasting."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], xi.shape[:-1])
    d = x.shape[-1]
    y = np.concatenate(
        [np.broadcast_to(x, shape + (d,)), np.broadcast_to(xi, shape + (xi.shape[-1],))], axis=-1
    )
    return poly(y)

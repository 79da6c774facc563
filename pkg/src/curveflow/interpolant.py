"""Forward interpolation paths between data (t=0) and prior (t=1)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, UnsupportedOperation

LINEAR = "linear"
VP = "vp"


@dataclass(frozen=True)
class InterpolantKind:
    kind: str = LINEAR
    vp_a: float = 19.9
    vp_b: float = 0.1

    def __post_init__(self):
        if self.kind not in (LINEAR, VP):
            raise ConfigError(f"interpolant kind must be 'linear' or 'vp', got {self.kind!r}")
        if self.kind == VP and not (self.vp_a > 0 and self.vp_b > 0):
            raise ConfigError("vp interpolant needs a > 0 and b > 0")

    def to_json(self) -> dict:
        return {"kind": self.kind, "a": self.vp_a, "b": self.vp_b}

    @classmethod
    def from_json(cls, obj) -> "InterpolantKind":
        if isinstance(obj, str):
            return cls(obj)
        return cls(obj.get("kind", LINEAR), float(obj.get("a", 19.9)), float(obj.get("b", 0.1)))


def _check_t(t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise ConfigError("t must lie in [0, 1]")
    return t


def vp_alpha(t, vp_a=19.9, vp_b=0.1):
    """``exp(-1/2 * integral_0^t (a s + b) ds) = exp(-a t^2 / 4 - b t / 2)``."""
    t = _check_t(t)
    return np.exp(-0.25 * vp_a * t * t - 0.5 * vp_b * t)


def _coeffs(kind: InterpolantKind, t):
    if kind.kind == LINEAR:
        return 1.0 - t, t
    a = vp_alpha(t, kind.vp_a, kind.vp_b)
    return a, np.sqrt(1.0 - a * a)


def interpolate(kind: InterpolantKind, x, z, t):
    """Point on the path from ``x`` (t=0) to ``z`` (t=1).

    ``t`` may be a scalar or one value per row of a ``(B, d)`` batch.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise ShapeError(f"x shape {x.shape} != z shape {z.shape}")
    t = _check_t(t)
    if t.ndim == 1 and x.ndim == 2:
        t = t[:, None]
    cx, cz = _coeffs(kind, t)
    if kind.kind == LINEAR:
        # keep endpoints bitwise exact
        return np.where(t == 0.0, x, np.where(t == 1.0, z, cx * x + cz * z))
    return cx * x + cz * z


def velocity_target(x, z, kind: InterpolantKind | None = None):
    """Constant forward velocity ``z - x`` of the linear path."""
    if kind is not None and kind.kind != LINEAR:
        raise UnsupportedOperation("velocity_target is only defined for the linear interpolant")
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise ShapeError(f"x shape {x.shape} != z shape {z.shape}")
    return z - x

"""Sojourn functionals on grids, the time scaling theta(u) and empirical dfs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptySample, ValidationError, WindowExceedsGrid
from .structure import check_alphas


@dataclass(frozen=True)
class ScalingFunction:
    """Per-axis scaling ``v_i(u) = l_i(u) u^{2/alpha_i}``.

    ``slowly_varying`` holds one ``(form, param)`` pair per axis: ``("constant", c)``
    gives ``l(u) = c`` and ``("log_power", p)`` gives ``l(u) = log(e + u)^p``.
    """

    alphas: tuple[float, ...]
    slowly_varying: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        a = tuple(float(x) for x in check_alphas(self.alphas))
        sv = tuple((str(f), float(p)) for f, p in self.slowly_varying) or tuple(("constant", 1.0) for _ in a)
        if len(sv) != len(a):
            raise ValidationError("need one slowly varying factor per axis")
        for form, p in sv:
            if form == "constant" and p <= 0:
                raise ValidationError("constant slowly varying factor must be positive")
            if form not in ("constant", "log_power"):
                raise ValidationError(f"unknown slowly varying form {form!r}")
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "slowly_varying", sv)

    @classmethod
    def parse(cls, alphas, spec: str | None) -> "ScalingFunction":
        """Parse ``"const:1,log:2"``-style per-axis factors."""
        if not spec:
            return cls(tuple(np.atleast_1d(alphas)))
        sv = []
        for item in spec.split(","):
            form, _, p = item.strip().partition(":")
            form = {"const": "constant", "constant": "constant", "log": "log_power", "log_power": "log_power"}.get(form)
            if form is None:
                raise ValidationError(f"bad slowly varying spec {item!r}")
            sv.append((form, float(p or 1.0)))
        return cls(tuple(np.atleast_1d(alphas)), tuple(sv))

    def l(self, u: float) -> np.ndarray:
        out = []
        for form, p in self.slowly_varying:
            out.append(p if form == "constant" else np.log(np.e + u) ** p)
        return np.array(out)

    def v(self, u: float) -> np.ndarray:
        if u <= 0:
            raise ValidationError("u must be positive")
        return self.l(u) * u ** (2.0 / np.array(self.alphas))

    def to_dict(self) -> dict:
        return {"alphas": list(self.alphas), "slowly_varying": [list(x) for x in self.slowly_varying]}


def theta(scaling: ScalingFunction, u: float) -> float:
    return float(np.prod(scaling.v(u)))


def exceed(values: np.ndarray, threshold) -> np.ndarray:
    """Pointwise indicator that every component is strictly above ``threshold``."""
    return np.all(np.asarray(values) > np.asarray(threshold, dtype=float), axis=-1)


def sojourn_time(values: np.ndarray, threshold, cell_volume: float) -> np.ndarray | float:
    """Left-corner Riemann sum of the exceedance indicator.

    ``values`` has shape ``(..., n_points, d)``; the result drops the last two axes.
    """
    out = cell_volume * np.count_nonzero(exceed(values, threshold), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def window_mask(points: np.ndarray, t0, lam: float, scaling: ScalingFunction, u: float, steps=None) -> np.ndarray:
    """Grid points with ``v_i(u) |s_i - t0_i| <= lam`` on every axis.

    With ``steps`` given, the window must lie inside the grid's cells.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    t0 = np.atleast_1d(np.asarray(t0, dtype=float))
    half = lam / scaling.v(u)
    if steps is not None:
        lo = P.min(axis=0)
        hi = P.max(axis=0) + np.asarray(steps, dtype=float)
        eps = 1e-12 * np.maximum(1.0, np.abs(hi))
        if np.any(t0 - half < lo - eps) or np.any(t0 + half > hi + eps):
            raise WindowExceedsGrid(f"window half-widths {half.tolist()} around {t0.tolist()} leave the grid")
    return np.all(np.abs(P - t0) <= half * (1 + 1e-12), axis=-1)


def windowed_sojourn(points, values, t0, lam, scaling, u, threshold, cell_volume, steps=None):
    """Sojourn restricted to the window ``{s : v_i(u) |s_i - t0_i| <= lam}``."""
    m = window_mask(points, t0, lam, scaling, u, steps)
    return sojourn_time(np.asarray(values)[..., m, :], threshold, cell_volume)


class EmpiricalDF:
    """Right-continuous empirical distribution function."""

    def __init__(self, samples: Sequence[float]):
        x = np.sort(np.asarray(samples, dtype=float).ravel())
        if x.size == 0:
            raise EmptySample("empirical df needs at least one sample")
        self.values = x
        self.n = x.size

    def __call__(self, x):
        r = np.searchsorted(self.values, x, side="right") / self.n
        return float(r) if np.ndim(r) == 0 else r

    def ks_distance(self, other: "EmpiricalDF") -> float:
        grid = np.concatenate([self.values, other.values])
        return float(np.abs(self(grid) - other(grid)).max())


def empirical_df(samples) -> EmpiricalDF:
    return EmpiricalDF(samples)


def ks_critical(n: int, m: int, level: float = 0.01) -> float:
    """Asymptotic two-sample Kolmogorov-Smirnov critical value."""
    c = np.sqrt(-0.5 * np.log(level / 2))
    return float(c * np.sqrt((n + m) / (n * m)))

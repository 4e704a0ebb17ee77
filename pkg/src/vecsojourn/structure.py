"""Covariance model of the stationary field and the matrix variogram of its limit.

The pre-limit field has covariance ``R(t) = r(t) * Sigma``; the built-in
correlation is the separable stable family ``r(t) = exp(-sum |t_i|^a_i)``.
The limit field ``Y`` has covariance ``R_V(t, s) = V(t) + V(-s) - V(t - s)``
with ``V(t) = sum_i |t_i|^a_i (V_i^+ + sgn(t_i) V_i^-)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ScaleMismatch, ValidationError
from .qp import as_spd

VALIDITY_TOL = 1e-9


def check_alphas(alphas) -> np.ndarray:
    a = np.atleast_1d(np.asarray(alphas, dtype=float))
    if a.ndim != 1 or a.size == 0:
        raise ValidationError("alphas must be a non-empty vector")
    if np.any(~np.isfinite(a)) or np.any(a <= 0) or np.any(a > 2):
        raise ValidationError(f"alphas must lie in (0, 2], got {a.tolist()}")
    return a


def alpha_norm(s, alphas) -> np.ndarray | float:
    """``[s]_alpha = sum_i |s_i|^alpha_i`` over the last axis of ``s``."""
    s = np.asarray(s, dtype=float)
    out = np.sum(np.abs(s) ** np.asarray(alphas, dtype=float), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _points(t, k: int) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        t = t.reshape(1)
    if t.shape[-1] != k:
        if k == 1:
            t = t[..., None]
        else:
            raise ScaleMismatch(f"points must have {k} coordinates, got shape {t.shape}")
    return t


def _sgn(x: np.ndarray) -> np.ndarray:
    # sgn(0) = +1
    return np.where(x >= 0, 1.0, -1.0)


@dataclass(frozen=True)
class VariogramModel:
    alphas: np.ndarray
    axis_matrices: np.ndarray  # (k, d, d)
    form: str = "axis"

    def __post_init__(self):
        a = check_alphas(self.alphas)
        m = np.asarray(self.axis_matrices, dtype=float)
        if m.ndim == 2:
            m = m[None]
        if m.ndim != 3 or m.shape[1] != m.shape[2] or m.shape[0] != a.size:
            raise ScaleMismatch(f"need {a.size} square axis matrices, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValidationError("variogram matrices must be finite")
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "axis_matrices", m)

    @classmethod
    def common(cls, alphas, matrix) -> "VariogramModel":
        """``V(t) = [t]_alpha * A`` for a symmetric matrix ``A``."""
        a = check_alphas(alphas)
        A = np.atleast_2d(np.asarray(matrix, dtype=float))
        if np.abs(A - A.T).max() > 1e-12 * max(1.0, np.abs(A).max()):
            raise ValidationError("common-matrix variogram needs a symmetric matrix")
        return cls(a, np.repeat(A[None], a.size, axis=0), form="common")

    @classmethod
    def axis(cls, alphas, matrices) -> "VariogramModel":
        return cls(check_alphas(alphas), np.asarray(matrices, dtype=float), form="axis")

    @property
    def k(self) -> int:
        return self.alphas.size

    @property
    def d(self) -> int:
        return self.axis_matrices.shape[1]

    @property
    def sym_parts(self) -> np.ndarray:
        m = self.axis_matrices
        return 0.5 * (m + m.transpose(0, 2, 1))

    @property
    def skew_parts(self) -> np.ndarray:
        m = self.axis_matrices
        return 0.5 * (m - m.transpose(0, 2, 1))

    def __call__(self, t) -> np.ndarray:
        return eval_V(self, t)

    def to_dict(self) -> dict:
        return {"form": self.form, "alphas": self.alphas.tolist(), "matrices": self.axis_matrices.tolist()}


def eval_V(model: VariogramModel, t) -> np.ndarray:
    """Variogram at one point (``(d, d)``) or a stack of points (``(..., d, d)``)."""
    t = _points(t, model.k)
    scalar = t.ndim == 1
    t = np.atleast_2d(t) if scalar else t
    w = np.abs(t) ** model.alphas                       # (..., k)
    sg = _sgn(t)
    out = np.einsum("...i,ijk->...jk", w, model.sym_parts)
    out = out + np.einsum("...i,ijk->...jk", w * sg, model.skew_parts)
    return out[0] if scalar else out


def eval_RV(model: VariogramModel, t, s) -> np.ndarray:
    """``R_V(t, s) = E[Y(t) Y(s)^T] = V(t) + V(-s) - V(t - s)``."""
    t = _points(t, model.k)
    s = _points(s, model.k)
    return eval_V(model, t) + eval_V(model, -s) - eval_V(model, t - s)


def cross_variogram(model: VariogramModel, h) -> np.ndarray:
    """``D(h) = (V(h) + V(-h)) / 2``, the covariance of ``Y(h)``."""
    h = _points(h, model.k)
    return 0.5 * (eval_V(model, h) + eval_V(model, -h))


def rv_block(model: VariogramModel) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Block-covariance callback ``(P, Q) -> (n, m, d, d)`` for the limit field."""

    def block(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
        P = _points(P, model.k)
        Q = _points(Q, model.k)
        return eval_RV(model, P[:, None, :], Q[None, :, :])

    return block


def hermitian_axis_matrices(model: VariogramModel) -> np.ndarray:
    a = model.alphas[:, None, None]
    return np.sin(np.pi * a / 2) * model.sym_parts - 1j * np.cos(np.pi * a / 2) * model.skew_parts


def check_validity(model: VariogramModel, tol: float = VALIDITY_TOL) -> dict:
    """Whether ``R_V`` is a covariance matrix function.

    Valid iff each Hermitian ``sin(pi a_i/2) V_i^+ - i cos(pi a_i/2) V_i^-`` is
    non-negative definite; eigenvalues are compared against ``-tol * ||.||_F``.
    """
    per_axis = []
    ok = True
    for H in hermitian_axis_matrices(model):
        ev = float(np.linalg.eigvalsh(H)[0])
        per_axis.append(ev)
        if ev < -tol * max(np.linalg.norm(H), np.finfo(float).tiny):
            ok = False
    return {"valid": ok, "per_axis_min_eig": per_axis}


def assemble_covariance(block: Callable, points: np.ndarray, d: int) -> np.ndarray:
    """Stack ``block(t_i, t_j)`` into the ``(n d) x (n d)`` matrix, point-major."""
    P = np.asarray(points, dtype=float)
    B = block(P, P)                                     # (n, n, d, d)
    n = B.shape[0]
    return B.transpose(0, 2, 1, 3).reshape(n * d, n * d)


def gram_psd_check(model: VariogramModel, points, tol: float = 1e-12) -> float:
    """Minimum eigenvalue of the stacked ``R_V`` Gram matrix over ``points``.

    Raises ``RuntimeError`` if the assembled matrix is asymmetric beyond
    ``tol`` relative to its scale, which would mean an assembly bug.
    """
    P = _points(points, model.k)
    P = np.atleast_2d(P)
    if P.shape[0] * model.d > 5000:
        raise ValidationError("Gram check limited to m*d <= 5000")
    G = assemble_covariance(rv_block(model), P, model.d)
    scale = max(np.abs(G).max(), 1.0)
    if np.abs(G - G.T).max() > tol * scale:
        raise RuntimeError("assembled Gram matrix is not symmetric")
    G = 0.5 * (G + G.T)
    return float(np.linalg.eigvalsh(G)[0])


def check_homogeneity(model: VariogramModel, samples: int = 1000, rng=None) -> float:
    """Max relative deviation of ``V(c^{1/alpha} t)`` from ``c V(t)`` over random draws."""
    rng = np.random.default_rng(rng)
    t = rng.uniform(-5, 5, size=(samples, model.k))
    c = np.exp(rng.uniform(-3, 3, size=samples))
    lhs = eval_V(model, t * c[:, None] ** (1.0 / model.alphas))
    rhs = c[:, None, None] * eval_V(model, t)
    den = np.maximum(np.abs(rhs).max(axis=(1, 2)), np.finfo(float).tiny)
    return float((np.abs(lhs - rhs).max(axis=(1, 2)) / den).max())


def drift_constants(model: VariogramModel, w, n_dirs: int = 2000, rng=0) -> tuple[float, float]:
    """Bounds ``C1 <= w^T V(t) w / [t]_alpha <= C2`` by minimising over the unit alpha-sphere.

    ``w^T V(t) w / [t]_alpha`` is scale invariant under ``t -> c^{1/alpha} t``,
    so directions are sampled on ``[t]_alpha = 1``.
    """
    w = np.asarray(w, dtype=float)
    rng = np.random.default_rng(rng)
    g = rng.standard_normal((n_dirs, model.k))
    if model.k == 1:
        g = np.array([[1.0], [-1.0]])
    t = g / alpha_norm(g, model.alphas)[:, None] ** (1.0 / model.alphas)
    q = np.einsum("i,nij,j->n", w, eval_V(model, t), w)
    return float(q.min()), float(q.max())


# ---------------------------------------------------------------- covariance


@dataclass(frozen=True)
class CovModel:
    sigma: np.ndarray
    alphas: np.ndarray
    correlation: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    family: str = "stable_separable"

    def __post_init__(self):
        object.__setattr__(self, "sigma", as_spd(self.sigma))
        object.__setattr__(self, "alphas", check_alphas(self.alphas))

    @property
    def k(self) -> int:
        return self.alphas.size

    @property
    def d(self) -> int:
        return self.sigma.shape[0]

    def corr(self, t) -> np.ndarray:
        t = _points(t, self.k)
        if self.correlation is not None:
            return np.asarray(self.correlation(t), dtype=float)
        return np.exp(-alpha_norm(t, self.alphas))

    def __call__(self, t) -> np.ndarray:
        """``R(t) = E[X(s + t) X(s)^T]``."""
        r = np.asarray(self.corr(t))
        return r[..., None, None] * self.sigma

    def block(self, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
        P = _points(P, self.k)
        Q = _points(Q, self.k)
        return self(P[:, None, :] - Q[None, :, :])

    def limit_variogram(self) -> VariogramModel:
        """The variogram the stable family scales to under ``v_i(u) = u^{2/alpha_i}``."""
        if self.correlation is not None:
            raise ValidationError("limit variogram only known for the built-in stable family")
        return VariogramModel.common(self.alphas, self.sigma)

    def to_dict(self) -> dict:
        return {"family": self.family, "sigma": self.sigma.tolist(), "alphas": self.alphas.tolist()}


def verify_B2(cov: CovModel, candidate: VariogramModel, scaling, u_grid: Sequence[float], t_grid) -> list[dict]:
    """Sup-norm residual of ``u^2 [Sigma - R(t / v(u))] - V(t)`` over ``t_grid`` per ``u``."""
    if cov.k != candidate.k or cov.d != candidate.d:
        raise ScaleMismatch("covariance and variogram disagree on (k, d)")
    if not np.allclose(cov.alphas, candidate.alphas):
        raise ScaleMismatch("covariance and variogram disagree on alpha")
    if np.asarray(scaling.alphas).size != cov.k:
        raise ScaleMismatch("scaling function has the wrong number of axes")
    T = np.atleast_2d(_points(t_grid, cov.k))
    Vt = eval_V(candidate, T)
    vnorm = float(np.linalg.norm(Vt, axis=(1, 2)).max())
    rows = []
    for u in u_grid:
        v = scaling.v(u)
        lhs = u**2 * (cov.sigma - cov(T / v))
        res = np.linalg.norm(lhs - Vt, axis=(1, 2))
        rows.append({"u": float(u), "residual": float(res.max()), "v_norm": vnorm})
    return rows

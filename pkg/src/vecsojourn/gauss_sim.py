"""Exact Gaussian simulation on grids, tail-conditioned draws and orthant tails."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.stats import multivariate_normal

from . import rng as rngmod
from .errors import DimUnsupported, NotFactorizable, SavageViolated, ValidationError
from .qp import as_spd
from .structure import CovModel, assemble_covariance

JITTER_SCHEDULE = tuple(10.0**e for e in range(-14, -5))
MAX_SCALAR_DIM = 20000


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid ``lower_i + j h_i`` for ``j < counts_i``.

    Each point stands for the cell ``[t, t + h)``, so a grid built by
    :meth:`box` or :meth:`symmetric` tiles its domain exactly.
    """

    lower: tuple[float, ...]
    step: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(float(x) for x in np.atleast_1d(self.lower))
        st = tuple(float(x) for x in np.atleast_1d(self.step))
        ct = tuple(int(x) for x in np.atleast_1d(self.counts))
        if not (len(lo) == len(st) == len(ct)):
            raise ValidationError("grid lower/step/counts must have equal lengths")
        if any(h <= 0 for h in st) or any(c < 1 for c in ct):
            raise ValidationError("grid needs positive steps and at least one point per axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "step", st)
        object.__setattr__(self, "counts", ct)

    @staticmethod
    def _ncells(length: float, h: float) -> int:
        n = int(round(length / h))
        if n < 1 or abs(n * h - length) > 1e-9 * max(1.0, length):
            raise ValidationError(f"extent {length} is not a whole number of steps {h}")
        return n

    @classmethod
    def box(cls, S: float, h: float, k: int) -> "GridSpec":
        """Cells tiling ``[0, S)^k``."""
        n = cls._ncells(S, h)
        return cls((0.0,) * k, (h,) * k, (n,) * k)

    @classmethod
    def symmetric(cls, lam: float, h: float, k: int) -> "GridSpec":
        """Cells tiling ``[-lam, lam)^k``; contains the origin."""
        n = cls._ncells(lam, h)
        return cls((-n * h,) * k, (h,) * k, (2 * n,) * k)

    @classmethod
    def parse(cls, spec: str) -> "GridSpec":
        """``"lo:hi:h[,lo:hi:h...]"``, one triple per axis, cells tiling ``[lo, hi)``."""
        lo, st, ct = [], [], []
        for axis in spec.split(","):
            a, b, h = (float(x) for x in axis.split(":"))
            lo.append(a)
            st.append(h)
            ct.append(cls._ncells(b - a, h))
        return cls(tuple(lo), tuple(st), tuple(ct))

    @property
    def k(self) -> int:
        return len(self.lower)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.step))

    def axes(self) -> list[np.ndarray]:
        return [lo + h * np.arange(c) for lo, h, c in zip(self.lower, self.step, self.counts)]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def index_of(self, t) -> int:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.rint((t - np.array(self.lower)) / np.array(self.step)).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.array(self.counts)):
            raise ValidationError(f"point {t.tolist()} is off the grid")
        if not np.allclose(np.array(self.lower) + idx * np.array(self.step), t, atol=1e-9):
            raise ValidationError(f"point {t.tolist()} is not a grid node")
        return int(np.ravel_multi_index(tuple(idx), self.counts))

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "step": list(self.step), "counts": list(self.counts)}


@dataclass
class Factor:
    """Lower factor of a covariance restricted to its non-degenerate coordinates.

    Coordinates with exactly zero variance are held at zero and excluded
    from the factorization.
    """

    L: np.ndarray
    active: np.ndarray
    size: int
    jitter: float

    @property
    def n_active(self) -> int:
        return self.active.size

    def draw(self, z: np.ndarray) -> np.ndarray:
        out = np.zeros((z.shape[0], self.size))
        out[:, self.active] = z @ self.L.T
        return out


def factorize(C: np.ndarray) -> Factor:
    """Cholesky factor with diagonal jitter escalated only on failure."""
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if np.abs(C - C.T).max() > 1e-10 * max(1.0, np.abs(C).max()):
        raise NotFactorizable("assembled covariance is not symmetric")
    diag = np.diag(C)
    active = np.flatnonzero(diag != 0.0)
    Ca = 0.5 * (C + C.T)[np.ix_(active, active)]
    if active.size == 0:
        return Factor(np.zeros((0, 0)), active, n, 0.0)
    scale = float(np.mean(np.diag(Ca)))
    for jitter in (0.0,) + JITTER_SCHEDULE:
        try:
            L = np.linalg.cholesky(Ca + jitter * scale * np.eye(active.size) if jitter else Ca)
            return Factor(L, active, n, jitter * scale)
        except np.linalg.LinAlgError:
            continue
    raise NotFactorizable(f"covariance not factorizable with jitter up to {JITTER_SCHEDULE[-1]:g} x mean diagonal")


def covariance_factor(block: Callable, points: np.ndarray, d: int) -> Factor:
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[0] * d > MAX_SCALAR_DIM:
        raise ValidationError(f"grid too large for dense factorization: {P.shape[0] * d} > {MAX_SCALAR_DIM}")
    return factorize(assemble_covariance(block, P, d))


def draw_block(factor: Factor, seed: int, block: int, m: int, d: int, tag: int = 0) -> np.ndarray:
    """``m`` exact draws ``(m, n_points, d)`` for replication block ``block``."""
    g = rngmod.stream(seed, rngmod.FIELD, block, tag)
    z = g.standard_normal((m, factor.n_active))
    return factor.draw(z).reshape(m, -1, d)


@dataclass
class PathSample:
    grid: GridSpec
    values: np.ndarray          # (n_points, d)
    seed_record: tuple
    jitter: float = 0.0


def sample_field(
    block: Callable,
    grid: GridSpec,
    d: int,
    n_reps: int,
    seed: int,
    threads: int = 1,
    tag: int = 0,
) -> tuple[np.ndarray, Factor]:
    """Exact draws of a Gaussian field on ``grid``; returns ``(values, factor)``.

    ``values`` has shape ``(n_reps, n_points, d)``.  Replication ``r`` uses the
    counter-based stream of its block, so outputs do not depend on ``threads``.
    """
    factor = covariance_factor(block, grid.points(), d)
    parts = rngmod.run_blocks(lambda b, s, e: draw_block(factor, seed, b, e - s, d, tag), n_reps, threads)
    return np.concatenate(parts, axis=0), factor


def path_samples(values: np.ndarray, grid: GridSpec, seed: int, jitter: float) -> list[PathSample]:
    return [PathSample(grid, v, (seed, r), jitter) for r, v in enumerate(values)]


# ---------------------------------------------------------------- tails


@dataclass
class TailSample:
    """Draws of ``X(t0)`` conditioned on ``X(t0) > u b`` (one row per draw)."""

    x0: np.ndarray
    u: float
    acceptance_count: int
    n_proposals: int

    @property
    def acceptance_rate(self) -> float:
        return self.acceptance_count / self.n_proposals


def savage_w(sigma, b) -> np.ndarray:
    w = np.linalg.solve(as_spd(sigma), np.asarray(b, dtype=float))
    if np.any(w <= 0):
        raise SavageViolated(f"Sigma^-1 b = {w.tolist()} has a non-positive component")
    return w


def sample_tail_conditioned(sigma, b, u: float, n: int, gen_exp: np.random.Generator, gen_unif: np.random.Generator) -> TailSample:
    """Exact draws of ``X ~ N(0, Sigma)`` given ``X > u b`` by rejection.

    Proposal ``X = u b + G / u`` with independent ``G_i ~ Exp(rate w_i)``; accept
    with probability ``exp(-G^T Sigma^{-1} G / (2 u^2))``.  The first proposal
    of each draw consumes the first exponential row of ``gen_exp``, which keeps
    coupled runs aligned.
    """
    sigma = as_spd(sigma)
    b = np.asarray(b, dtype=float)
    w = savage_w(sigma, b)
    if u <= 0:
        raise ValidationError("u must be positive")
    prec = np.linalg.inv(sigma)
    d = b.size
    out = np.empty((n, d))
    todo = np.arange(n)
    proposals = 0
    while todo.size:
        G = gen_exp.standard_exponential((todo.size, d)) / w
        U = gen_unif.random(todo.size)
        proposals += todo.size
        q = np.einsum("ni,ij,nj->n", G, prec, G)
        ok = U < np.exp(-q / (2 * u * u))
        out[todo[ok]] = u * b + G[ok] / u
        todo = todo[~ok]
    return TailSample(out, float(u), n, proposals)


def _offsets(P, k: int) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        P = P.reshape(-1, k)
    return P


def regression_coefficients(cov: CovModel, offsets: np.ndarray) -> np.ndarray:
    """``R(s) Sigma^{-1}`` for each offset ``s``: shape ``(n, d, d)``."""
    return cov(offsets) @ np.linalg.inv(cov.sigma)


def residual_block(cov: CovModel) -> Callable:
    """Covariance of ``X(t0 + s) - R(s) Sigma^{-1} X(t0)`` at offsets ``(s, s')``."""
    sinv = np.linalg.inv(cov.sigma)

    def block(P, Q):
        P = _offsets(P, cov.k)
        Q = _offsets(Q, cov.k)
        RP = cov(P)                                     # (n, d, d)
        RQ = cov(Q)
        cross = np.einsum("nab,bc,mdc->nmad", RP, sinv, RQ)
        out = cov.block(P, Q) - cross
        # conditioning point: residual vanishes identically
        out[np.all(P == 0, axis=1)] = 0.0
        out[:, np.all(Q == 0, axis=1)] = 0.0
        return out

    return block


def conditional_residual_field(
    cov: CovModel,
    offsets: np.ndarray,
    x0: np.ndarray,
    seed: int,
    threads: int = 1,
    tag: int = 0,
    factor: Optional[Factor] = None,
) -> tuple[np.ndarray, Factor]:
    """Draws of ``X(t0 + s)`` on the offsets ``s`` given ``X(t0) = x0`` (one row of ``x0`` per draw).

    ``X(t0 + s) = R(s) Sigma^{-1} x0 + residual`` with the residual sampled
    exactly from its own covariance.  Returns ``(values, factor)``.
    """
    P = _offsets(offsets, cov.k)
    x0 = np.atleast_2d(x0)
    d = cov.d
    if factor is None:
        factor = covariance_factor(residual_block(cov), P, d)
    coef = regression_coefficients(cov, P)
    n = x0.shape[0]

    def job(bidx, s, e):
        res = draw_block(factor, seed, bidx, e - s, d, tag)
        return res + np.einsum("pab,nb->npa", coef, x0[s:e])

    parts = rngmod.run_blocks(job, n, threads)
    return np.concatenate(parts, axis=0), factor


# ---------------------------------------------------------------- orthant


def log_density(sigma: np.ndarray, x: np.ndarray) -> float:
    return float(multivariate_normal(mean=np.zeros(len(x)), cov=sigma).logpdf(x))


def orthant_tail(sigma, b, u: float, method: str = "identity_mc", n: int = 100000, seed: int = 0,
                 threads: int = 1) -> dict:
    """``P(X > u b)`` for ``X ~ N(0, Sigma)``.

    ``identity_mc`` is the unbiased change of variables
    ``u^{-d} phi(u b) prod(1/w) E[exp(-G^T Sigma^{-1} G / (2 u^2))]``,
    ``G_i ~ Exp(rate w_i)``; ``asymptotic`` drops the expectation;
    ``quad2d`` integrates the density over the orthant (``d = 2`` only).
    """
    sigma = as_spd(sigma)
    b = np.asarray(b, dtype=float)
    d = b.size
    if method == "quad2d":
        if d != 2:
            raise DimUnsupported("quad2d needs d = 2")
        pdf = multivariate_normal(mean=np.zeros(2), cov=sigma).pdf
        lo1, lo2 = u * b
        val, err = integrate.dblquad(lambda y, x: pdf([x, y]), lo1, np.inf, lo2, np.inf,
                                     epsabs=0.0, epsrel=1e-10)
        return {"value": float(val), "stderr": float(err), "method": method}
    w = savage_w(sigma, b)
    logbase = -d * np.log(u) + log_density(sigma, u * b) - np.sum(np.log(w))
    if method == "asymptotic":
        return {"value": float(np.exp(logbase)), "stderr": 0.0, "method": method}
    if method != "identity_mc":
        raise ValueError(f"unknown method {method!r}")
    factors = tail_identity_factors(sigma, w, [u], n, seed, threads)[:, 0]
    mean = factors.mean()
    se = factors.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0
    return {"value": float(np.exp(logbase) * mean), "stderr": float(np.exp(logbase) * se), "method": method,
            "correction": float(mean)}


def tail_identity_factors(sigma, w, u_list, n: int, seed: int, threads: int = 1) -> np.ndarray:
    """``exp(-G^T Sigma^{-1} G / (2 u^2))`` for shared draws ``G`` across ``u_list``: ``(n, len(u_list))``."""
    prec = np.linalg.inv(sigma)
    w = np.asarray(w, dtype=float)
    us = np.asarray(u_list, dtype=float)

    def job(bidx, s, e):
        G = rngmod.stream(seed, rngmod.EXPONENTIAL, bidx, 99).standard_exponential((e - s, w.size)) / w
        q = np.einsum("ni,ij,nj->n", G, prec, G)
        return np.exp(-q[:, None] / (2 * us[None, :] ** 2))

    return np.concatenate(rngmod.run_blocks(job, n, threads, block_size=20000), axis=0)

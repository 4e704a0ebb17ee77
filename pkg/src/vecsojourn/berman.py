"""Monte Carlo estimators of the limit df F_w and the Berman function B(x).

Two independent representations are implemented:

* ``expmix`` simulates ``J = |{t : Y(t) - V(t) w + E / w > 0}|`` on a window
  ``[-lam, lam)^k`` and averages ``1{J > x} / J``;
* ``doublesum`` evaluates ``S^{-k} int P(|{t in [0,S)^k : Y - V w + z / w > 0}| > x) e^{-1^T z} dz``.

Both sample the limit field ``Y`` exactly on a grid and count grid cells.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng as rngmod
from .errors import MismatchedConfig, SavageViolated, TruncationInsufficient, ValidationError
from .gauss_sim import Factor, GridSpec, covariance_factor, draw_block
from .qp import solve_pi
from .sojourn import EmpiricalDF
from .structure import VariogramModel, drift_constants, eval_V, rv_block

N_BATCHES = 20
TRUNCATION_LIMIT = 0.01


@dataclass(frozen=True)
class LimitFieldSpec:
    variogram: VariogramModel
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).ravel()
        if w.size != self.variogram.d:
            raise ValidationError(f"w has length {w.size}, variogram dimension is {self.variogram.d}")
        if np.any(w <= 0):
            raise SavageViolated(f"w = {w.tolist()} must be strictly positive")
        object.__setattr__(self, "w", w)
        c1, _ = drift_constants(self.variogram, w)
        if not c1 > 0:
            raise ValidationError("w^T V(t) w must be positive for t != 0")

    @classmethod
    def from_model(cls, variogram: VariogramModel, sigma, b) -> "LimitFieldSpec":
        sol = solve_pi(sigma, b)
        if not sol.savage:
            raise SavageViolated(f"determining index set {sol.index_I} is not the full set")
        return cls(variogram, sol.aleph)

    @property
    def k(self) -> int:
        return self.variogram.k

    @property
    def d(self) -> int:
        return self.variogram.d

    def drift(self, points: np.ndarray) -> np.ndarray:
        """``V(t) w`` at each point, shape ``(n, d)``."""
        return eval_V(self.variogram, points) @ self.w

    def default_lambda(self) -> float:
        c1, _ = drift_constants(self.variogram, self.w)
        return 8.0 * (1.0 / c1) ** (1.0 / self.variogram.alphas.min())


@dataclass
class BermanEstimate:
    x: float
    estimate: float
    stderr: float
    n_samples: int
    representation: str
    discretization: dict
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "n_samples": self.n_samples,
            "representation": self.representation,
            "discretization": dict(self.discretization),
            "diagnostics": dict(self.diagnostics),
        }


def batch_means(values: np.ndarray, n_batches: int = N_BATCHES) -> tuple[float, float]:
    """Mean and batch-means standard error over contiguous batches."""
    v = np.asarray(values, dtype=float)
    n = v.size
    mean = rngmod.pairwise_sum(v) / n
    nb = min(n_batches, n)
    if nb < 2:
        return mean, float("nan")
    means = np.array([rngmod.pairwise_sum(c) / c.size for c in np.array_split(v, nb)])
    return mean, float(means.std(ddof=1) / math.sqrt(nb))


def min_count(x: float, cell: float) -> int:
    """Smallest grid-cell count ``m`` with ``m * cell > x``."""
    if x < 0:
        return 1
    m = int(math.floor(x / cell)) + 1
    while m > 1 and (m - 1) * cell > x:
        m -= 1
    while m * cell <= x:
        m += 1
    return m


# ------------------------------------------------------------------ expmix


@dataclass
class SojournSample:
    """Simulated ``J`` values (one per replication) with their discretization."""

    J: np.ndarray
    lam: float
    h: float
    k: int
    jitter: float
    by_lambda: dict = field(default_factory=dict)

    @property
    def df(self) -> EmpiricalDF:
        return EmpiricalDF(self.J)

    def F(self, x_list) -> np.ndarray:
        return self.df(np.asarray(x_list, dtype=float))


def _limit_factor(spec: LimitFieldSpec, grid: GridSpec) -> Factor:
    return covariance_factor(rv_block(spec.variogram), grid.points(), spec.d)


def simulate_J(
    spec: LimitFieldSpec,
    lam: float,
    h: float,
    n: int,
    seed: int,
    threads: int = 1,
    sub_lambdas: Sequence[float] = (),
    factor: Optional[Factor] = None,
    coarse: bool = False,
) -> SojournSample:
    """Draw ``n`` copies of the grid version of ``J`` on ``[-lam, lam)^k``.

    ``sub_lambdas`` reuse the same paths restricted to smaller windows, so the
    returned ``by_lambda`` samples are pathwise coupled.  With ``coarse`` the
    same paths are also evaluated on every other node (step ``2 h``), stored
    under the key ``"coarse"``.
    """
    grid = GridSpec.symmetric(lam, h, spec.k)
    P = grid.points()
    drift = spec.drift(P)
    factor = factor or _limit_factor(spec, grid)
    cell = grid.cell_volume
    masks = {}
    for l in sub_lambdas:
        GridSpec.symmetric(l, h, spec.k)
        eps = 1e-9 * max(1.0, l)
        masks[float(l)] = np.all((P >= -l - eps) & (P + h <= l + eps), axis=1)
    if coarse:
        GridSpec.symmetric(lam, 2 * h, spec.k)
        idx = np.indices(grid.counts).reshape(spec.k, -1).T
        masks["coarse"] = np.all(idx % 2 == 0, axis=1)
    weights = {key: cell * (2**spec.k if key == "coarse" else 1) for key in masks}

    def job(b, s, e):
        f = draw_block(factor, seed, b, e - s, spec.d) - drift
        E = rngmod.stream(seed, rngmod.EXPONENTIAL, b).standard_exponential((e - s, spec.d))
        hit = np.all(f + (E / spec.w)[:, None, :] > 0, axis=-1)
        out = [cell * np.count_nonzero(hit, axis=1)]
        out += [weights[key] * np.count_nonzero(hit[:, m], axis=1) for key, m in masks.items()]
        return np.stack(out, axis=1)

    res = np.concatenate(rngmod.run_blocks(job, n, threads), axis=0)
    by_lam = {l: res[:, i + 1] for i, l in enumerate(masks)}
    return SojournSample(res[:, 0], float(lam), float(h), spec.k, factor.jitter, by_lam)


def estimate_F_w(spec: LimitFieldSpec, x_list, lam: float, h: float, n: int, seed: int = 0,
                 threads: int = 1) -> tuple[EmpiricalDF, np.ndarray]:
    """Empirical df of ``J`` and its values at ``x_list``."""
    if n < 100:
        raise ValidationError("need at least 100 replications")
    sample = simulate_J(spec, lam, h, n, seed, threads)
    df = sample.df
    return df, df(np.asarray(x_list, dtype=float))


def berman_from_J(J: np.ndarray, x_list, lam: float, h: float, k: int, jitter: float = 0.0) -> list[BermanEstimate]:
    """Plug-in ``mean(1{J > x} / J)`` at each ``x`` on one shared sample."""
    J = np.asarray(J, dtype=float)
    inv = 1.0 / J
    out = []
    for x in np.atleast_1d(np.asarray(x_list, dtype=float)):
        mean, se = batch_means(np.where(J > x, inv, 0.0))
        out.append(BermanEstimate(
            float(x), mean, se, J.size, "expmix",
            {"lambda": float(lam), "step": float(h), "k": k},
            {"jitter": jitter, "mean_J": float(J.mean()), "p_J_gt_x": float(np.mean(J > x))},
        ))
    return out


def estimate_B_expmix(spec: LimitFieldSpec, x, lam: float, h: float, n: int, seed: int = 0,
                      threads: int = 1):
    """Berman function from the exponential-mixture representation.

    ``x`` may be a scalar or a list; a list shares one set of paths.
    """
    if n < 100:
        raise ValidationError("need at least 100 replications")
    sample = simulate_J(spec, lam, h, n, seed, threads)
    est = berman_from_J(sample.J, x, lam, h, spec.k, sample.jitter)
    return est if np.ndim(x) else est[0]


def estimate_B_expmix_refined(spec: LimitFieldSpec, x, lam: float, h: float, n: int, seed: int = 0,
                              threads: int = 1, order: Optional[float] = None):
    """Estimates at steps ``h`` and ``h/2`` from shared paths plus their extrapolation.

    Paths are drawn at ``h/2``; the ``h`` estimate uses every other node.  The
    default order ``min(alpha)/2`` matches the step bias seen for ``alpha = 1``
    (differences shrink by about ``1/sqrt(2)`` per halving).  Returns a list of
    ``(coarse, fine, extrapolated)`` triples, one per ``x``.
    """
    if n < 100:
        raise ValidationError("need at least 100 replications")
    if order is None:
        order = float(spec.variogram.alphas.min()) / 2
    sample = simulate_J(spec, lam, h / 2, n, seed, threads, coarse=True)
    Jf, Jc = sample.J, sample.by_lambda["coarse"]
    fac = 2.0**order
    out = []
    for xv in np.atleast_1d(np.asarray(x, dtype=float)):
        (c,) = berman_from_J(Jc, [xv], lam, h, spec.k, sample.jitter)
        (f,) = berman_from_J(Jf, [xv], lam, h / 2, spec.k, sample.jitter)
        vc = np.where(Jc > xv, 1.0 / Jc, 0.0)
        vf = np.where(Jf > xv, 1.0 / Jf, 0.0)
        mean, se = batch_means((fac * vf - vc) / (fac - 1))
        ext = BermanEstimate(float(xv), mean, se, n, "expmix",
                             {"lambda": float(lam), "step": [h, h / 2], "k": spec.k, "order": order},
                             {"raw": [c.estimate, f.estimate], "raw_stderr": [c.stderr, f.stderr], "coupled": True})
        out.append((c, f, ext))
    return out if np.ndim(x) else out[0]


# --------------------------------------------------------------- doublesum


def _integral_1d(g: np.ndarray, m: int) -> np.ndarray:
    """``int 1{#{t : g(t) < z} >= m} e^{-z} dz = exp(-g_(m))`` per path; ``g`` is ``(paths, n)``."""
    if m > g.shape[1]:
        return np.zeros(g.shape[0])
    gm = np.partition(g, m - 1, axis=1)[:, m - 1]
    return np.exp(-gm)


def _integral_2d_path(g1: np.ndarray, g2: np.ndarray, m: int) -> float:
    """``int int 1{#{t : g1 < z1, g2 < z2} >= m} e^{-z1-z2} dz`` for one path.

    Sweeping ``z1`` upward adds points in order of ``g1``; between consecutive
    ``g1`` values the admissible ``z2`` are those above the m-th smallest ``g2``
    of the points added so far.
    """
    n = g1.size
    if m > n:
        return 0.0
    order = np.argsort(g1, kind="stable")
    a = g1[order]
    c = g2[order]
    heap: list[float] = []           # max-heap (negated) of the m smallest g2
    total = 0.0
    for j in range(n):
        v = c[j]
        if len(heap) < m:
            heapq.heappush(heap, -v)
        elif v < -heap[0]:
            heapq.heapreplace(heap, -v)
        if len(heap) < m:
            continue
        q = -heap[0]
        gap = (a[j + 1] - a[j]) if j + 1 < n else math.inf
        total += math.exp(-q - a[j]) * (-math.expm1(-gap))
    return total


def _integral_2d(g: np.ndarray, m: int) -> np.ndarray:
    if m == 1:
        # running minimum of g2 in g1 order
        order = np.argsort(g[..., 0], axis=1, kind="stable")
        a = np.take_along_axis(g[..., 0], order, axis=1)
        q = np.minimum.accumulate(np.take_along_axis(g[..., 1], order, axis=1), axis=1)
        gap = np.diff(a, axis=1, append=np.inf)
        return np.sum(np.exp(-q - a) * (-np.expm1(-gap)), axis=1)
    return np.array([_integral_2d_path(p[:, 0], p[:, 1], m) for p in g])


def _doublesum_weights(g: np.ndarray, m: int, M: float, gen: np.random.Generator):
    """Per-path unbiased values of the z-integral; returns ``(values, boundary_mass)``.

    Coordinates 1-2 are integrated exactly; any further coordinates are drawn
    from ``z_i = E_i - M`` and reweighted by ``e^{M}`` each.
    """
    d = g.shape[-1]
    if d == 1:
        return _integral_1d(g[..., 0], m), np.zeros(g.shape[0])
    if d == 2:
        return _integral_2d(g, m), np.zeros(g.shape[0])
    z = gen.standard_exponential((g.shape[0], d - 2)) - M
    vals = np.empty(g.shape[0])
    for i, (p, zi) in enumerate(zip(g, z)):
        keep = np.all(p[:, 2:] < zi, axis=1)
        vals[i] = _integral_2d_path(p[keep, 0], p[keep, 1], m) if keep.sum() >= m else 0.0
    vals *= math.exp((d - 2) * M)
    near = np.any(z < -M + 1.0, axis=1)
    return vals, np.where(near, vals, 0.0)


def estimate_B_doublesum(spec: LimitFieldSpec, x, S: float, h: float, n: int, M: float = 3.0,
                         seed: int = 0, threads: int = 1, tilt: bool = True):
    """Finite-window Berman function ``B(x; [0,S)^k) / S^k``.

    For each simulated path the integral over ``z`` is evaluated exactly in the
    first two coordinates (the event is monotone in ``z``); further coordinates
    use a shifted-exponential proposal truncated at ``-M``, whose boundary mass
    must stay below 1%.

    With ``tilt`` the paths are drawn from the mixture over grid times ``tau``
    of the measures with density ``exp(w^T (Y(tau) - V(tau) w))``, i.e. ``Y``
    shifted by ``R_V(., tau) w``, and reweighted by the inverse mixture density.
    The weighted per-path values are then bounded by the number of grid cells.
    """
    if S < 1:
        raise ValidationError("S must be at least 1")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    grid = GridSpec.box(S, h, spec.k)
    P = grid.points()
    N = P.shape[0]
    drift = spec.drift(P)
    factor = _limit_factor(spec, grid)
    cell = grid.cell_volume
    ms = [min_count(xv, cell) for xv in xs]
    if tilt:
        shift = rv_block(spec.variogram)(P, P) @ spec.w     # (t, tau, d)

    def job(b, s, e):
        f = draw_block(factor, seed, b, e - s, spec.d) - drift
        weight = np.ones(e - s)
        if tilt:
            tau = rngmod.stream(seed, rngmod.INDEX, b).integers(0, N, size=e - s)
            f = f + shift[:, tau, :].transpose(1, 0, 2)
            a = f @ spec.w                                  # log tilt density per time
            amax = a.max(axis=1)
            weight = np.exp(-amax) / np.mean(np.exp(a - amax[:, None]), axis=1)
        g = -spec.w * f                                     # z_i > g_i(t) <=> component i exceeds
        vals, bnd = [], []
        for j, m in enumerate(ms):
            gen = rngmod.stream(seed, rngmod.AUX, b, j)
            v, bm = _doublesum_weights(g, m, M, gen)
            vals.append(v * weight)
            bnd.append(bm * weight)
        return np.stack(vals, axis=1), np.stack(bnd, axis=1)

    parts = rngmod.run_blocks(job, n, threads)
    vals = np.concatenate([p[0] for p in parts], axis=0)
    bnd = np.concatenate([p[1] for p in parts], axis=0)
    volume = S**spec.k
    out = []
    for j, xv in enumerate(xs):
        mean, se = batch_means(vals[:, j] / volume)
        total = vals[:, j].sum()
        frac = float(bnd[:, j].sum() / total) if total > 0 else 0.0
        if frac > TRUNCATION_LIMIT:
            raise TruncationInsufficient(f"boundary mass {frac:.3g} at z = -M exceeds 1%; raise M above {M}")
        out.append(BermanEstimate(
            float(xv), mean, se, n, "doublesum",
            {"S": float(S), "step": float(h), "M": float(M) if spec.d > 2 else None, "k": spec.k},
            {"jitter": factor.jitter, "boundary_mass": frac, "tilt": tilt},
        ))
    return out if np.ndim(x) else out[0]


# ------------------------------------------------------------- richardson


def richardson_extrapolate(coarse: BermanEstimate, fine: BermanEstimate, order: float = 1.0) -> BermanEstimate:
    """Extrapolate a step pair ``(h, h/2)`` assuming error ``~ h^order``."""
    if coarse.representation != fine.representation or coarse.x != fine.x:
        raise MismatchedConfig("estimates differ in representation or x")
    dc = {k: v for k, v in coarse.discretization.items() if k != "step"}
    df = {k: v for k, v in fine.discretization.items() if k != "step"}
    if dc != df:
        raise MismatchedConfig(f"estimates differ beyond the step: {dc} vs {df}")
    hc, hf = coarse.discretization["step"], fine.discretization["step"]
    if hc == hf:
        if coarse.estimate != fine.estimate:
            raise MismatchedConfig("same step but different estimates")
        return coarse
    r = hc / hf
    if not math.isclose(r, 2.0, rel_tol=1e-9):
        raise MismatchedConfig(f"step ratio {r} is not 2")
    f = r**order
    est = (f * fine.estimate - coarse.estimate) / (f - 1)
    se = math.sqrt((f * fine.stderr) ** 2 + coarse.stderr**2) / (f - 1)
    disc = dict(coarse.discretization, step=[hc, hf], order=order)
    diag = {"raw": [coarse.estimate, fine.estimate], "raw_stderr": [coarse.stderr, fine.stderr]}
    return BermanEstimate(coarse.x, est, se, coarse.n_samples + fine.n_samples, coarse.representation, disc, diag)

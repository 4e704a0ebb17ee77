"""The quadratic program  min x^T Sigma^{-1} x  subject to  x >= b.

For SPD ``Sigma`` and ``b`` with a positive component the minimiser is unique
and is determined by an index set ``I``: on ``I`` the constraint is active,
``aleph_I = Sigma_II^{-1} b_I > 0``, and on the complement ``J`` the
solution is the regression ``Sigma_JI Sigma_II^{-1} b_I >= b_J``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import nnls

from .errors import AllNonpositive, Degenerate, NotSPD, ValidationError

FEAS_TOL = 1e-10
MAX_ENUM_DIM = 12


@dataclass(frozen=True)
class QPSolution:
    b_tilde: np.ndarray
    index_I: tuple[int, ...]
    index_J: tuple[int, ...]
    aleph: np.ndarray
    tau: float

    @property
    def savage(self) -> bool:
        """True when every coordinate is active, i.e. Sigma^{-1} b > 0."""
        return not self.index_J

    @property
    def w(self) -> np.ndarray:
        return self.aleph

    def to_dict(self) -> dict:
        return {
            "b_tilde": self.b_tilde.tolist(),
            "I": list(self.index_I),
            "J": list(self.index_J),
            "aleph": self.aleph.tolist(),
            "tau": self.tau,
        }


def as_spd(sigma, tol: float = 1e-12) -> np.ndarray:
    """Validate and return ``sigma`` as a float SPD matrix."""
    s = np.atleast_2d(np.asarray(sigma, dtype=float))
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] == 0:
        raise NotSPD(f"sigma must be a non-empty square matrix, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise NotSPD("sigma has non-finite entries")
    scale = max(np.abs(s).max(), 1.0)
    if np.abs(s - s.T).max() > tol * scale:
        raise NotSPD("sigma is not symmetric")
    s = 0.5 * (s + s.T)
    if np.linalg.eigvalsh(s)[0] <= 0:
        raise NotSPD("sigma has a non-positive eigenvalue")
    return s


def _check_b(b, d: int) -> np.ndarray:
    b = np.asarray(b, dtype=float).ravel()
    if b.shape != (d,):
        raise ValidationError(f"b must have length {d}, got {b.size}")
    if not np.any(b > 0):
        raise AllNonpositive("b has no strictly positive component")
    return b


def _candidate(sigma: np.ndarray, b: np.ndarray, index_I: tuple[int, ...]):
    d = b.size
    I = np.array(index_I)
    J = np.setdiff1d(np.arange(d), I)
    c = cho_factor(sigma[np.ix_(I, I)])
    aleph_I = cho_solve(c, b[I])
    b_tilde = b.copy()
    if J.size:
        b_tilde[J] = sigma[np.ix_(J, I)] @ aleph_I
    aleph = np.zeros(d)
    aleph[I] = aleph_I
    tau = float(b[I] @ aleph_I)
    return b_tilde, aleph, tau, J


def _feasible(b: np.ndarray, b_tilde: np.ndarray, aleph: np.ndarray, index_I, J) -> bool:
    slack = FEAS_TOL * max(np.linalg.norm(aleph), 1e-300)
    if np.any(aleph[list(index_I)] <= -slack):
        return False
    if J.size:
        bslack = FEAS_TOL * max(np.abs(b).max(), 1.0)
        if np.any(b_tilde[J] < b[J] - bslack):
            return False
    return True


def _bundle(sigma, b, index_I) -> QPSolution:
    b_tilde, aleph, tau, J = _candidate(sigma, b, index_I)
    return QPSolution(b_tilde, tuple(int(i) for i in index_I), tuple(int(j) for j in J), aleph, tau)


def _enumerate(sigma: np.ndarray, b: np.ndarray) -> QPSolution:
    # largest sets first: a boundary tie then resolves toward the larger I
    d = b.size
    for m in range(d, 0, -1):
        for index_I in combinations(range(d), m):
            if not np.any(b[list(index_I)] > 0):
                continue
            b_tilde, aleph, tau, J = _candidate(sigma, b, index_I)
            if tau > 0 and _feasible(b, b_tilde, aleph, index_I, J):
                return QPSolution(b_tilde, index_I, tuple(int(j) for j in J), aleph, tau)
    raise Degenerate("no index set satisfies both feasibility conditions")


def _active_set(sigma: np.ndarray, b: np.ndarray) -> QPSolution:
    # dual: min 0.5 a^T Sigma a - b^T a over a >= 0, i.e. NNLS with L^T a ~ L^{-1} b
    L = np.linalg.cholesky(sigma)
    rhs = np.linalg.solve(L, b)
    a, _ = nnls(L.T, rhs)
    thresh = FEAS_TOL * max(np.abs(a).max(), 1e-300)
    index_I = tuple(int(i) for i in np.flatnonzero(a > thresh))
    if not index_I:
        raise Degenerate("active-set iteration returned an empty support")
    b_tilde, aleph, tau, J = _candidate(sigma, b, index_I)
    if not _feasible(b, b_tilde, aleph, index_I, J):
        raise Degenerate("active-set support fails the feasibility check")
    return QPSolution(b_tilde, index_I, tuple(int(j) for j in J), aleph, tau)


def solve_pi(sigma, b, method: str = "auto") -> QPSolution:
    """Solve the program and return its determining index set, ``aleph`` and ``tau``.

    ``method`` is ``"enumerate"`` (subset scan, largest sets first),
    ``"active_set"`` (Lawson-Hanson NNLS on the dual) or ``"auto"``, which
    enumerates up to dimension 12.
    """
    sigma = as_spd(sigma)
    b = _check_b(b, sigma.shape[0])
    if method == "auto":
        method = "enumerate" if b.size <= MAX_ENUM_DIM else "active_set"
    if method == "enumerate":
        return _enumerate(sigma, b)
    if method == "active_set":
        return _active_set(sigma, b)
    raise ValueError(f"unknown method {method!r}")


def brute_force_pi(sigma, b) -> QPSolution:
    """Reference solver: evaluate every non-empty subset and insist on uniqueness.

    Candidates that pass feasibility must all attain the same optimal value;
    the largest such set is returned (boundary ties count toward ``I``).
    """
    sigma = as_spd(sigma)
    b = _check_b(b, sigma.shape[0])
    d = b.size
    if d > MAX_ENUM_DIM:
        raise ValidationError(f"brute force limited to d <= {MAX_ENUM_DIM}")
    feasible = []
    for m in range(1, d + 1):
        for index_I in combinations(range(d), m):
            if not np.any(b[list(index_I)] > 0):
                continue
            b_tilde, aleph, tau, J = _candidate(sigma, b, index_I)
            if tau > 0 and _feasible(b, b_tilde, aleph, index_I, J):
                feasible.append((index_I, tau))
    if not feasible:
        raise Degenerate("no index set satisfies both feasibility conditions")
    taus = np.array([t for _, t in feasible])
    if np.ptp(taus) > 1e-8 * taus.max():
        raise Degenerate(f"feasible candidates disagree on tau: {taus}")
    best = max(feasible, key=lambda c: (len(c[0]), -c[1]))[0]
    return _bundle(sigma, b, best)


def min_ratio_dual(sigma, b) -> float:
    """min over z >= 0 with z^T b > 0 of  z^T Sigma z / (z^T b)^2, which equals 1/tau."""
    return 1.0 / solve_pi(sigma, b).tau


def kkt_residuals(sigma, b, sol: QPSolution) -> dict:
    """Residuals of the identities that tie the projection to aleph and tau."""
    sigma = np.asarray(sigma, dtype=float)
    b = np.asarray(b, dtype=float)
    I = list(sol.index_I)
    scale = max(1.0, sol.tau)
    sinv_bt = np.linalg.solve(sigma, sol.b_tilde)
    return {
        "complementarity": abs(float(sol.aleph @ (sol.b_tilde - b))) / scale,
        "aleph_is_sinv_btilde": float(np.abs(sinv_bt - sol.aleph).max()) / max(1.0, np.abs(sol.aleph).max()),
        "tau_forms": max(
            abs(float(sol.b_tilde @ sinv_bt) - sol.tau),
            abs(float(sol.aleph @ sol.b_tilde) - sol.tau),
            abs(float(sol.aleph[I] @ b[I]) - sol.tau),
        ) / scale,
        "btilde_I_equals_b_I": float(np.abs(sol.b_tilde[I] - b[I]).max()),
        "feasibility": float(max(0.0, (b - sol.b_tilde).max())),
    }

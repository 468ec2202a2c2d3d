"""
Exact pair correlations of the invariant state of a constant-length system.

The joint law of (x_1, x_n) is obtained by ancestral recursion: both
coordinates are images of their parents 1 and ⌈n/L⌉ one substitution step
earlier. Distinct parents draw their rules independently, so the pair law
composes through level matrices; once the parents coincide the recursion
ends on the one-site invariant marginal.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np

from substlab_config import settings

from ..errors import ModelError, UnsupportedStructureError
from ..schema.models import SubstitutionSystem
from ..schema.report_models import CorrelationEntry, CorrelationReport
from .measures import MarginalFamily
from .operator import invariant_family
from .primitivity import matrix_primitive
from .substitution import require_constant_length

logger = logging.getLogger(__name__)

DEVIATION_FLOOR = 1e-13


class LevelMatrix(NamedTuple):
    entries: np.ndarray  ## entries[a, c] = P(σ(c)_j = a) under ν_n
    n: int
    j: int


class BirkhoffCoefficient(NamedTuple):
    delta: float
    tau: float
    certified: bool


def level_matrix(system: SubstitutionSystem, n: int, j: int) -> LevelMatrix:
    return LevelMatrix(_level_entries(system, n, j), n, j)


@lru_cache(maxsize=1024)
def _level_entries(system: SubstitutionSystem, n: int, j: int) -> np.ndarray:
    L = require_constant_length(system, "level_matrix")
    if not 1 <= j <= L:
        raise ModelError(f"offset j must lie in 1..{L} (got {j})", field="j")
    if n < 1:
        raise ModelError(f"block position must be >= 1 (got {n})", field="n")
    size = system.alphabet_size
    M = np.zeros((size, size))
    for weight, rule in zip(system.law.at(n), system.rules):
        for c, image in enumerate(rule.images):
            M[image[j - 1], c] += weight
    M.setflags(write=False)
    return M


def _same_parent_joint(system: SubstitutionSystem, q: np.ndarray, j: int) -> np.ndarray:
    """Law of (x_1, x_j) for j <= L: both symbols come from one rule applied to x_1."""
    size = system.alphabet_size
    J = np.zeros((size, size))
    for weight, rule in zip(system.law.at(1), system.rules):
        for c, image in enumerate(rule.images):
            J[image[0], image[j - 1]] += q[c] * weight
    return J


def pair_joint(system: SubstitutionSystem, invariant: MarginalFamily, n: int) -> np.ndarray:
    """J[a, b] = μ_ν([a]_1 ∩ [b]_n)."""
    L = require_constant_length(system, "pair_joint")
    if L < 2:
        raise UnsupportedStructureError("pair correlations need constant length L > 1", field="rules")
    if n < 1:
        raise ModelError(f"site must be >= 1 (got {n})", field="n")
    q = invariant.level(1)
    chain = []
    m = n
    while m > L:
        parent = math.ceil(m / L)
        chain.append((parent, (m - 1) % L + 1))
        m = parent
    J = np.diag(q) if m == 1 else _same_parent_joint(system, q, m)
    M11 = _level_entries(system, 1, 1)
    for parent, offset in reversed(chain):
        J = M11 @ J @ _level_entries(system, parent, offset).T
    return J


def pair_joint_from_family(family: MarginalFamily, n: int) -> np.ndarray:
    """Brute-force joint of (x_1, x_n) by summing v_n over the middle coordinates."""
    size = family.alphabet_size
    if n == 1:
        return np.diag(family.level(1))
    return family.level(n).reshape(size, size ** (n - 2), size).sum(axis=1)


def birkhoff_coefficient(M: Union[LevelMatrix, np.ndarray]) -> BirkhoffCoefficient:
    """
    δ = min sqrt(M(a,b)M(c,d) / (M(a,d)M(c,b))), τ = (1−δ)/(1+δ).
    A zero entry gives τ = 1, contraction not certified.
    """
    M = np.asarray(M.entries if isinstance(M, LevelMatrix) else M, dtype=float)
    if np.any(M <= 0.0):
        return BirkhoffCoefficient(0.0, 1.0, False)
    cross = (M[:, :, None, None] * M[None, None, :, :]) / (M[:, None, None, :] * M.T[None, :, :, None])
    delta = min(1.0, math.sqrt(float(cross.min())))
    return BirkhoffCoefficient(delta, (1.0 - delta) / (1.0 + delta), True)


def hilbert_metric(X: np.ndarray, Y: np.ndarray) -> float:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if np.any(X <= 0.0) or np.any(Y <= 0.0):
        return math.inf
    r = np.log(X) - np.log(Y)
    return float(r.max() - r.min())


def _path_constant(M: np.ndarray, q: np.ndarray, eta: float, index: int = 1, max_power: int = 64) -> float:
    """
    Largest observed |log(M^k(a,c)/q(a))|/η^k over k >= index, the constant of
    the geometric approach to q. Powers below the primitivity index still hold zeros.
    """
    if eta == 0.0:
        return 0.0
    best = 0.0
    P = np.eye(len(q))
    for k in range(1, max(max_power, index) + 1):
        P = M @ P
        if k < index or not np.all(P > 0.0):
            continue
        if eta ** k < 1e-14:
            break
        best = max(best, float(np.max(np.abs(np.log(P) - np.log(q)[:, None]))) / eta ** k)
    return best


def decay_profile(
    system: SubstitutionSystem,
    n_list: Sequence[int],
    invariant: Optional[MarginalFamily] = None,
) -> CorrelationReport:
    L = require_constant_length(system, "decay_profile")
    if L < 2:
        raise UnsupportedStructureError("correlation decay needs constant length L > 1", field="rules")
    M11 = _level_entries(system, 1, 1)
    primitive, index = matrix_primitive((M11 > 0).astype(np.int64))
    if not primitive:
        raise ModelError("first-letter transition matrix is not primitive", field="rules")
    if invariant is None:
        invariant = invariant_family(system, 1)
    q = invariant.level(1)
    names = system.alphabet.symbols

    with ThreadPoolExecutor(max_workers=settings.thread_count) as pool:
        joints = list(pool.map(lambda n: pair_joint(system, invariant, n), n_list))

    entries: List[CorrelationEntry] = []
    deviations = {}
    for n, J in zip(n_list, joints):
        qn = J.sum(axis=0)
        product = np.outer(q, qn)
        ratio = J / product
        deviations[n] = float(np.max(np.abs(ratio - 1.0)))
        for a in range(len(q)):
            for b in range(len(q)):
                entries.append(
                    CorrelationEntry(
                        n=n, a=names[a], b=names[b],
                        joint=float(J[a, b]),
                        marginal_product=float(product[a, b]),
                        ratio=float(ratio[a, b]),
                        abs_deviation=float(abs(ratio[a, b] - 1.0)),
                    )
                )

    birkhoff = birkhoff_coefficient(np.linalg.matrix_power(M11, index))
    eta = birkhoff.tau ** (1.0 / index)
    gamma = math.inf if eta == 0.0 else abs(math.log(eta) / math.log(L))
    C_v = _path_constant(M11, q, eta, index) if birkhoff.certified else math.inf
    C = 2.0 * C_v

    n0 = None
    bound_holds = None
    if math.isfinite(C_v):
        q0 = 0
        while C_v * eta ** q0 > 0.5:
            q0 += 1
        n0 = L ** q0
        checked = [n for n in deviations if n >= n0]
        if math.isinf(gamma):
            bound_holds = all(deviations[n] <= DEVIATION_FLOOR for n in checked)
        else:
            bound_holds = all(deviations[n] <= C * n ** -gamma + 1e-15 for n in checked)

    return CorrelationReport(
        entries=entries,
        gamma_hat=fit_decay_exponent(deviations, L),
        gamma_bound=gamma,
        eta=eta,
        tau=birkhoff.tau,
        delta=birkhoff.delta,
        primitivity_index=index,
        C_v=C_v,
        C=C,
        n0=n0,
        bound_holds=bound_holds,
    )


def fit_decay_exponent(deviations: dict, L: int) -> Optional[float]:
    """Least-squares slope of log deviation against log n over n = L^k, k >= 1."""
    points = [
        (math.log(n), math.log(dev))
        for n, dev in sorted(deviations.items())
        if n > 1 and _is_power(n, L) and dev > DEVIATION_FLOOR
    ]
    if len(points) < 2:
        return None
    x, y = np.array(points).T
    slope, _ = np.polyfit(x, y, 1)
    return float(-slope)


def _is_power(n: int, L: int) -> bool:
    while n % L == 0:
        n //= L
    return n == 1

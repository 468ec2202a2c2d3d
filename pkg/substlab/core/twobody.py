"""
Permutation models σ_b(a) = (π_a(b), a) and their Ising specialization.

Their invariant state is a hierarchical two-body Gibbs measure: site
2^{m-1}(2k-1) interacts only with 2^m k, so the sites form a binary tree
in which the parent of x is x + lowbit(x).
"""
import logging
import math
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from ..errors import ModelError, from_validation_error
from ..schema.models import (
    Alphabet,
    SubstitutionLaw,
    SubstitutionRule,
    SubstitutionSet,
    SubstitutionSystem,
    TwoBodyModel,
)
from .measures import ProbVector

logger = logging.getLogger(__name__)

STATIONARY_TOL = 1e-14


class PairGeometry(NamedTuple):
    n: int
    ell: int  ## min{ℓ : 2^ℓ >= n}
    k: int  ## zeros of the (ℓ+1)-digit binary expansion, mod ℓ
    hops: int  ## upward steps x -> x + lowbit(x) from n to 2^ℓ
    incident_pairs: Tuple[Tuple[int, int], ...]


def build_substitutions(model: TwoBodyModel) -> SubstitutionSystem:
    size = model.alphabet.size
    rules = tuple(
        SubstitutionRule(images=tuple((model.permutations[a][b], a) for a in range(size)))
        for b in range(size)
    )
    return SubstitutionSystem(
        substitutions=SubstitutionSet(alphabet=model.alphabet, rules=rules),
        law=SubstitutionLaw(kind="bernoulli", weights=(model.weights,)),
    )


def one_marginal_matrix(model: TwoBodyModel) -> np.ndarray:
    """M_ν(a', a) = p_ν(π_a^{-1}(a'))."""
    size = model.alphabet.size
    M = np.zeros((size, size))
    for a, table in enumerate(model.permutations):
        for b, target in enumerate(table):
            M[target, a] += model.weights[b]
    return M


def stationary_vector(model: TwoBodyModel, tol: float = STATIONARY_TOL, max_iter: int = 1_000_000) -> np.ndarray:
    """q_ν as the invariant vector of M_ν, by power iteration."""
    M = one_marginal_matrix(model)
    q = np.full(len(M), 1.0 / len(M))
    for _ in range(max_iter):
        nxt = M @ q
        if np.max(np.abs(nxt - q)) < tol:
            return nxt / nxt.sum()
        q = nxt
    logger.warning("stationary vector did not reach tolerance %.1e", tol)
    return q / q.sum()


def closed_form_invariant(model: TwoBodyModel, ell: int, q: Optional[np.ndarray] = None) -> ProbVector:
    """
    μ_ν on A^{2^ℓ}: q_ν of the last symbol times, for every pair
    (2^{m-1}(2k-1), 2^m k), the weight M_ν(lower symbol, upper symbol).
    Built level by level: the even sites of a 2^ℓ window carry the
    2^{ℓ-1} law, each odd site hangs off its right neighbour.
    """
    if ell < 0:
        raise ModelError(f"ell must be >= 0 (got {ell})", field="ell")
    size = model.alphabet.size
    M = one_marginal_matrix(model)
    T = stationary_vector(model) if q is None else np.asarray(q, dtype=float)
    for level in range(1, ell + 1):
        half = 2 ** (level - 1)
        T = T.reshape((size,) * half)
        for k in range(half):
            T = np.expand_dims(T, axis=2 * k)
            shape = [1] * T.ndim
            shape[2 * k] = size
            shape[2 * k + 1] = size
            T = T * M.reshape(shape)
    return ProbVector(2 ** ell, T.reshape(-1), size)


def lowbit(n: int) -> int:
    return n & -n


def incident_pairs(n: int) -> Tuple[Tuple[int, int], ...]:
    """Pairs {2^{m-1}(2k-1), 2^m k} containing n; the upward pair is infinite in extent and listed last."""
    pairs = []
    # n as the upper end 2^m k pairs with 2^m k - 2^{m-1} for m = 1..v(n)
    v = (lowbit(n)).bit_length() - 1
    for m in range(v, 0, -1):
        pairs.append((n - 2 ** (m - 1), n))
    # n = 2^{m-1}(2k-1) as the lower end pairs with n + lowbit(n)
    pairs.append((n, n + lowbit(n)))
    return tuple(pairs)


def pair_geometry(n: int) -> PairGeometry:
    if n < 1:
        raise ModelError(f"site must be >= 1 (got {n})", field="n")
    ell = (n - 1).bit_length()
    zeros = format(n, f"0{ell + 1}b").count("0")
    k = zeros % ell if ell > 0 else 0
    hops = 0
    x = n
    while x < 2 ** ell:
        x += lowbit(x)
        hops += 1
    return PairGeometry(n, ell, k, hops, incident_pairs(n))


def exact_pair_ratio(model: TwoBodyModel, a: int, b: int, n: int, q: Optional[np.ndarray] = None) -> float:
    """
    μ_ν([a]_1 ∩ [b]_n) / (q(a) q(b)): both sites descend from site 2^{ℓ(n)}
    through ℓ(n) and hops(n) pair links respectively.
    """
    q = stationary_vector(model) if q is None else q
    geometry = pair_geometry(n)
    if n == 1:
        return float((a == b) / q[a])
    M = one_marginal_matrix(model)
    up = np.linalg.matrix_power(M, geometry.ell)
    side = np.linalg.matrix_power(M, geometry.hops)
    return float(np.sum(up[a, :] * side[b, :] * q) / (q[a] * q[b]))


def pair_ratio_table(model: TwoBodyModel, sites: Sequence[int]) -> List[Tuple[int, int, int, float]]:
    q = stationary_vector(model)
    size = model.alphabet.size
    return [
        (n, a, b, exact_pair_ratio(model, a, b, n, q))
        for n in sites
        for a in range(size)
        for b in range(size)
    ]


def decay_constant(model: TwoBodyModel) -> float:
    """C = (p_max/p_min)^{2/(Δp − Δp²)} − 1; 0 for uniform weights."""
    dp = model.delta_p
    if dp == 0.0:
        return 0.0
    try:
        return math.pow(model.p_max / model.p_min, 2.0 / (dp - dp * dp)) - 1.0
    except OverflowError:
        return math.inf


def decay_exponent(model: TwoBodyModel) -> float:
    """|log2 Δp|; inf when Δp = 0."""
    dp = model.delta_p
    return math.inf if dp == 0.0 else abs(math.log2(dp))


def projective_rate_bound(model: TwoBodyModel, ell: int, eps: float = 0.0) -> float:
    """
    (ε + log(p_max/p_min))·max_{a,b}|log(p(a)/q(b))| / log ℓ, the order of the
    projective convergence of the approximation scheme. Reported only.
    """
    if ell < 2:
        return math.inf
    q = stationary_vector(model)
    p = np.asarray(model.weights)
    spread = float(np.max(np.abs(np.log(p)[:, None] - np.log(q)[None, :])))
    return (eps + math.log(model.p_max / model.p_min)) * spread / math.log(ell)


def ising_model(p: float) -> TwoBodyModel:
    if not 0.0 < p < 1.0:
        raise ModelError(f"p must lie strictly between 0 and 1 (got {p})", field="p")
    try:
        return TwoBodyModel(
            alphabet=Alphabet(symbols=("0", "1")),
            permutations=((0, 1), (1, 0)),
            weights=(p, 1.0 - p),
        )
    except ValidationError as exc:
        raise from_validation_error(exc, "twobody") from None


# ======================================================
# PAIR POTENTIAL
# ======================================================

class PairPotential(NamedTuple):
    """
    Φ_{lower, {lower, upper}}(x) = −log M_ν(x_lower, x_upper) on the pairs
    {2^{m-1}(2k-1), 2^m k}; zero on every other set.
    """
    model: TwoBodyModel
    table: np.ndarray  ## −log M_ν

    def pair_value(self, lower: int, upper: int, config: Sequence[int]) -> float:
        return float(self.table[config[lower - 1], config[upper - 1]])

    def pairs_within(self, window: int) -> List[Tuple[int, int]]:
        return [(n, n + lowbit(n)) for n in range(1, window + 1) if n + lowbit(n) <= window]

    def local_potential(self, n: int, config: Sequence[int]) -> float:
        """Sum over the pairs at n that fit inside the configuration."""
        return sum(
            self.pair_value(lo, hi, config)
            for lo, hi in incident_pairs(n)
            if hi <= len(config)
        )

    def total_energy(self, sites: Sequence[int], config: Sequence[int]) -> float:
        """H_Λ: every pair meeting Λ counted once."""
        chosen = set(sites)
        return sum(
            self.pair_value(lo, hi, config)
            for lo, hi in self.pairs_within(len(config))
            if lo in chosen or hi in chosen
        )

    def conditional(self, sites: Sequence[int], config: Sequence[int]) -> np.ndarray:
        """exp(−H_Λ) normalized over the symbols at `sites`, the rest of config fixed."""
        size = self.model.alphabet.size
        base = list(config)
        energies = []
        for choice in np.ndindex(*([size] * len(sites))):
            for s, symbol in zip(sites, choice):
                base[s - 1] = symbol
            energies.append(self.total_energy(sites, base))
        energies = np.asarray(energies)
        weights = np.exp(-(energies - energies.min()))
        return weights / weights.sum()

    def oscillation(self) -> float:
        return float(self.table.max() - self.table.min())


def pair_potential(model: TwoBodyModel) -> PairPotential:
    return PairPotential(model, -np.log(one_marginal_matrix(model)))

"""
The random substitution operator on marginal families.

Constant-length sets are handled in factorized form: the image of a word
of length N depends only on its first K = ceil(N/L) symbols, each symbol
is replaced independently under its position law, so M_N is a Kronecker
product of per-block kernels followed by a sum over the unused input
symbols. Non-constant sets fall back to an explicit enumeration of rule
prefixes, shared across input words.
"""
import logging
import math
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from substlab_config import settings

from ..errors import BudgetExceededError, ConvergenceError, ModelError
from ..schema.models import SubstitutionSystem
from .measures import (
    MarginalFamily,
    ProductMeasureSpec,
    consistency_defect,
    family_from_top,
    marginalize,
    projective_distance,
    vague_distance,
)
from .substitution import require_constant_length, word_index

logger = logging.getLogger(__name__)


class TransitionMatrix(NamedTuple):
    """Column-stochastic M_N; rows are output words, columns input words."""
    matrix: sparse.csc_matrix
    n_in: int
    n_out: int
    start: int = 1

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


class ApproximationRecord(NamedTuple):
    ell: int
    family: MarginalFamily
    vague_distance: float
    projective_distance: float
    residual: float
    long_block_excess: float  ## max over lengths of max|log ratio| − n·ρ_trunc(μ0, μ_ν)
    long_block_ok: bool


class ApproximationReport(NamedTuple):
    depth: int
    rho0: float  ## truncated ρ(μ0, μ_ν)
    records: Tuple[ApproximationRecord, ...]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "ell": [r.ell for r in self.records],
                "vague_distance": [r.vague_distance for r in self.records],
                "projective_distance": [r.projective_distance for r in self.records],
                "residual": [r.residual for r in self.records],
            }
        )


class BlockInteraction(NamedTuple):
    """Φ^{(ℓ)} on generation-ℓ blocks, indexed by the block word."""
    ell: int
    L: int
    alphabet_size: int
    values: np.ndarray

    @property
    def block_size(self) -> int:
        return self.L ** self.ell

    def value(self, n: int, word: Sequence[int]) -> float:
        """Φ^{(ℓ)}_{n,B(n,ℓ)} evaluated on the symbols of B(n,ℓ)."""
        if n < 1 or len(word) != self.block_size:
            raise ModelError(f"block word must have length {self.block_size}", field="word")
        return float(self.values[word_index(word, self.alphabet_size)])


# ======================================================
# BUDGETS
# ======================================================

def check_state_budget(size: int, N: int, budget: Optional[int] = None) -> None:
    if budget is None:
        budget = settings.STATE_BUDGET
    required = size ** N
    if required > budget:
        raise BudgetExceededError("state budget", required, budget)


def check_matrix_budget(system: SubstitutionSystem, N: int, budget: Optional[int] = None) -> None:
    if budget is None:
        budget = settings.MATRIX_BUDGET
    S = system.substitutions
    required = system.alphabet_size ** N * S.size ** math.ceil(N / S.min_length)
    if required > budget:
        raise BudgetExceededError("matrix budget", required, budget)


# ======================================================
# KERNELS
# ======================================================

@lru_cache(maxsize=256)
def block_kernel(system: SubstitutionSystem, position: int, keep: Optional[int] = None) -> np.ndarray:
    """
    P(w|c) = Σ_σ ν_position(σ)[σ(c) = w] for a constant-length set, shape
    (|A|^keep, |A|); with keep < L the trailing image symbols are summed out.
    """
    L = system.substitutions.max_length
    size = system.alphabet_size
    keep = L if keep is None else keep
    kernel = np.zeros((size ** keep, size))
    for weight, rule in zip(system.law.at(position), system.rules):
        for c, image in enumerate(rule.images):
            kernel[word_index(image[:keep], size), c] += weight
    return kernel


def _block_plan(system: SubstitutionSystem, N: int, start: int = 1):
    L = system.substitutions.max_length
    K = math.ceil(N / L)
    return [
        block_kernel(system, start + k, L if k < K - 1 else N - L * (K - 1))
        for k in range(K)
    ]


def _factorized_step(system: SubstitutionSystem, v: np.ndarray, N: int) -> np.ndarray:
    size = system.alphabet_size
    kernels = _block_plan(system, N)
    K = len(kernels)
    # only the first K symbols of the input matter
    T = v.reshape(size ** K, size ** (N - K)).sum(axis=1).reshape(size, -1)
    for k, P in enumerate(kernels):
        T = (P @ T).T
        if k < K - 1:
            T = T.reshape(size, -1)
    return T.reshape(-1)


# ======================================================
# TRANSITION MATRICES
# ======================================================

def build_transition_matrix(system: SubstitutionSystem, N: int, budget: Optional[int] = None) -> TransitionMatrix:
    if N < 1:
        raise ModelError(f"depth must be >= 1 (got {N})", field="N")
    check_matrix_budget(system, N, budget)
    size = system.alphabet_size
    if system.substitutions.constant_length:
        kernels = _block_plan(system, N)
        Q = sparse.csc_matrix(np.ones((1, 1)))
        for P in kernels:
            Q = sparse.kron(Q, sparse.csc_matrix(P), format="csc")
        M = sparse.kron(Q, np.ones((1, size ** (N - len(kernels)))), format="csc")
    else:
        M = _enumerated_matrix(system, N)
    return TransitionMatrix(M, N, N)


def _enumerated_matrix(system: SubstitutionSystem, N: int) -> sparse.csc_matrix:
    """
    Depth-first enumeration of (input prefix, rule prefix) pairs until the
    produced image covers N symbols; the remaining input symbols are free.
    """
    size = system.alphabet_size
    rows, cols, vals = [], [], []
    # (input symbols used, input prefix index, produced image, probability)
    stack = [(0, 0, (), 1.0)]
    while stack:
        used, prefix, image, prob = stack.pop()
        if len(image) >= N:
            free = size ** (N - used)
            target = word_index(image[:N], size)
            rows.extend([target] * free)
            cols.extend(range(prefix * free, (prefix + 1) * free))
            vals.extend([prob] * free)
            continue
        weights = system.law.at(used + 1)
        for c in range(size):
            for weight, rule in zip(weights, system.rules):
                stack.append((used + 1, prefix * size + c, image + rule.images[c], prob * weight))
    M = sparse.coo_matrix((vals, (rows, cols)), shape=(size ** N, size ** N))
    return M.tocsc()


@lru_cache(maxsize=32)
def _cached_matrix(system: SubstitutionSystem, N: int) -> sparse.csc_matrix:
    return build_transition_matrix(system, N).matrix


def operator_step(system: SubstitutionSystem, v: np.ndarray, N: int) -> np.ndarray:
    """M_N v for a level-N vector."""
    if system.substitutions.constant_length:
        return _factorized_step(system, v, N)
    return _cached_matrix(system, N) @ v


def apply_operator(system: SubstitutionSystem, f: MarginalFamily) -> MarginalFamily:
    top = operator_step(system, f.level(f.depth), f.depth)
    return family_from_top(top, f.alphabet_size, f.depth)


# ======================================================
# INVARIANT STATE
# ======================================================

def level_residuals(diff: np.ndarray, size: int, depth: int) -> Tuple[float, ...]:
    """sup-norms of a top-level difference after marginalizing to each level."""
    out = []
    for _ in range(depth):
        out.append(float(np.max(np.abs(diff))))
        diff = marginalize(diff, size)
    return tuple(reversed(out))


def _check_consistency(family: MarginalFamily, iteration: int) -> None:
    if family.depth < 2:
        return
    defect = consistency_defect(family)
    if defect >= settings.CONSISTENCY_TOL:
        raise ConvergenceError(
            f"invariant levels are not consistent, defect is {defect:e}",
            residual=defect,
            iterations=iteration,
        )


def invariant_family(
    system: SubstitutionSystem,
    N_max: int,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    start: Optional[np.ndarray] = None,
) -> MarginalFamily:
    """
    Perron vectors v_1..v_{N_max} by power iteration from the uniform vector.
    Stops when ‖M_N v − v‖_∞ < tol at every level.
    """
    if tol is None:
        tol = settings.POWER_TOL
    if max_iter is None:
        max_iter = settings.POWER_MAX_ITER
    if tol <= 0:
        raise ModelError("tolerance must be positive", field="tol")
    if max_iter < 1:
        raise ModelError(f"max_iter must be >= 1 (got {max_iter})", field="max_iter")
    if N_max < 1:
        raise ModelError(f"N_max must be >= 1 (got {N_max})", field="N_max")
    size = system.alphabet_size
    check_state_budget(size, N_max)
    if not system.substitutions.constant_length:
        check_matrix_budget(system, N_max)

    v = np.full(size ** N_max, 1.0 / size ** N_max) if start is None else np.asarray(start, dtype=float)
    residual = math.inf
    for iteration in range(1, max_iter + 1):
        w = operator_step(system, v, N_max)
        residual = max(level_residuals(w - v, size, N_max))
        if residual < tol:
            logger.info(
                "invariant family converged: N_max=%d iterations=%d residual=%.3e", N_max, iteration, residual
            )
            family = family_from_top(v, size, N_max)
            _check_consistency(family, iteration)
            return family
        if iteration % 1000 == 0:
            logger.debug("power iteration %d residual %.3e", iteration, residual)
        v = w
    raise ConvergenceError(
        f"power iteration did not converge after {max_iter} iterations, residual is {residual:e}",
        residual=residual,
        iterations=max_iter,
    )


def invariance_residual(system: SubstitutionSystem, f: MarginalFamily) -> float:
    diff = operator_step(system, f.level(f.depth), f.depth) - f.level(f.depth)
    return max(level_residuals(diff, f.alphabet_size, f.depth))


# ======================================================
# APPROXIMATION SCHEME
# ======================================================

def approximation_scheme(
    system: SubstitutionSystem,
    mu0: ProductMeasureSpec,
    ell_max: int,
    N: int,
    invariant: Optional[MarginalFamily] = None,
) -> ApproximationReport:
    """
    Iterates μ^{(ℓ)} = 𝕊^ℓ μ0 at depth N and compares each iterate with the
    invariant family. The long-block check verifies that every cylinder
    ratio μ^{(ℓ)}[a]/μ_ν[a] lies within exp(±⌈|a|/L^ℓ⌉·ρ_trunc(μ0, μ_ν)).
    """
    L = require_constant_length(system, "approximation_scheme")
    for n, u in enumerate(mu0.one_marginals + (mu0.default,), start=1):
        if np.any(np.asarray(u) <= 0):
            raise ModelError("initial product measure must be strictly positive", field=f"mu0[{n}]")
    size = system.alphabet_size
    check_state_budget(size, N)
    if invariant is None or invariant.depth < N:
        invariant = invariant_family(system, N)
    invariant = invariant.truncate(N)

    start = mu0.family(N)
    rho0 = projective_distance(start, invariant, N)
    records = []
    v = start.level(N)
    for ell in range(ell_max + 1):
        fam = family_from_top(v, size, N)
        step = operator_step(system, v, N)
        residual = max(level_residuals(step - v, size, N))
        excess = -math.inf
        for k in range(1, N + 1):
            n = math.ceil(k / L ** ell)
            ratio = np.max(np.abs(np.log(fam.level(k)) - np.log(invariant.level(k))))
            excess = max(excess, float(ratio) - n * rho0)
        records.append(
            ApproximationRecord(
                ell=ell,
                family=fam,
                vague_distance=vague_distance(fam, invariant, N).value,
                projective_distance=projective_distance(fam, invariant, N),
                residual=residual,
                long_block_excess=excess,
                long_block_ok=excess <= 1e-12,
            )
        )
        logger.debug("approximation ell=%d residual=%.3e", ell, residual)
        v = step
    return ApproximationReport(N, rho0, tuple(records))


# ======================================================
# BLOCK INTERACTIONS
# ======================================================

def block_interaction(mu_ell: MarginalFamily, ell: int, L: int) -> BlockInteraction:
    """Φ^{(ℓ)}_{n,B(n,ℓ)}(a) = −L^{−ℓ} log μ^{(ℓ)}[a_{B(n,ℓ)}]; zero probabilities give inf."""
    if L < 1 or ell < 0:
        raise ModelError("block interaction needs L >= 1 and ell >= 0", field="ell")
    size = L ** ell
    if mu_ell.depth < size:
        raise ModelError(f"family depth {mu_ell.depth} below block size {size}", field="depth")
    with np.errstate(divide="ignore"):
        values = -np.log(mu_ell.level(size)) / size
    return BlockInteraction(ell, L, mu_ell.alphabet_size, values)


def block_conditional(interaction: BlockInteraction, sites: Sequence[int], context: Sequence[int]) -> np.ndarray:
    """
    Conditional law of the block positions `sites` (1-based, inside one
    generation-ℓ block) given the other symbols of `context`, from the block
    potential. Outcomes are ordered as words over the sites.
    """
    size = interaction.alphabet_size
    width = interaction.block_size
    if len(context) != width:
        raise ModelError(f"context must cover the block of {width} sites", field="context")
    if any(not 1 <= s <= width for s in sites):
        raise ModelError(f"sites must lie in 1..{width}", field="sites")
    base = list(context)
    energies = []
    for choice in np.ndindex(*([size] * len(sites))):
        for s, symbol in zip(sites, choice):
            base[s - 1] = symbol
        energies.append(width * interaction.value(1, base))
    energies = np.asarray(energies)
    weights = np.exp(-(energies - np.min(energies)))
    return weights / weights.sum()

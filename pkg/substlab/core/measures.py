"""
Finite-depth measures on A^N: marginal families, product measures, the
vague distance D and the (truncated) projective distance ρ.

Vectors stay in the linear domain. The state budget caps |A|^N at 2**20,
so the smallest representable cylinder probability under full support is
far above the float64 underflow threshold.
"""
import logging
import math
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..errors import ModelError
from ..schema.models import Alphabet, SubstitutionLaw, SubstitutionSystem
from .substitution import all_words, has_bundle_structure

logger = logging.getLogger(__name__)


class ProbVector(NamedTuple):
    depth: int
    probabilities: np.ndarray
    alphabet_size: int


class MarginalFamily(NamedTuple):
    """Levels v_1..v_{N_max}; levels[N-1] is indexed by words of length N."""
    alphabet_size: int
    levels: Tuple[np.ndarray, ...]

    @property
    def depth(self) -> int:
        return len(self.levels)

    def level(self, N: int) -> np.ndarray:
        if N == 0:
            return np.ones(1)
        if not 1 <= N <= self.depth:
            raise ModelError(f"depth {N} outside family horizon 1..{self.depth}", field="N")
        return self.levels[N - 1]

    def vector(self, N: int) -> ProbVector:
        return ProbVector(N, self.level(N), self.alphabet_size)

    def truncate(self, N: int) -> "MarginalFamily":
        return MarginalFamily(self.alphabet_size, self.levels[:N])


class ProductMeasureSpec(NamedTuple):
    one_marginals: Tuple[np.ndarray, ...]  ## positions 1..horizon
    default: np.ndarray

    def at(self, n: int) -> np.ndarray:
        return self.one_marginals[n - 1] if n <= len(self.one_marginals) else self.default

    def family(self, depth: int) -> MarginalFamily:
        levels = []
        v = np.ones(1)
        for n in range(1, depth + 1):
            v = np.kron(v, self.at(n))
            levels.append(v)
        return MarginalFamily(len(self.default), tuple(levels))


class VagueDistance(NamedTuple):
    value: float
    tail_bound: float


class BoundednessReport(NamedTuple):
    applicable: bool
    bundle_structure: Optional[bool]
    dispersion: float
    bound: Optional[float]


def marginalize(v: np.ndarray, size: int) -> np.ndarray:
    """Sums out the last coordinate."""
    return v.reshape(-1, size).sum(axis=1)


def family_from_top(top: np.ndarray, size: int, depth: int) -> MarginalFamily:
    levels = [np.asarray(top, dtype=float)]
    for _ in range(depth - 1):
        levels.append(marginalize(levels[-1], size))
    return MarginalFamily(size, tuple(reversed(levels)))


def uniform_product(size: int) -> ProductMeasureSpec:
    u = np.full(size, 1.0 / size)
    return ProductMeasureSpec((u,), u)


def consistency_defect(f: MarginalFamily) -> float:
    if f.depth < 2:
        raise ModelError("consistency needs at least two levels", field="N_max")
    return max(
        float(np.max(np.abs(marginalize(f.level(N + 1), f.alphabet_size) - f.level(N))))
        for N in range(1, f.depth)
    )


def vague_distance(f: MarginalFamily, g: MarginalFamily, N: int) -> VagueDistance:
    _check_depth(f, g, N)
    value = math.fsum(2.0 ** -k * float(np.abs(f.level(k) - g.level(k)).sum()) for k in range(1, N + 1))
    return VagueDistance(value, 2.0 ** (1 - N))


def projective_distance(f: MarginalFamily, g: MarginalFamily, N: int) -> float:
    """
    max over k <= N and words a in A^k of |log(f_k(a)/g_k(a))| / k.
    A lower bound for ρ, nondecreasing in N; inf on any zero entry.
    """
    _check_depth(f, g, N)
    best = 0.0
    for k in range(1, N + 1):
        x, y = f.level(k), g.level(k)
        if np.any(x <= 0.0) or np.any(y <= 0.0):
            return math.inf
        best = max(best, float(np.max(np.abs(np.log(x) - np.log(y)))) / k)
    return best


def law_dispersion(law: SubstitutionLaw) -> float:
    """sup_n ρ(ν_1, ν_n), exact over the finitely many distinct position laws."""
    first = np.log(np.asarray(law.at(1)))
    return max(float(np.max(np.abs(first - np.log(np.asarray(vec))))) for vec in law.distinct_laws())


def one_marginal(v: np.ndarray, size: int, depth: int, n: int) -> np.ndarray:
    """Distribution of coordinate n under the level-`depth` vector v."""
    return v.reshape(size ** (n - 1), size, size ** (depth - n)).sum(axis=(0, 2))


def product_from_one_marginals(f: MarginalFamily) -> Tuple[ProductMeasureSpec, MarginalFamily]:
    top = f.level(f.depth)
    marginals = tuple(one_marginal(top, f.alphabet_size, f.depth, n) for n in range(1, f.depth + 1))
    spec = ProductMeasureSpec(marginals, marginals[-1])
    return spec, spec.family(f.depth)


def boundedness_report(system: SubstitutionSystem) -> BoundednessReport:
    """
    Bundle structure, dispersion and the value L(L+1)·sup_n ρ(ν_1, ν_n).
    The value is reported, never used as an assertion.
    """
    dispersion = law_dispersion(system.law)
    S = system.substitutions
    if not S.constant_length:
        return BoundednessReport(False, None, dispersion, None)
    bundle = has_bundle_structure(S)
    L = S.max_length
    bound = L * (L + 1) * dispersion if bundle else None
    if bundle and dispersion == 0.0:
        logger.info("boundedness value is 0 for a position-independent law; reported only")
    return BoundednessReport(bundle, bundle, dispersion, bound)


def marginal_family_frame(f: MarginalFamily, alphabet: Alphabet, levels: Optional[Sequence[int]] = None) -> pd.DataFrame:
    """Columns word, probability, level; one row per word per level."""
    frames = []
    for N in levels or range(1, f.depth + 1):
        words = [alphabet.decode(w) for w in all_words(f.alphabet_size, N)]
        frames.append(pd.DataFrame({"word": words, "probability": f.level(N), "level": N}))
    return pd.concat(frames, ignore_index=True)


def _check_depth(f: MarginalFamily, g: MarginalFamily, N: int) -> None:
    if N < 1 or N > min(f.depth, g.depth):
        raise ModelError(f"depth {N} outside common horizon 1..{min(f.depth, g.depth)}", field="N")
    if f.alphabet_size != g.alphabet_size:
        raise ModelError("families over different alphabets", field="alphabet")

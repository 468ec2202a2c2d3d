"""
Primitivity of substitution sets: the one-symbol matrix, sliding symbols,
the sufficient condition built on them, and an exact check of the support
of M_N at small depth.
"""
import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from ..errors import ModelError
from ..schema.models import SubstitutionLaw, SubstitutionSet, SubstitutionSystem
from ..schema.report_models import BruteForceVerdict, PrimitivityReport, SlidingWitness
from .operator import build_transition_matrix, check_state_budget
from .substitution import index_word

logger = logging.getLogger(__name__)


def one_symbol_matrix(S: SubstitutionSet) -> np.ndarray:
    """M_S(a, b) = 1 iff some rule maps a to a word starting with b."""
    size = S.alphabet.size
    M = np.zeros((size, size), dtype=np.int64)
    for rule in S.rules:
        for a, image in enumerate(rule.images):
            M[a, image[0]] = 1
    return M


def _bool_power_step(P: np.ndarray, M: np.ndarray) -> np.ndarray:
    return ((P @ M) > 0).astype(np.int64)


def matrix_primitive(M: np.ndarray) -> Tuple[bool, Optional[int]]:
    """(True, smallest k with M^k > 0) or (False, None) past the Wielandt cap (n−1)² + 1."""
    M = (np.asarray(M) > 0).astype(np.int64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ModelError(f"expected a square matrix, got shape {M.shape}", field="matrix")
    n = M.shape[0]
    P = M.copy()
    for k in range(1, (n - 1) ** 2 + 2):
        if P.all():
            return True, k
        P = _bool_power_step(P, M)
    return False, None


def _covered_length(S: SubstitutionSet) -> Optional[int]:
    """Smallest q such that every word of length q is itself an image of some symbol."""
    pooled = {img for rule in S.rules for img in rule.images}
    size = S.alphabet.size
    for q in sorted({len(img) for img in pooled}):
        if sum(1 for img in pooled if len(img) == q) == size ** q:
            return q
    return None


def sliding_symbols(S: SubstitutionSet) -> List[Tuple[int, int, int]]:
    """
    (a, p, q) for every symbol a with a run a^{p+1} (p >= 1) among its images
    and whose images start with every symbol, provided the pooled images
    contain all of A^q. An image set that only covers A^q as prefixes does
    not qualify: {0→00, 1→10 | 0→10, 1→00} never writes 1 at position 2.
    """
    size = S.alphabet.size
    q = _covered_length(S)
    if q is None:
        return []
    witnesses = []
    for a in range(size):
        images = S.images_of(a)
        runs = [len(img) - 1 for img in images if len(img) >= 2 and all(s == a for s in img)]
        if not runs:
            continue
        if len({img[0] for img in images}) < size:
            continue
        witnesses.append((a, max(runs), q))
    return witnesses


def sufficient_check(S: SubstitutionSet, depth: int = 1) -> PrimitivityReport:
    """
    Primitive when the one-symbol matrix is primitive and a sliding symbol
    exists; inconclusive otherwise (the condition is sufficient only).
    """
    M = one_symbol_matrix(S)
    primitive, exponent = matrix_primitive(M)
    witnesses = sliding_symbols(S)
    names = S.alphabet.symbols
    verdict = "primitive" if primitive and witnesses else "inconclusive"
    index_formula = None
    if verdict == "primitive":
        p = max(w[1] for w in witnesses)
        index_formula = depth + 2 * exponent + math.log(depth) / math.log(1 + p)
    logger.debug("sufficient check: ms_primitive=%s witnesses=%d", primitive, len(witnesses))
    return PrimitivityReport(
        ms_matrix=M.tolist(),
        ms_primitive=primitive,
        ms_exponent=exponent,
        sliding_symbols=[SlidingWitness(symbol=names[a], p=p, q=q) for a, p, q in witnesses],
        sufficient_verdict=verdict,
        index_formula=index_formula,
    )


def prefix_support(S: SubstitutionSet, N: int, budget: Optional[int] = None) -> np.ndarray:
    """0/1 support of M_N: entry (a, b) is 1 iff some rule sequence maps b to a word with prefix a."""
    uniform = SubstitutionLaw(kind="bernoulli", weights=(tuple([1.0 / S.size] * S.size),))
    system = SubstitutionSystem(substitutions=S, law=uniform)
    M = build_transition_matrix(system, N, budget)
    return (M.dense() > 0).astype(np.int64)


def brute_force_primitive(S: SubstitutionSet, N: int, n_max: int, budget: Optional[int] = None) -> BruteForceVerdict:
    """
    Exact primitivity at depth N: the smallest n with (support of M_N)^{n'} > 0
    for every n' in [n, n_max], or a (target, source) pair that is still
    unreachable after n_max steps.
    """
    if N < 1 or n_max < 1:
        raise ModelError("depth and n_max must be >= 1", field="N")
    size = S.alphabet.size
    check_state_budget(size, N)
    support = prefix_support(S, N, budget)
    positive = []
    P = support.copy()
    for _ in range(n_max):
        positive.append(bool(P.all()))
        P = _bool_power_step(P, support)

    index = None
    for n in range(n_max, 0, -1):
        if not positive[n - 1]:
            break
        index = n
    if index is not None:
        return BruteForceVerdict(depth=N, n_max=n_max, primitive=True, index=index)

    # recompute the n_max-th power and report the first unreachable pair, source-major
    P = support.copy()
    for _ in range(n_max - 1):
        P = _bool_power_step(P, support)
    source, target = np.argwhere(P.T == 0)[0]
    names = S.alphabet
    return BruteForceVerdict(
        depth=N,
        n_max=n_max,
        primitive=False,
        counterexample=(
            names.decode(index_word(int(target), N, size)),
            names.decode(index_word(int(source), N, size)),
        ),
    )

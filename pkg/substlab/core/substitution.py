"""
Words, rule application and structural predicates of substitution sets.

Words of length N are indexed in base |A| with the first symbol most
significant, so that a level-(N+1) vector reshaped to (|A|^N, |A|) sums
over its last coordinate along axis 1.
"""
import itertools
import math
from typing import Sequence, Tuple

import numpy as np

from ..errors import ModelError, UnsupportedStructureError
from ..schema.models import SubstitutionLaw, SubstitutionRule, SubstitutionSet, SubstitutionSystem, Word


def apply_rules(rules: Sequence[SubstitutionRule], b: Word) -> Word:
    """s_1(b_1) s_2(b_2) ... s_N(b_N); rules beyond len(b) are ignored."""
    if len(rules) < len(b):
        raise ModelError(f"{len(rules)} rules for a word of length {len(b)}", field="rules")
    out = []
    for rule, symbol in zip(rules, b):
        if not 0 <= symbol < len(rule.images):
            raise ModelError(f"symbol index {symbol} outside alphabet of size {len(rule.images)}", field="word")
        out.extend(rule.images[symbol])
    return tuple(out)


def classify_lengths(S: SubstitutionSet) -> Tuple[int, int, bool]:
    return S.min_length, S.max_length, S.constant_length


def has_bundle_structure(S: SubstitutionSet) -> bool:
    """
    True iff for every symbol a the image set S(a) is the cartesian product
    of its per-position symbol sets.
    """
    if not S.constant_length:
        raise UnsupportedStructureError("bundle structure is defined for constant-length sets only", field="rules")
    L = S.max_length
    for a in range(S.alphabet.size):
        images = set(S.images_of(a))
        columns = [{img[j] for img in images} for j in range(L)]
        if math.prod(len(c) for c in columns) != len(images):
            return False
    return True


def law_cylinder_weight(law: SubstitutionLaw, start: int, rules: Sequence[int]) -> float:
    """ν[s] for the rule indices s placed at positions start, start+1, ..."""
    if start < 1:
        raise ModelError(f"start position must be >= 1 (got {start})", field="start")
    return math.prod(law.at(start + i)[r] for i, r in enumerate(rules))


def require_constant_length(system: SubstitutionSystem, operation: str) -> int:
    S = system.substitutions
    if not S.constant_length:
        raise UnsupportedStructureError(
            f"{operation} needs a constant-length substitution set (lengths {S.min_length}..{S.max_length})",
            field="rules",
        )
    return S.max_length


# ======================================================
# WORD INDEXING
# ======================================================

def word_index(word: Sequence[int], size: int) -> int:
    idx = 0
    for s in word:
        idx = idx * size + int(s)
    return idx


def index_word(index: int, length: int, size: int) -> Word:
    out = []
    for _ in range(length):
        index, r = divmod(index, size)
        out.append(r)
    return tuple(reversed(out))


def all_words(size: int, length: int) -> np.ndarray:
    """(size**length, length) array of every word in index order."""
    if length == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.product(range(size), repeat=length)), dtype=np.int64)


def word_indices(words: np.ndarray, size: int) -> np.ndarray:
    """Row-wise word_index of a 2-D integer array."""
    words = np.asarray(words, dtype=np.int64)
    weights = size ** np.arange(words.shape[1] - 1, -1, -1, dtype=np.int64)
    return words @ weights

import math
from typing import Any, Dict, Sequence, TypedDict

# MODEL TOLERANCES

class WeightPolicy(TypedDict):
    min_weight: float
    sum_tolerance: float


WEIGHT_POLICY: Dict[str, WeightPolicy] = {
    # every theorem assumes full support of ν
    "law": {"min_weight": 1e-9, "sum_tolerance": 1e-12},
    # two-body p_ν is a ν law in disguise
    "twobody": {"min_weight": 1e-9, "sum_tolerance": 1e-12},
}


def alphabet_validator(symbols: Sequence[str]) -> Dict[str, Any]:
    """
    Validates the symbol names of an alphabet.
    Returns a dict with the status and, on failure, the message.
    """
    # Layer 1: size
    if len(symbols) < 2:
        return {"valid": False, "error": f"alphabet needs at least 2 symbols (got {len(symbols)})"}

    # Layer 2: empty names
    for i, name in enumerate(symbols):
        if not isinstance(name, str) or not name:
            return {"valid": False, "error": f"symbol {i} has an empty or non-string name"}

    # Layer 3: duplicates
    seen = set()
    for name in symbols:
        if name in seen:
            return {"valid": False, "error": f"duplicate symbol name {name!r}"}
        seen.add(name)

    return {"valid": True, "size": len(symbols)}


def probability_vector_validator(weights: Sequence[float], policy: str = "law") -> Dict[str, Any]:
    """
    Validates a probability vector under the named policy.
    """
    config = WEIGHT_POLICY[policy]

    if len(weights) == 0:
        return {"valid": False, "error": "empty weight vector"}

    # Layer 1: finiteness
    for i, w in enumerate(weights):
        if not math.isfinite(w):
            return {"valid": False, "error": f"weight {i} is not finite ({w})"}

    # Layer 2: support
    low = min(weights)
    if low < config["min_weight"] or low < 0.0:
        return {
            "valid": False,
            "error": f"weight {list(weights).index(low)} = {low} violates full support (minimum {config['min_weight']})",
        }

    # Layer 3: normalization
    total = math.fsum(weights)
    if abs(total - 1.0) > config["sum_tolerance"]:
        return {
            "valid": False,
            "error": f"weights sum to {total!r}, not 1 within {config['sum_tolerance']}",
            "total": total,
        }

    return {"valid": True, "total": total}


def image_validator(image: Sequence[int], alphabet_size: int) -> Dict[str, Any]:
    """Rule image: non-empty, every index inside the alphabet."""
    if len(image) == 0:
        return {"valid": False, "error": "rule image is empty"}
    for i, s in enumerate(image):
        if not 0 <= s < alphabet_size:
            return {"valid": False, "error": f"symbol index {s} at image position {i} outside alphabet of size {alphabet_size}"}
    return {"valid": True, "length": len(image)}


def permutation_validator(table: Sequence[int], alphabet_size: int) -> Dict[str, Any]:
    """Permutation table π(b) for b = 0..|A|-1."""
    if len(table) != alphabet_size:
        return {"valid": False, "error": f"permutation has {len(table)} entries, alphabet has {alphabet_size}"}
    if sorted(table) != list(range(alphabet_size)):
        return {"valid": False, "error": f"{list(table)} is not a bijection of the alphabet"}
    return {"valid": True}

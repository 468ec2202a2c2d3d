import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(PROJECT_ROOT))

from substlab.core.operator import invariant_family  # noqa: E402
from substlab.core.twobody import build_substitutions, ising_model  # noqa: E402
from substlab.schema.models import (  # noqa: E402
    Alphabet,
    SubstitutionLaw,
    SubstitutionRule,
    SubstitutionSet,
    SubstitutionSystem,
    TwoBodyModel,
)

MODELS_DIR = PROJECT_ROOT / "models"


def make_system(symbols, rules, weights, kind="bernoulli", default=None) -> SubstitutionSystem:
    """rules: list of dicts symbol -> image string; weights as SubstitutionLaw takes them."""
    alphabet = Alphabet(symbols=tuple(symbols))
    parsed = tuple(
        SubstitutionRule(images=tuple(alphabet.encode(rule[s]) for s in alphabet.symbols))
        for rule in rules
    )
    if kind == "bernoulli" and not isinstance(weights[0], (list, tuple)):
        weights = [weights]
    return SubstitutionSystem(
        substitutions=SubstitutionSet(alphabet=alphabet, rules=parsed),
        law=SubstitutionLaw(
            kind=kind,
            weights=tuple(tuple(w) for w in weights),
            default=tuple(default) if default is not None else None,
        ),
    )


def random_twobody(rng: np.random.Generator, size: int) -> TwoBodyModel:
    """Random permutations and a weight vector bounded away from zero."""
    weights = rng.dirichlet(np.ones(size)) * 0.8 + 0.2 / size
    weights = weights / weights.sum()
    weights[-1] = 1.0 - weights[:-1].sum()
    return TwoBodyModel(
        alphabet=Alphabet(symbols=tuple(str(i) for i in range(size))),
        permutations=tuple(tuple(int(x) for x in rng.permutation(size)) for _ in range(size)),
        weights=tuple(float(w) for w in weights),
    )


def random_constant_length_system(rng: np.random.Generator, size: int = 2, L: int = 2, n_rules: int = 2) -> SubstitutionSystem:
    """Full-support random constant-length system whose rule images are arbitrary words."""
    symbols = [str(i) for i in range(size)]
    rules = [
        {s: "".join(str(x) for x in rng.integers(0, size, L)) for s in symbols}
        for _ in range(n_rules)
    ]
    weights = rng.dirichlet(np.ones(n_rules)) * 0.8 + 0.2 / n_rules
    weights = weights / weights.sum()
    weights[-1] = 1.0 - weights[:-1].sum()
    return make_system(symbols, rules, [float(w) for w in weights])


@pytest.fixture(scope="session")
def ising():
    return ising_model(0.75)


@pytest.fixture(scope="session")
def ising_system(ising):
    return build_substitutions(ising)


@pytest.fixture(scope="session")
def ising_invariant(ising_system):
    """Invariant family of Ising p=0.75 up to depth 16."""
    return invariant_family(ising_system, 16, tol=1e-13)


@pytest.fixture(scope="session")
def uniform_system():
    return build_substitutions(ising_model(0.5))


@pytest.fixture(scope="session")
def doubling_system():
    return make_system(["0", "1"], [{"0": "00", "1": "11"}], [1.0])


@pytest.fixture(scope="session")
def periodic_system():
    return make_system(
        ["a", "b"],
        [{"a": "ab", "b": "ba"}, {"a": "ba", "b": "ab"}],
        [[0.7, 0.3], [0.4, 0.6]],
        kind="periodic",
    )


@pytest.fixture(scope="session")
def mixed_length_system():
    return make_system(["a", "b"], [{"a": "ab", "b": "bba"}, {"a": "aab", "b": "ba"}], [0.5, 0.5])


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def models_dir():
    return MODELS_DIR

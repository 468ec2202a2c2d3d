"""
Forward random substitution dynamics.

Round t of sample j draws its uniforms from the stream keyed (seed, j, t),
so a sample does not depend on how many others are generated or in which
order. Before each round the word is cut to the symbols whose descendants
can still reach the window.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from substlab_config import settings

from ..errors import ConfigError, ModelError
from ..schema.models import SimulationConfig, SubstitutionSystem
from .measures import ProbVector
from .operator import invariant_family
from .substitution import word_indices

logger = logging.getLogger(__name__)

Samples = Union[np.ndarray, Sequence[Sequence[int]]]


class PairEstimate(NamedTuple):
    ratio: Optional[float]  ## None when an empirical marginal is zero
    standard_error: Optional[float]
    diagonal: bool  ## n = 1: both indicators read the same coordinate
    defined: bool


def required_iterations(system: SubstitutionSystem, window: int, initial_length: int) -> Optional[int]:
    """Smallest t with ℓ_S^t·|initial| >= window; None when no number of rounds suffices."""
    shortest = system.substitutions.min_length
    t, cover = 0, initial_length
    while cover < window:
        if shortest == 1:
            return None
        cover *= shortest
        t += 1
    return t


def default_iterations(system: SubstitutionSystem, window: int) -> int:
    needed = required_iterations(system, window, 1)
    return (needed or 0) + settings.MIXING_ROUNDS


def _initial_word(config: SimulationConfig, seed_key, q: Optional[np.ndarray], system: SubstitutionSystem) -> np.ndarray:
    if config.initial != "stationary-one-site":
        word = np.asarray(config.initial, dtype=np.int64)
        if word.min() < 0 or word.max() >= system.alphabet_size:
            raise ConfigError("initial word uses symbols outside the alphabet", field="initial")
        return word
    if q is None:
        q = invariant_family(system, 1).level(1)
    u = np.random.default_rng(seed_key + [0]).random()
    return np.array([min(int(np.searchsorted(np.cumsum(q), u, side="right")), len(q) - 1)], dtype=np.int64)


def _draw_rules(system: SubstitutionSystem, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF rule indices, position i of the word using ν's position-i law."""
    cumulative = np.cumsum(system.law.matrix(1, len(u)), axis=1)
    choice = (u[:, None] >= cumulative).sum(axis=1)
    return np.minimum(choice, system.law.n_rules - 1)


def generate(
    system: SubstitutionSystem,
    config: SimulationConfig,
    sample: int = 0,
    q: Optional[np.ndarray] = None,
) -> np.ndarray:
    """One sample: `iterations` rounds from the initial word, truncated to the window."""
    initial_length = 1 if config.initial == "stationary-one-site" else len(config.initial)
    iterations = default_iterations(system, config.window) if config.iterations is None else config.iterations
    needed = required_iterations(system, config.window, initial_length)
    if needed is None:
        raise ConfigError(
            f"window {config.window} unreachable: shortest image has length 1 and initial word has length {initial_length}",
            field="window",
        )
    if iterations < needed:
        raise ConfigError(
            f"window {config.window} needs at least {needed} iterations (got {iterations})",
            field="iterations",
        )

    seed_key = [config.seed, sample]
    word = _initial_word(config, seed_key, q, system)
    shortest = system.substitutions.min_length
    table = system.image_table
    for t in range(1, iterations + 1):
        keep = math.ceil(config.window / shortest ** (iterations - t + 1)) if shortest > 1 else config.window
        word = word[: max(keep, 1)]
        u = np.random.default_rng(seed_key + [t]).random(len(word))
        rules = _draw_rules(system, u)
        if table is not None:
            word = table[rules, word].reshape(-1)
        else:
            word = np.fromiter(
                (s for r, c in zip(rules, word) for s in system.rules[r].images[c]),
                dtype=np.int64,
            )
    return word[: config.window]


def generate_samples(system: SubstitutionSystem, config: SimulationConfig) -> np.ndarray:
    """(samples, window) array; row j equals generate(system, config, sample=j)."""
    q = invariant_family(system, 1).level(1) if config.initial == "stationary-one-site" else None
    with ThreadPoolExecutor(max_workers=settings.thread_count) as pool:
        rows = list(pool.map(lambda j: generate(system, config, j, q), range(config.samples)))
    logger.info("generated %d samples of window %d", config.samples, config.window)
    return np.vstack(rows)


def _as_array(samples: Samples, N: int) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        if samples.ndim != 2 or samples.shape[1] < N:
            raise ModelError(f"samples must be words of length >= {N}", field="samples")
        return samples[:, :N]
    if any(len(s) < N for s in samples):
        raise ModelError(f"samples must be words of length >= {N}", field="samples")
    return np.array([list(s[:N]) for s in samples], dtype=np.int64).reshape(len(samples), N)


def empirical_marginals(samples: Samples, N: int, alphabet_size: int) -> ProbVector:
    """Frequencies of the length-N prefixes, indexed like level-N vectors."""
    if N == 0:
        return ProbVector(0, np.ones(1), alphabet_size)
    words = _as_array(samples, N)
    counts = np.bincount(word_indices(words, alphabet_size), minlength=alphabet_size ** N)
    return ProbVector(N, counts / counts.sum(), alphabet_size)


def empirical_pair_ratio(samples: Samples, a: int, b: int, n: int) -> PairEstimate:
    """
    Plug-in estimate of P(x_1 = a, x_n = b) / (P(x_1 = a) P(x_n = b)) with a
    delta-method standard error from the covariance of the three indicators.
    """
    if n < 1:
        raise ModelError(f"site must be >= 1 (got {n})", field="n")
    words = _as_array(samples, n)
    X = (words[:, 0] == a).astype(float)
    Y = (words[:, n - 1] == b).astype(float)
    Z = X * Y
    x, y, z = X.mean(), Y.mean(), Z.mean()
    diagonal = n == 1
    if x == 0.0 or y == 0.0:
        return PairEstimate(None, None, diagonal, False)
    m = len(words)
    cov = np.cov(np.vstack([X, Y, Z])) if m > 1 else np.zeros((3, 3))
    grad = np.array([-z / (x * x * y), -z / (x * y * y), 1.0 / (x * y)])
    se = math.sqrt(max(float(grad @ cov @ grad), 0.0) / m)
    return PairEstimate(z / (x * y), se, diagonal, True)

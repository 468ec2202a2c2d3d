"""
Hierarchical interaction potential of the invariant state.

For a generation-ℓ L-adic block B and a word a on it,

    Φ_{n,B}(a) = L^{-ℓ} (Σ_k log μ[a over child k] − log μ[a over B])

with children the L consecutive generation-(ℓ−1) blocks partitioning B,
and Φ_{n,{n}}(a) = −log μ[a_n]_n. Summed with multiplicity |B| over the
blocks inside a block Λ this telescopes to −log μ[a_Λ].
"""
import logging
import math
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from substlab_config import settings

from ..errors import BudgetExceededError, ModelError
from .measures import MarginalFamily, product_from_one_marginals, projective_distance
from .substitution import word_index
from .twobody import PairPotential, lowbit

logger = logging.getLogger(__name__)


class Block(NamedTuple):
    n: int
    ell: int
    start: int  ## first site, ≡ 1 mod L^ℓ
    stop: int  ## last site

    @property
    def sites(self) -> range:
        return range(self.start, self.stop + 1)

    @property
    def q(self) -> int:
        return (self.start - 1) // (self.stop - self.start + 1)


class LocalPotential(NamedTuple):
    value: float
    tail_bound: float


def block(n: int, ell: int, L: int) -> Block:
    if n < 1 or ell < 0:
        raise ModelError("block needs n >= 1 and ell >= 0", field="n")
    width = L ** ell
    q = (n - 1) // width
    return Block(n, ell, q * width + 1, (q + 1) * width)


class HierarchicalPotential:
    """
    Tables of Φ_{n,B(n,ℓ)} for every block inside the first L^{ℓ_max} sites.
    Tables are indexed by (ℓ, q) and by the word on the block.
    """

    def __init__(
        self,
        L: int,
        ell_max: int,
        alphabet_size: int,
        log_marginals: Dict[Tuple[int, int], np.ndarray],
        tables: Dict[Tuple[int, int], np.ndarray],
        rho: float,
    ):
        self.L = L
        self.ell_max = ell_max
        self.alphabet_size = alphabet_size
        self.depth = L ** ell_max
        self.log_marginals = log_marginals
        self.tables = tables
        self.rho = rho  ## truncated ρ(μ_ν, matched product)
        self.K = L * rho
        # K_φ: oscillation of φ_n outside B(1,ℓ) is at most K_φ L^{-ℓ}
        self.K_phi = 2.0 * self.K / (L - 1)
        self.norm_bounds = tuple(
            max(float(np.max(np.abs(t))) for (g, _), t in tables.items() if g == ell)
            for ell in range(ell_max + 1)
        )

    def value(self, n: int, ell: int, context: Sequence[int]) -> float:
        """Φ_{n,B(n,ℓ)} on a configuration whose first sites are `context`."""
        b = self._block(n, ell, context)
        word = context[b.start - 1 : b.stop]
        return float(self.tables[(ell, b.q)][word_index(word, self.alphabet_size)])

    def norms_ok(self) -> bool:
        """‖Φ_{n,B(n,ℓ)}‖ <= K/L^ℓ on every computed block of generation ℓ >= 1."""
        return all(self.norm_bounds[ell] <= self.K / self.L ** ell + 1e-12 for ell in range(1, self.ell_max + 1))

    def summability(self) -> float:
        """max_n Σ_ℓ ‖Φ_{n,B(n,ℓ)}‖ over the computed generations plus the geometric tail."""
        per_site = max(
            sum(float(np.max(np.abs(self.tables[(ell, (n - 1) // self.L ** ell)]))) for ell in range(self.ell_max + 1))
            for n in range(1, self.depth + 1)
        )
        return per_site + self.K * self.L ** -self.ell_max / (self.L - 1)

    def _block(self, n: int, ell: int, context: Sequence[int]) -> Block:
        if not 0 <= ell <= self.ell_max:
            raise ModelError(f"generation {ell} outside 0..{self.ell_max}", field="ell")
        b = block(n, ell, self.L)
        if b.stop > self.depth:
            raise ModelError(f"block {b.start}..{b.stop} beyond computed depth {self.depth}", field="n")
        if len(context) < b.stop:
            raise ModelError(f"context of length {len(context)} does not cover block {b.start}..{b.stop}", field="context")
        return b


AnyPotential = Union[HierarchicalPotential, PairPotential]


def _block_marginal(v: np.ndarray, size: int, depth: int, start: int, width: int) -> np.ndarray:
    return v.reshape(size ** (start - 1), size ** width, size ** (depth - start - width + 1)).sum(axis=(0, 2))


def build_potential(invariant: MarginalFamily, L: int, ell_max: Optional[int] = None) -> HierarchicalPotential:
    ell_max = settings.GIBBS_ELL_MAX if ell_max is None else ell_max
    if L < 2:
        raise ModelError("hierarchical potential needs L >= 2", field="L")
    depth = L ** ell_max
    if invariant.depth < depth:
        raise ModelError(f"invariant depth {invariant.depth} below L^ell_max = {depth}", field="depth")
    size = invariant.alphabet_size
    v = invariant.level(depth)

    log_marginals: Dict[Tuple[int, int], np.ndarray] = {}
    with np.errstate(divide="ignore"):
        for ell in range(ell_max + 1):
            width = L ** ell
            for q in range(depth // width):
                log_marginals[(ell, q)] = np.log(_block_marginal(v, size, depth, q * width + 1, width))

    tables: Dict[Tuple[int, int], np.ndarray] = {}
    for (ell, q), logm in log_marginals.items():
        if ell == 0:
            tables[(ell, q)] = -logm
            continue
        child = L ** (ell - 1)
        children = np.zeros(size ** (L * child))
        for k in range(L):
            # child k occupies coordinates k*child .. (k+1)*child - 1 of the block word
            children = (
                children.reshape(size ** (k * child), size ** child, -1)
                + log_marginals[(ell - 1, q * L + k)][None, :, None]
            ).reshape(-1)
        tables[(ell, q)] = (children - logm) / L ** ell

    _, product = product_from_one_marginals(invariant.truncate(depth))
    rho = projective_distance(invariant.truncate(depth), product, depth)
    potential = HierarchicalPotential(L, ell_max, size, log_marginals, tables, rho)
    logger.info("hierarchical potential: L=%d ell_max=%d K=%.6g", L, ell_max, potential.K)
    return potential


def telescoping_error(potential: HierarchicalPotential, ell: int, q: int) -> float:
    """max over words of |Σ_{n∈Λ} Σ_{Λ'⊂Λ} Φ_{n,Λ'}(a) + log μ[a_Λ]| for Λ the (ℓ, q) block."""
    L, size = potential.L, potential.alphabet_size
    width = L ** ell
    total = np.zeros(size ** width)
    for g in range(ell + 1):
        w = L ** g
        for r in range(width // w):
            table = potential.tables[(g, q * (width // w) + r)]
            total = (total.reshape(size ** (r * w), size ** w, -1) + w * table[None, :, None]).reshape(-1)
    return float(np.max(np.abs(total + potential.log_marginals[(ell, q)])))


def max_telescoping_error(potential: HierarchicalPotential, ell_max: Optional[int] = None) -> float:
    ell_max = potential.ell_max if ell_max is None else ell_max
    return max(
        telescoping_error(potential, ell, q)
        for ell in range(ell_max + 1)
        for q in range(potential.depth // potential.L ** ell)
    )


# ======================================================
# ENERGIES AND CONDITIONALS
# ======================================================

def local_potential(potential: AnyPotential, n: int, context: Sequence[int], ell_trunc: Optional[int] = None) -> LocalPotential:
    if isinstance(potential, PairPotential):
        return LocalPotential(potential.local_potential(n, context), 0.0)
    ell_trunc = potential.ell_max if ell_trunc is None else ell_trunc
    value = math.fsum(potential.value(n, ell, context) for ell in range(ell_trunc + 1))
    tail = potential.K * potential.L ** -ell_trunc / (potential.L - 1)
    return LocalPotential(value, tail)


def total_energy(potential: AnyPotential, sites: Sequence[int], context: Sequence[int], ell_trunc: Optional[int] = None) -> float:
    """H_Λ = Σ_{n∈Λ} φ_n; for a pair potential every pair meeting Λ counts once."""
    if isinstance(potential, PairPotential):
        return potential.total_energy(sites, context)
    return math.fsum(local_potential(potential, n, context, ell_trunc).value for n in sites)


def gibbs_conditional(
    potential: AnyPotential,
    sites: Sequence[int],
    boundary: Sequence[int],
    ell_trunc: Optional[int] = None,
    shift: float = 0.0,
) -> np.ndarray:
    """
    exp(−H_Λ(a_Λ ⊕ boundary)) normalized over a_Λ; outcomes ordered as words
    over `sites`. `shift` is added to every local potential.
    """
    size = potential.alphabet_size if isinstance(potential, HierarchicalPotential) else potential.model.alphabet.size
    config = list(boundary)
    energies = []
    for choice in np.ndindex(*([size] * len(sites))):
        for s, symbol in zip(sites, choice):
            config[s - 1] = symbol
        energies.append(total_energy(potential, sites, config, ell_trunc) + shift * len(sites))
    energies = np.asarray(energies)
    weights = np.exp(-(energies - energies.min()))
    return weights / weights.sum()


def marginal_conditional(invariant: MarginalFamily, sites: Sequence[int], boundary: Sequence[int], width: int) -> np.ndarray:
    """μ[a_Λ | boundary on {1..width} \\ Λ] from the level-`width` vector."""
    size = invariant.alphabet_size
    v = invariant.level(width)
    config = list(boundary[:width])
    probs = []
    for choice in np.ndindex(*([size] * len(sites))):
        for s, symbol in zip(sites, choice):
            config[s - 1] = symbol
        probs.append(v[word_index(config, size)])
    probs = np.asarray(probs)
    return probs / probs.sum()


def conditional_envelope(potential: HierarchicalPotential, sites: Sequence[int], ell_trunc: int) -> float:
    """Log-width 4|Λ| K_φ L^{-ℓ} of the admissible ratio band."""
    return 4.0 * len(sites) * potential.K_phi * potential.L ** -ell_trunc


def finite_volume_measure(potential: HierarchicalPotential, boundary: Sequence[int], ell: int) -> np.ndarray:
    """
    μ_{a,ℓ}{c} ∝ exp(−Σ_{n∈B(1,ℓ)} φ_n(c ⊕ a)) over the |A|^{L^ℓ} words c
    on B(1,ℓ); local potentials truncated at the potential's ℓ_max.
    """
    size, L = potential.alphabet_size, potential.L
    if not 0 <= ell <= potential.ell_max:
        raise ModelError(f"ell must lie in 0..{potential.ell_max}", field="ell")
    width = L ** ell
    if size ** width > settings.STATE_BUDGET:
        raise BudgetExceededError("state budget", size ** width, settings.STATE_BUDGET)
    if len(boundary) < potential.depth:
        raise ModelError(f"boundary must cover {potential.depth} sites", field="boundary")

    # blocks of generation <= ℓ inside B(1,ℓ) telescope to −log μ[c]
    energy = -potential.log_marginals[(ell, 0)].copy()
    for g in range(ell + 1, potential.ell_max + 1):
        w = L ** g
        table = potential.tables[(g, 0)]
        # words on B(1,g): c on the first `width` sites, boundary on the rest of B(1,g)
        rest_index = word_index(boundary[width:w], size)
        energy = energy + width * table.reshape(size ** width, -1)[:, rest_index]
    weights = np.exp(-(energy - energy.min()))
    return weights / weights.sum()


def simon_diagnostic(potential: AnyPotential, window: Sequence[int], ell_trunc: Optional[int] = None) -> float:
    """
    max_n Σ_{Λ∋n} (|Λ|−1)·osc(Φ_{n,Λ}) over the truncated collection; a value
    below 2 certifies uniqueness, a larger one proves nothing.
    """
    if isinstance(potential, PairPotential):
        osc = potential.oscillation()
        depth = ell_trunc if ell_trunc is not None else math.inf
        best = 0.0
        for n in window:
            v = lowbit(n).bit_length() - 1
            count = min(v, depth) + (1 if v + 1 <= depth else 0)
            best = max(best, count * osc)
        return best
    ell_trunc = potential.ell_max if ell_trunc is None else ell_trunc
    best = 0.0
    for n in window:
        if n > potential.depth:
            raise ModelError(f"site {n} beyond computed depth {potential.depth}", field="window")
        total = 0.0
        for ell in range(1, ell_trunc + 1):
            t = potential.tables[(ell, (n - 1) // potential.L ** ell)]
            total += (potential.L ** ell - 1) * float(t.max() - t.min())
        best = max(best, total)
    return best


def conditional_rows(
    potential: HierarchicalPotential,
    invariant: MarginalFamily,
    site_sets: Sequence[Sequence[int]],
    boundary: Sequence[int],
    ell_truncs: Sequence[int],
) -> List[dict]:
    """Rows comparing truncated-potential conditionals with marginal-ratio conditionals."""
    size = potential.alphabet_size
    rows = []
    for sites in site_sets:
        for ell in ell_truncs:
            width = potential.L ** ell
            gibbs = gibbs_conditional(potential, sites, boundary, ell)
            exact = marginal_conditional(invariant, sites, boundary, width)
            envelope = conditional_envelope(potential, sites, ell)
            for i, choice in enumerate(np.ndindex(*([size] * len(sites)))):
                rows.append(
                    {
                        "sites": " ".join(str(s) for s in sites),
                        "ell_trunc": ell,
                        "outcome": "".join(str(c) for c in choice),
                        "gibbs": float(gibbs[i]),
                        "marginal": float(exact[i]),
                        "log_ratio": float(np.log(gibbs[i] / exact[i])),
                        "envelope": envelope,
                    }
                )
    return rows

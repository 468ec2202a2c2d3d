import math

import numpy as np
import pytest

from substlab.core.gibbs import (
    Block,
    block,
    build_potential,
    conditional_envelope,
    conditional_rows,
    finite_volume_measure,
    gibbs_conditional,
    local_potential,
    marginal_conditional,
    max_telescoping_error,
    simon_diagnostic,
    telescoping_error,
    total_energy,
)
from substlab.core.operator import invariant_family
from substlab.core.twobody import pair_potential
from substlab.errors import ModelError


@pytest.fixture(scope="module")
def potential(ising_invariant):
    return build_potential(ising_invariant, 2, 4)


@pytest.fixture(scope="module")
def shallow_potential(ising_invariant):
    return build_potential(ising_invariant, 2, 3)


@pytest.fixture(scope="module")
def uniform_potential(uniform_system):
    return build_potential(invariant_family(uniform_system, 8), 2, 3)

# BLOCKS

@pytest.mark.gibbs
@pytest.mark.parametrize(
    "n,ell,expected",
    [
        (1, 0, Block(1, 0, 1, 1)),
        (3, 1, Block(3, 1, 3, 4)),
        (5, 2, Block(5, 2, 5, 8)),
        (16, 3, Block(16, 3, 9, 16)),
    ],
)
def test_block(n, ell, expected):
    assert block(n, ell, 2) == expected


@pytest.mark.gibbs
def test_block_index_and_errors():
    assert block(7, 1, 3).q == 2
    assert list(block(7, 1, 3).sites) == [7, 8, 9]
    with pytest.raises(ModelError):
        block(0, 1, 2)

# POTENTIAL TABLES

@pytest.mark.gibbs
def test_ising_potential_values(potential):
    assert potential.value(1, 0, (0,)) == pytest.approx(math.log(2), abs=1e-10)
    assert potential.value(1, 1, (0, 0)) == pytest.approx(0.5 * math.log(2 / 3), abs=1e-10)
    assert potential.value(2, 1, (0, 1)) == pytest.approx(0.5 * math.log(2), abs=1e-10)
    assert potential.value(6, 1, (1, 1, 1, 1, 0, 1)) == pytest.approx(0.5 * math.log(2), abs=1e-10)


@pytest.mark.gibbs
def test_potential_value_errors(potential):
    with pytest.raises(ModelError, match="generation"):
        potential.value(1, 5, (0,) * 32)
    with pytest.raises(ModelError, match="beyond computed depth"):
        potential.value(17, 0, (0,) * 17)
    with pytest.raises(ModelError, match="does not cover"):
        potential.value(3, 1, (0, 0, 0))


@pytest.mark.gibbs
def test_build_potential_errors(ising_invariant):
    with pytest.raises(ModelError):
        build_potential(ising_invariant, 1, 2)
    with pytest.raises(ModelError, match="below"):
        build_potential(ising_invariant.truncate(8), 2, 4)


@pytest.mark.gibbs
def test_telescoping_identity(potential):
    assert max_telescoping_error(potential, 3) < 1e-10
    assert telescoping_error(potential, 4, 0) < 1e-10


@pytest.mark.gibbs
def test_summability(potential):
    assert potential.K == pytest.approx(2 * potential.rho)
    assert potential.K_phi == pytest.approx(2 * potential.K)
    assert potential.norms_ok()
    assert potential.norm_bounds[1] == pytest.approx(0.5 * math.log(2), abs=1e-10)
    assert math.log(2) < potential.summability() <= math.log(2) + potential.K * (1 + 2 ** -4) + 1e-9


@pytest.mark.gibbs
def test_uniform_potential(uniform_potential):
    assert uniform_potential.K == pytest.approx(0.0, abs=1e-12)
    assert uniform_potential.norms_ok()
    for ell in range(1, 4):
        assert uniform_potential.norm_bounds[ell] == pytest.approx(0.0, abs=1e-12)
    assert uniform_potential.value(4, 0, (0, 1, 1, 0)) == pytest.approx(math.log(2))

# LOCAL POTENTIALS AND ENERGIES

@pytest.mark.gibbs
def test_local_potential_tail(potential, rng):
    for _ in range(10):
        context = tuple(int(x) for x in rng.integers(0, 2, 16))
        full = local_potential(potential, 1, context)
        truncated = local_potential(potential, 1, context, ell_trunc=2)

        assert truncated.tail_bound == pytest.approx(potential.K / 4)
        assert abs(full.value - truncated.value) <= truncated.tail_bound + 1e-12


@pytest.mark.gibbs
@pytest.mark.parametrize("ell", [1, 2])
def test_local_potential_oscillation(potential, rng, ell):
    width = 2 ** ell
    for _ in range(10):
        x = rng.integers(0, 2, 16)
        y = x.copy()
        y[width:] = rng.integers(0, 2, 16 - width)
        diff = local_potential(potential, 1, tuple(x)).value - local_potential(potential, 1, tuple(y)).value

        assert abs(diff) <= potential.K_phi * 2.0 ** -ell + 1e-12


@pytest.mark.gibbs
def test_total_energy_sums_sites(potential):
    context = (0, 1, 1, 0, 1, 0, 0, 0) * 2
    expected = sum(local_potential(potential, n, context, 3).value for n in (1, 2, 5))

    assert total_energy(potential, [1, 2, 5], context, 3) == pytest.approx(expected)


@pytest.mark.gibbs
def test_pair_potential_local_terms(ising):
    pair = pair_potential(ising)
    config = (0, 0, 1, 0)

    local = local_potential(pair, 1, config)

    assert local.value == pytest.approx(-math.log(0.75))
    assert local.tail_bound == 0.0
    # pairs meeting {2}: (1,2) and (2,4)
    assert total_energy(pair, [2], config) == pytest.approx(-2 * math.log(0.75))

# CONDITIONALS

@pytest.mark.gibbs
@pytest.mark.parametrize("sites", [[1], [1, 2]])
@pytest.mark.parametrize("ell_trunc", [2, 3])
def test_conditionals_within_envelope(potential, ising_invariant, rng, sites, ell_trunc):
    for _ in range(5):
        boundary = tuple(int(x) for x in rng.integers(0, 2, 16))
        gibbs = gibbs_conditional(potential, sites, boundary, ell_trunc)
        exact = marginal_conditional(ising_invariant, sites, boundary, 2 ** ell_trunc)
        envelope = conditional_envelope(potential, sites, ell_trunc)

        assert gibbs.sum() == pytest.approx(1.0)
        assert np.max(np.abs(np.log(gibbs / exact))) <= envelope


@pytest.mark.gibbs
def test_conditional_shift_invariance(potential):
    boundary = (0,) * 16

    np.testing.assert_allclose(
        gibbs_conditional(potential, [1, 2], boundary, 2, shift=3.7),
        gibbs_conditional(potential, [1, 2], boundary, 2),
        atol=1e-14,
    )


@pytest.mark.gibbs
def test_pair_conditionals_are_exact(ising, ising_invariant, rng):
    pair = pair_potential(ising)
    boundary = [1, 0] + [0] * 6

    np.testing.assert_allclose(gibbs_conditional(pair, [1], boundary), [0.75, 0.25])
    for _ in range(5):
        boundary = [int(x) for x in rng.integers(0, 2, 8)]
        for sites in ([2], [3], [1, 2]):
            np.testing.assert_allclose(
                gibbs_conditional(pair, sites, boundary),
                marginal_conditional(ising_invariant, sites, boundary, 8),
                atol=1e-10,
            )


@pytest.mark.gibbs
def test_conditional_rows(potential, ising_invariant):
    rows = conditional_rows(potential, ising_invariant, [[1], [1, 2]], (0,) * 16, [2, 3])

    assert len(rows) == 12
    assert set(rows[0]) == {"sites", "ell_trunc", "outcome", "gibbs", "marginal", "log_ratio", "envelope"}
    assert rows[-1]["sites"] == "1 2" and rows[-1]["outcome"] == "11"
    assert all(abs(r["log_ratio"]) <= r["envelope"] for r in rows)

# FINITE VOLUME

@pytest.mark.gibbs
def test_finite_volume_single_site(potential):
    boundary = (1, 0, 1, 1) * 4
    expected = np.exp([-local_potential(potential, 1, (c,) + boundary[1:]).value for c in (0, 1)])

    np.testing.assert_allclose(finite_volume_measure(potential, boundary, 0), expected / expected.sum(), atol=1e-12)


@pytest.mark.gibbs
def test_finite_volume_full_depth_is_marginal(shallow_potential, ising_invariant):
    np.testing.assert_allclose(
        finite_volume_measure(shallow_potential, (0,) * 8, 3), ising_invariant.level(8), atol=1e-12
    )


@pytest.mark.gibbs
def test_finite_volume_boundary_influence_decreases(potential):
    def first_pair(ell, boundary):
        return finite_volume_measure(potential, boundary, ell).reshape(4, -1).sum(axis=1)

    diffs = [
        float(np.max(np.abs(first_pair(ell, (0,) * 16) - first_pair(ell, (1,) * 16))))
        for ell in (1, 2, 3)
    ]

    assert diffs[0] > diffs[1] > diffs[2]


@pytest.mark.gibbs
def test_finite_volume_errors(potential):
    with pytest.raises(ModelError):
        finite_volume_measure(potential, (0,) * 16, 5)
    with pytest.raises(ModelError, match="boundary"):
        finite_volume_measure(potential, (0,) * 8, 1)

# SIMON DIAGNOSTIC

@pytest.mark.gibbs
def test_simon_uniform_is_zero(uniform_potential):
    assert simon_diagnostic(uniform_potential, range(1, 9)) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.gibbs
def test_simon_pair_potential(ising):
    pair = pair_potential(ising)

    assert simon_diagnostic(pair, [1]) == pytest.approx(math.log(3))
    assert simon_diagnostic(pair, [1, 2, 3]) == pytest.approx(2 * math.log(3))
    assert simon_diagnostic(pair, range(1, 17)) == pytest.approx(5 * math.log(3))
    assert simon_diagnostic(pair, [8], ell_trunc=2) == pytest.approx(2 * math.log(3))


@pytest.mark.gibbs
def test_simon_hierarchical(potential):
    value = simon_diagnostic(potential, [1], ell_trunc=1)
    table = potential.tables[(1, 0)]

    assert value == pytest.approx(table.max() - table.min())
    with pytest.raises(ModelError):
        simon_diagnostic(potential, [17])

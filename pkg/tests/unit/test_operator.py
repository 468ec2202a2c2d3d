import math
from unittest.mock import patch

import numpy as np
import pytest

from conftest import make_system, random_constant_length_system, random_twobody
from substlab.core.measures import (
    MarginalFamily,
    ProductMeasureSpec,
    consistency_defect,
    family_from_top,
    product_from_one_marginals,
    uniform_product,
)
from substlab.core.operator import (
    _enumerated_matrix,
    apply_operator,
    approximation_scheme,
    block_conditional,
    block_interaction,
    build_transition_matrix,
    check_state_budget,
    invariance_residual,
    invariant_family,
    level_residuals,
    operator_step,
)
from substlab.core.twobody import build_substitutions
from substlab.errors import BudgetExceededError, ConvergenceError, ModelError, UnsupportedStructureError

# TRANSITION MATRICES

@pytest.mark.operator
def test_ising_one_site_matrix(ising_system):
    M = build_transition_matrix(ising_system, 1).dense()

    np.testing.assert_allclose(M, [[0.75, 0.25], [0.25, 0.75]])


@pytest.mark.operator
@pytest.mark.parametrize("N", [1, 2, 3, 5])
def test_columns_are_stochastic(ising_system, periodic_system, mixed_length_system, N):
    for system in (ising_system, periodic_system, mixed_length_system):
        M = build_transition_matrix(system, N).dense()
        np.testing.assert_allclose(M.sum(axis=0), 1.0, atol=1e-12)


@pytest.mark.operator
@pytest.mark.parametrize("N", [1, 2, 4])
def test_deterministic_rule_gives_zero_one_matrix(doubling_system, N):
    M = build_transition_matrix(doubling_system, N).dense()

    assert set(np.unique(M)) <= {0.0, 1.0}
    np.testing.assert_array_equal(M.sum(axis=0), np.ones(2 ** N))


@pytest.mark.operator
@pytest.mark.parametrize("N", [1, 2, 3, 4, 5])
def test_factorized_matrix_matches_enumeration(rng, N):
    for size, L in ((2, 2), (2, 3), (3, 2)):
        system = random_constant_length_system(rng, size=size, L=L, n_rules=3)
        np.testing.assert_allclose(
            build_transition_matrix(system, N).dense(),
            _enumerated_matrix(system, N).toarray(),
            atol=1e-14,
        )


@pytest.mark.operator
def test_position_dependent_law_uses_block_position(periodic_system):
    # block 1 uses (0.7, 0.3), block 2 uses (0.4, 0.6)
    M = build_transition_matrix(periodic_system, 4).dense()
    enumerated = _enumerated_matrix(periodic_system, 4).toarray()

    np.testing.assert_allclose(M, enumerated, atol=1e-14)
    # input "aa..": output "abab" needs rule 0 at both positions
    assert M[0b0101, 0] == pytest.approx(0.7 * 0.4)


@pytest.mark.operator
@pytest.mark.parametrize("N", [2, 3, 4])
def test_operator_step_matches_matrix(rng, mixed_length_system, N):
    system = random_constant_length_system(rng, size=2, L=2, n_rules=2)
    for sys_ in (system, mixed_length_system):
        v = rng.dirichlet(np.ones(2 ** N))
        np.testing.assert_allclose(
            operator_step(sys_, v, N), build_transition_matrix(sys_, N).matrix @ v, atol=1e-14
        )


@pytest.mark.operator
def test_iteration_equals_matrix_power(ising_system, rng):
    N = 3
    v = rng.dirichlet(np.ones(2 ** N))
    M = build_transition_matrix(ising_system, N).dense()
    w = v
    for _ in range(4):
        w = operator_step(ising_system, w, N)

    np.testing.assert_allclose(w, np.linalg.matrix_power(M, 4) @ v, atol=1e-14)


@pytest.mark.operator
def test_apply_operator_point_mass(ising_system):
    top = np.zeros(8)
    top[0] = 1.0
    out = apply_operator(ising_system, family_from_top(top, 2, 3))

    np.testing.assert_allclose(out.level(1), [0.75, 0.25])
    assert consistency_defect(out) < 1e-15


@pytest.mark.operator
def test_apply_operator_symmetric_law(uniform_system, rng):
    f = family_from_top(rng.dirichlet(np.ones(16)), 2, 4)

    np.testing.assert_allclose(apply_operator(uniform_system, f).level(1), [0.5, 0.5], atol=1e-15)


@pytest.mark.operator
def test_block_independence_after_one_step(ising_system):
    mu0 = ProductMeasureSpec((np.array([0.2, 0.8]), np.array([0.6, 0.4])), np.array([0.3, 0.7]))
    v4 = operator_step(ising_system, mu0.family(4).level(4), 4).reshape(4, 4)

    np.testing.assert_allclose(v4, np.outer(v4.sum(axis=1), v4.sum(axis=0)), atol=1e-15)

# INVARIANT STATE

@pytest.mark.operator
def test_ising_invariant_low_levels(ising_invariant):
    np.testing.assert_allclose(ising_invariant.level(1), [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(ising_invariant.level(2), [0.375, 0.125, 0.125, 0.375], atol=1e-12)


@pytest.mark.operator
def test_uniform_law_has_uniform_invariant(uniform_system):
    f = invariant_family(uniform_system, 4)

    np.testing.assert_allclose(f.level(4), np.full(16, 1 / 16), atol=1e-12)


@pytest.mark.operator
@pytest.mark.slow
def test_invariance_and_consistency(ising_system):
    rng = np.random.default_rng(3)
    systems = [ising_system] + [build_substitutions(random_twobody(rng, 2)) for _ in range(3)]

    for system in systems:
        for N in range(2, 11):
            f = invariant_family(system, N, tol=1e-12)
            assert invariance_residual(system, f) < 1e-10
            assert consistency_defect(f) < 1e-10


@pytest.mark.operator
def test_invariant_is_independent_of_start(ising_system):
    start = np.zeros(32)
    start[-1] = 1.0
    a = invariant_family(ising_system, 5, tol=1e-13)
    b = invariant_family(ising_system, 5, tol=1e-13, start=start)

    assert np.max(np.abs(a.level(5) - b.level(5))) < 1e-12


@pytest.mark.operator
def test_non_constant_invariant():
    fibonacci = make_system(["a", "b"], [{"a": "ab", "b": "a"}, {"a": "ba", "b": "a"}], [0.5, 0.5])
    f = invariant_family(fibonacci, 4)

    assert invariance_residual(fibonacci, f) < 1e-10
    assert consistency_defect(f) < 1e-10


@pytest.mark.operator
def test_periodic_orbit_does_not_converge():
    swap = make_system(["0", "1"], [{"0": "11", "1": "00"}], [1.0])

    with pytest.raises(ConvergenceError) as exc:
        invariant_family(swap, 1, max_iter=50, start=np.array([1.0, 0.0]))

    assert exc.value.residual == pytest.approx(1.0)
    assert exc.value.iterations == 50
    assert exc.value.exit_code == 4


@pytest.mark.operator
def test_invariant_argument_errors(ising_system):
    with pytest.raises(ModelError):
        invariant_family(ising_system, 0)
    with pytest.raises(ModelError):
        invariant_family(ising_system, 2, tol=-1.0)
    with pytest.raises(ModelError, match="tolerance"):
        invariant_family(ising_system, 2, tol=0.0)
    with pytest.raises(ModelError, match="max_iter"):
        invariant_family(ising_system, 2, max_iter=0)


@pytest.mark.operator
def test_inconsistent_levels_fail_convergence(ising_system):
    with patch("substlab.core.operator.consistency_defect", return_value=1e-6):
        with pytest.raises(ConvergenceError, match="not consistent") as exc:
            invariant_family(ising_system, 3)
        assert invariant_family(ising_system, 1).depth == 1

    assert exc.value.residual == pytest.approx(1e-6)
    assert exc.value.exit_code == 4


@pytest.mark.operator
def test_budgets(ising_system):
    with pytest.raises(BudgetExceededError) as exc:
        invariant_family(ising_system, 21)
    assert exc.value.required == 2 ** 21
    assert exc.value.exit_code == 3

    check_state_budget(2, 20)
    with pytest.raises(BudgetExceededError):
        check_state_budget(2, 1, budget=0)
    with pytest.raises(BudgetExceededError, match="matrix budget"):
        build_transition_matrix(ising_system, 4, budget=10)


@pytest.mark.operator
def test_level_residuals_marginalize():
    diff = np.array([0.1, -0.1, 0.2, 0.0])

    assert level_residuals(diff, 2, 2) == pytest.approx((0.2, 0.2))

# APPROXIMATION SCHEME

@pytest.mark.operator
def test_long_block_bound(ising_system, ising_invariant):
    mu0, _ = product_from_one_marginals(ising_invariant.truncate(8))
    report = approximation_scheme(ising_system, mu0, 2, 8, invariant=ising_invariant)

    assert [r.ell for r in report.records] == [0, 1, 2]
    assert all(r.long_block_ok for r in report.records[1:])
    assert report.rho0 > 0


@pytest.mark.operator
def test_vague_distance_decreases(ising_system, ising_invariant):
    report = approximation_scheme(ising_system, uniform_product(2), 3, 8, invariant=ising_invariant)
    vague = [r.vague_distance for r in report.records]

    assert vague[3] < vague[0]
    assert all(math.isfinite(r.projective_distance) for r in report.records)
    assert list(report.frame().columns) == ["ell", "vague_distance", "projective_distance", "residual"]


@pytest.mark.operator
def test_first_block_is_exact_after_one_step(ising_system, ising_invariant):
    report = approximation_scheme(ising_system, uniform_product(2), 1, 4, invariant=ising_invariant)

    np.testing.assert_allclose(report.records[1].family.level(2), ising_invariant.level(2), atol=1e-12)


@pytest.mark.operator
def test_approximation_preconditions(ising_system, mixed_length_system):
    with pytest.raises(UnsupportedStructureError):
        approximation_scheme(mixed_length_system, uniform_product(2), 1, 4)
    with pytest.raises(ModelError, match="strictly positive"):
        approximation_scheme(ising_system, ProductMeasureSpec((np.array([1.0, 0.0]),), np.array([0.5, 0.5])), 1, 4)

# BLOCK INTERACTIONS

@pytest.mark.operator
def test_block_interaction_ising(ising_invariant):
    zero = block_interaction(ising_invariant, 0, 2)
    one = block_interaction(ising_invariant, 1, 2)

    np.testing.assert_allclose(zero.values, [math.log(2)] * 2, atol=1e-12)
    np.testing.assert_allclose(one.values, -0.5 * np.log([0.375, 0.125, 0.125, 0.375]), atol=1e-12)
    assert one.value(3, (0, 1)) == pytest.approx(-0.5 * math.log(0.125))


@pytest.mark.operator
def test_block_interaction_uniform_is_log_alphabet():
    f = uniform_product(3).family(4)

    np.testing.assert_allclose(block_interaction(f, 2, 2).values, math.log(3))


@pytest.mark.operator
def test_block_interaction_zero_probability_is_infinite():
    f = MarginalFamily(2, (np.array([1.0, 0.0]),))

    assert block_interaction(f, 0, 2).values[1] == math.inf


@pytest.mark.operator
def test_block_conditional_matches_marginal_ratio(ising_invariant):
    interaction = block_interaction(ising_invariant, 2, 2)
    v4 = ising_invariant.level(4).reshape(2, 2, 2, 2)

    conditional = block_conditional(interaction, [2], (1, 0, 1, 1))
    direct = v4[1, :, 1, 1] / v4[1, :, 1, 1].sum()
    np.testing.assert_allclose(conditional, direct, atol=1e-10)

    pair = block_conditional(interaction, [1, 2], (0, 0, 0, 1))
    direct = v4[:, :, 0, 1].reshape(-1) / v4[:, :, 0, 1].sum()
    np.testing.assert_allclose(pair, direct, atol=1e-10)


@pytest.mark.operator
def test_block_conditional_errors(ising_invariant):
    interaction = block_interaction(ising_invariant, 1, 2)

    with pytest.raises(ModelError):
        block_conditional(interaction, [1], (0, 0, 0))
    with pytest.raises(ModelError):
        block_conditional(interaction, [3], (0, 0))

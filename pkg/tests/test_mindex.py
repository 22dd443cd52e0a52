import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from miqmc.field import FIELD_PRESETS, build_kl_basis
from miqmc.mindex import (IndexSetSpec, Problem, boundary, corner_expansion, generate_index_set,
                          is_admissible)
from miqmc import pde


def test_total_degree_example():
    assert set(generate_index_set(IndexSetSpec("TD", 2), 2)) == {(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)}


def test_full_tensor_example():
    assert set(generate_index_set(IndexSetSpec("FT", 2), 1)) == {(0, 0), (1, 0), (0, 1), (1, 1)}


def test_weighted_example():
    got = set(generate_index_set(IndexSetSpec("WTD", 2, (0.5, 0.5)), 1))
    assert got == {(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)}


def test_weighted_anisotropic():
    got = set(generate_index_set(IndexSetSpec("WTD", 2, (0.75, 0.25)), 1))
    assert got == {(0, 0), (1, 0), (0, 1), (0, 2), (0, 3), (0, 4), (1, 1)}


def test_multilevel_is_diagonal():
    assert generate_index_set(IndexSetSpec("ML", 3), 2) == [(0, 0, 0), (1, 1, 1), (2, 2, 2)]


def test_order_is_by_level_then_lexicographic():
    got = generate_index_set(IndexSetSpec("FT", 2), 2)
    assert got == sorted(got, key=lambda e: (sum(e), e))


def test_spec_validation():
    with pytest.raises(ValueError):
        IndexSetSpec("XX", 2)
    with pytest.raises(ValueError):
        IndexSetSpec("WTD", 2, (0.5, 0.6))
    with pytest.raises(ValueError):
        IndexSetSpec("WTD", 2)
    with pytest.raises(ValueError):
        generate_index_set(IndexSetSpec("TD", 2), -1)


def test_admissibility_examples():
    assert is_admissible({(0, 0), (1, 0)})
    assert not is_admissible({(1, 1)})
    assert not is_admissible({(0, 0), (1, 1)})


SPECS = [IndexSetSpec("FT", 2), IndexSetSpec("TD", 3), IndexSetSpec("WTD", 2, (0.3, 0.7)),
         IndexSetSpec("ML", 2), IndexSetSpec("TD", 1)]


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.kind}{s.d}")
@pytest.mark.parametrize("L", range(5))
def test_sets_nested_and_admissible(spec, L):
    cur = generate_index_set(spec, L)
    assert is_admissible(cur) or spec.kind == "ML"
    if L:
        assert set(generate_index_set(spec, L - 1)) < set(cur)


def test_boundary_examples():
    assert set(boundary(IndexSetSpec("TD", 2), 2)) == {(2, 0), (1, 1), (0, 2)}
    assert set(boundary(IndexSetSpec("FT", 2), 1)) == {(1, 0), (0, 1), (1, 1)}
    assert boundary(IndexSetSpec("ML", 2), 3) == [(3, 3)]


def test_corner_expansion_example():
    assert dict(corner_expansion((1, 2))) == {(1, 2): 1, (0, 2): -1, (1, 1): -1, (0, 1): 1}
    assert corner_expansion((0, 0)) == [((0, 0), 1)]
    got = dict(corner_expansion((2, 0, 1)))
    assert got == {(2, 0, 1): 1, (1, 0, 1): -1, (2, 0, 0): -1, (1, 0, 0): 1}


def test_corner_expansion_diagonal():
    assert corner_expansion((2, 2), diagonal=True) == [((2, 2), 1), ((1, 1), -1)]
    assert corner_expansion((0, 0), diagonal=True) == [((0, 0), 1)]
    with pytest.raises(ValueError):
        corner_expansion((1, 2), diagonal=True)


@given(st.lists(st.integers(0, 4), min_size=1, max_size=4))
def test_corner_signs_annihilate_constants(ell):
    total = sum(sign for _, sign in corner_expansion(ell))
    assert total == (0 if any(ell) else 1)
    assert len(corner_expansion(ell)) == 2 ** sum(1 for x in ell if x > 0)


# ---------------------------------------------------------------- problems

@pytest.fixture(scope="module")
def problem():
    return Problem(build_kl_basis(FIELD_PRESETS["F1"], 2), "G1")


def test_zero_index_is_coarse_qoi(problem):
    xi = np.random.default_rng(0).standard_normal(problem.n_random)
    ds = problem.sample_delta((0, 0), xi)
    assert ds.value == problem.evaluate((0, 0), xi)
    assert ds.model_cost == 16


def test_deterministic_difference_is_reproducible(problem):
    xi = np.zeros(problem.n_random)
    a = problem.sample_delta((1, 2), xi)
    b = problem.sample_delta((1, 2), xi)
    assert a.value == b.value
    want = sum(sign * problem.evaluate(tau, xi) for tau, sign in corner_expansion((1, 2)))
    assert a.value == pytest.approx(want, abs=1e-15)
    assert set(a.corners) == {(1, 2), (0, 2), (1, 1), (0, 1)}
    assert a.model_cost == problem.cost((1, 2)) == 8 * 16 + 4 * 16 + 8 * 8 + 4 * 8


@pytest.mark.parametrize("L", [1, 2])
def test_telescoping_full_tensor(problem, L):
    rng = np.random.default_rng(L)
    for _ in range(3):
        xi = rng.standard_normal(problem.n_random)
        total = sum(problem.sample_delta(e, xi).value for e in generate_index_set(IndexSetSpec("FT", 2), L))
        assert total == pytest.approx(problem.evaluate((L, L), xi), rel=1e-10)


def test_constant_qoi_differences_vanish(problem):
    const = Problem(problem.basis, lambda grid, p, k: 2.5, bc=pde.dirichlet_all(2))
    xi = np.ones(const.n_random)
    assert const.sample_delta((0, 0), xi).value == 2.5
    for ell in [(1, 0), (0, 1), (2, 1)]:
        assert const.sample_delta(ell, xi).value == 0.0
    assert const.sample_delta((2, 2), xi, diagonal=True).value == 0.0


def test_single_and_diagonal_modes(problem):
    xi = np.random.default_rng(5).standard_normal(problem.n_random)
    assert problem.sample_delta((2, 2), xi, single=True).value == problem.evaluate((2, 2), xi)
    diag = problem.sample_delta((2, 2), xi, diagonal=True).value
    assert diag == pytest.approx(problem.evaluate((2, 2), xi) - problem.evaluate((1, 1), xi), abs=1e-15)


def test_flux_problem(problem):
    p2 = Problem(problem.basis, "G2")
    assert p2.evaluate((1, 1), np.zeros(p2.n_random)) == pytest.approx(1.0, rel=1e-9)


def test_short_xi_rejected(problem):
    with pytest.raises(ValueError):
        problem.sample_delta((0, 0), np.zeros(problem.n_random - 1))


def test_problem_validation(problem):
    with pytest.raises(ValueError):
        Problem(problem.basis, "G9")
    with pytest.raises(ValueError):
        Problem(problem.basis, lambda g, p, k: 0.0)
    with pytest.raises(ValueError):
        Problem(problem.basis, "G1", m0=(4, 4, 4))


def test_solver_failure_names_the_index(problem, monkeypatch):
    def boom(*a, **k):
        raise pde.SolverError("no convergence", 1.0, 3)
    monkeypatch.setattr(pde, "solve_diffusion", boom)
    with pytest.raises(pde.SolverError, match=r"index \(1, 0\), corner \(1, 0\)"):
        problem.sample_delta((1, 0), np.zeros(problem.n_random))

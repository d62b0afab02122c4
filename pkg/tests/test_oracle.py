import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llmopt.errors import OracleViolationError, TooLargeError
from llmopt.oracle import (
    OracleMethod,
    brute_force_tsp,
    continuous_reference,
    held_karp_tsp,
    optimality_gap,
    reference_length,
)
from llmopt.problems import FunctionName, evaluate, make_problem, optimum_location
from llmopt.tsp import TspInstance, canonical_tour, load_fixture, random_instance, tour_length


def square():
    return TspInstance(("0", "1", "2", "3"), ((0, 0), (0, 1), (1, 1), (1, 0)))


def test_small_fixtures():
    tri = load_fixture("triangle3")
    for solver in (brute_force_tsp, held_karp_tsp):
        assert solver(tri).optimal_length == 12.0
        assert solver(square()).optimal_length == 4.0


def test_methods_reported():
    assert brute_force_tsp(square()).method is OracleMethod.BRUTE_FORCE
    assert held_karp_tsp(square()).method is OracleMethod.HELD_KARP


def test_eight_cities_agree():
    inst = random_instance(8, 42)
    bf, hk = brute_force_tsp(inst), held_karp_tsp(inst)
    assert bf.optimal_length == hk.optimal_length
    assert canonical_tour(bf.optimal_tour) == canonical_tour(hk.optimal_tour) or bf.optimal_length == tour_length(
        inst, hk.optimal_tour
    )


def test_size_limits():
    with pytest.raises(TooLargeError):
        brute_force_tsp(random_instance(12, 0))
    with pytest.raises(TooLargeError):
        held_karp_tsp(random_instance(21, 0))


def test_result_tour_achieves_length():
    inst = random_instance(12, 7)
    res = held_karp_tsp(inst)
    assert tour_length(inst, res.optimal_tour) == res.optimal_length


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(4, 9))
def test_held_karp_equals_brute_force(seed, n):
    inst = random_instance(n, seed)
    assert held_karp_tsp(inst).optimal_length == brute_force_tsp(inst).optimal_length


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 1000), st.permutations(range(9)))
def test_no_tour_beats_optimum(seed, perm):
    inst = random_instance(9, seed)
    assert tour_length(inst, perm) >= held_karp_tsp(inst).optimal_length - 1e-9


def test_gap():
    assert optimality_gap(12.0, 12.0) == 0.0
    assert optimality_gap(15.0, 12.0) == 25.0
    opt = 423.7
    assert f"{optimality_gap(opt * 1.1101, opt):.2f}%" == "11.01%"
    with pytest.raises(OracleViolationError):
        optimality_gap(11.0, 12.0)
    assert optimality_gap(12.0 - 1e-12, 12.0) <= 0.0


def test_reference_length():
    tri = load_fixture("triangle3")
    assert reference_length(tri) == 12.0
    stored = TspInstance(tuple(map(str, range(21))), tuple((i, i * i % 7) for i in range(21)), reference_length=99.0)
    assert reference_length(stored) == 99.0
    assert reference_length(random_instance(25, 0)) is None


@pytest.mark.parametrize("name", list(FunctionName))
def test_continuous_reference_self_consistent(name):
    p = make_problem(name, 2, shift=(0.3, -0.2))
    assert continuous_reference(p) == 0.0
    assert abs(evaluate(p, optimum_location(p)) - continuous_reference(p)) <= 1e-9
    if name is not FunctionName.ROSENBROCK:
        assert abs(evaluate(p, p.shift)) <= 1e-9

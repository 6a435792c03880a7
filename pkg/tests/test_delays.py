import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opfa import delay_lower_bound, delay_objective, estimate_delays_bb, estimate_delays_bruteforce, predict_subject
from opfa.delays import (
    complete_data_bound_table,
    enumerate_order_cone,
    kron_min_eigenvalue,
    order_cone_size,
    tighten_box,
)
from oracles import box_minimum, masked_loss_loop, order_cone_points


def delay_instance(seed, f=2, d_max=3, n=12, p=8, masked=False, noise=0.3):
    rng = np.random.default_rng(seed)
    n_F = n + d_max
    F = rng.random((n_F, f))
    A = rng.random((f, p))
    d_true = np.sort(rng.integers(0, d_max + 1, size=f))
    X = predict_subject(F, d_true, A, 0, n) + noise * rng.normal(size=(n, p))
    mask = (rng.random((n, p)) > 0.3).astype(float) if masked else None
    return X, F, A, mask, d_true


def test_delay_objective_matches_loop():
    X, F, A, mask, d = delay_instance(0, masked=True)
    assert delay_objective(X, F, A, d, mask) == pytest.approx(masked_loss_loop(X, F, d, A, mask), rel=1e-12)
    assert delay_objective(X, F, A, d, np.ones_like(X)) == pytest.approx(delay_objective(X, F, A, d), rel=1e-14)


def test_exact_data_gives_zero():
    X, F, A, _, d = delay_instance(1, noise=0.0)
    assert delay_objective(X, F, A, d) == pytest.approx(0.0, abs=1e-20)
    d_hat = estimate_delays_bb(X, F, A, 3)
    assert delay_objective(X, F, A, d_hat) <= 1e-20


def test_cone_enumeration_counts():
    assert order_cone_size(1, 3) == 4
    assert order_cone_size(2, 2) == 6
    pts = list(enumerate_order_cone(2, 2))
    assert len(pts) == 6
    assert [tuple(p) for p in pts] == [tuple(p) for p in order_cone_points(2, 2)]


def test_bruteforce_ties_lexicographic():
    X = np.zeros((4, 2))
    F = np.zeros((6, 2))
    A = np.ones((2, 2))
    np.testing.assert_array_equal(estimate_delays_bruteforce(X, F, A, 2), [0, 0])
    np.testing.assert_array_equal(estimate_delays_bb(X, F, A, 2), [0, 0])


def test_bruteforce_guard():
    with pytest.raises(ValueError, match="points"):
        estimate_delays_bruteforce(np.zeros((3, 1)), np.zeros((3, 8)), np.zeros((8, 1)), 40)


def test_d_max_zero():
    X, F, A, _, _ = delay_instance(2)
    np.testing.assert_array_equal(estimate_delays_bb(X, F, A, 0), [0, 0])


def test_tighten_box():
    lo, hi = tighten_box([2, 0, 1], [3, 4, 5])
    np.testing.assert_array_equal(lo, [2, 2, 2])
    np.testing.assert_array_equal(hi, [3, 4, 5])
    lo, hi = tighten_box([0, 0], [4, 1])
    np.testing.assert_array_equal(hi, [1, 1])
    assert tighten_box([3, 0], [3, 2]) is None


def test_kron_min_eigenvalue_matches_dense():
    rng = np.random.default_rng(3)
    f, n, p = 2, 5, 4
    A = rng.random((f, p))
    mask = (rng.random((n, p)) > 0.4).astype(float)
    dense = sum(np.kron(np.outer(A[:, i], A[:, i]), np.diag(mask[:, i])) for i in range(p))
    assert kron_min_eigenvalue(A, mask) == pytest.approx(np.linalg.eigvalsh(dense)[0], abs=1e-12)


def test_rank_deficient_bound_is_residual():
    rng = np.random.default_rng(4)
    X, F, _, _, _ = delay_instance(4)
    a = rng.random(8)
    A = np.vstack([a, 2 * a])  # rank one
    table = complete_data_bound_table(X, F, A, 3)
    assert table.scale_factor == 0.0
    Ap = np.linalg.pinv(A)
    resid = np.linalg.norm(X - X @ Ap @ A) ** 2
    assert table.bound(np.zeros(2, int), np.full(2, 3)) + table.safety == pytest.approx(resid, rel=1e-12)
    assert 0 <= table.safety <= 1e-6 * resid


def test_orthonormal_rows_bound():
    rng = np.random.default_rng(5)
    Q, _ = np.linalg.qr(rng.normal(size=(8, 2)))
    A = Q.T
    X, F, _, _, _ = delay_instance(5)
    for lo, hi in [((0, 0), (4, 4)), ((1, 2), (3, 4)), ((2, 2), (2, 2))]:
        lb = delay_lower_bound(lo, hi, X, F, A)
        assert lb <= box_minimum(X, F, A, lo, hi) + 1e-12


@pytest.mark.parametrize("masked", [False, True])
@pytest.mark.parametrize("seed", range(10))
def test_bb_matches_bruteforce(seed, masked):
    rng = np.random.default_rng(100 + seed)
    f, d_max = int(rng.integers(1, 4)), int(rng.integers(2, 6))
    X, F, A, mask, _ = delay_instance(seed, f, d_max, masked=masked)
    d_bb = estimate_delays_bb(X, F, A, d_max, mask)
    d_bf = estimate_delays_bruteforce(X, F, A, d_max, mask)
    assert delay_objective(X, F, A, d_bb, mask) == delay_objective(X, F, A, d_bf, mask)
    np.testing.assert_array_equal(d_bb, d_bf)


@pytest.mark.parametrize("masked", [False, True])
def test_every_node_bound_is_valid(masked):
    X, F, A, mask, _ = delay_instance(7, f=3, d_max=4, masked=masked)
    nodes = []
    estimate_delays_bb(X, F, A, 4, mask, nodes=nodes)
    assert nodes
    for node in nodes:
        true_min = box_minimum(X, F, A, node.lo, node.hi, mask)
        assert node.lower_bound <= true_min
        assert true_min <= node.upper_bound * (1 + 1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_singleton_box_bound(seed, masked):
    X, F, A, mask, d = delay_instance(seed, f=2, d_max=3, masked=masked)
    assert delay_lower_bound(d, d, X, F, A, mask) <= delay_objective(X, F, A, d, mask)


def test_frozen_small_instance():
    # optimum computed once by exhaustive enumeration of the loop oracle
    X, F, A, mask, _ = delay_instance(42, f=2, d_max=3, masked=True)
    values = {tuple(d): masked_loss_loop(X, F, d, A, mask) for d in order_cone_points(2, 3)}
    best = min(values, key=lambda d: (values[d], d))
    assert best == (1, 3)
    np.testing.assert_array_equal(estimate_delays_bb(X, F, A, 3, mask), best)

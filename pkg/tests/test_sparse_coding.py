import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsesr.sparse_coding import (
    Dictionary,
    PursuitParams,
    batch_omp,
    batch_omp_codes,
    omp,
    reconstruct,
)

log = logging.getLogger(__name__)


def random_dictionary(rng, m, n):
    return Dictionary.normalized(rng.standard_normal((m, n)))


def sparse_signal(rng, D, k):
    support = np.sort(rng.choice(D.atom_count, size=k, replace=False))
    coefs = rng.uniform(1.0, 2.0, size=k) * rng.choice([-1, 1], size=k)
    return support, coefs, D.atoms[:, support] @ coefs


def best_subset(D, y, k):
    """Exhaustive least squares over every support of size <= k."""
    best = (np.linalg.norm(y), ())
    for size in range(1, k + 1):
        for S in itertools.combinations(range(D.shape[1]), size):
            A = D[:, S]
            x, *_ = np.linalg.lstsq(A, y, rcond=None)
            r = np.linalg.norm(y - A @ x)
            if r < best[0] - 1e-12:
                best = (r, S)
    return best


def test_dictionary_validation():
    with pytest.raises(ValueError):
        Dictionary(np.array([[1.0, 2.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        Dictionary(np.array([[np.nan], [1.0]]))
    with pytest.raises(ValueError):
        PursuitParams(0)
    with pytest.raises(ValueError):
        PursuitParams(2, 1.0)


def test_identity_example():
    res = omp(Dictionary(np.eye(4)), np.array([0.0, 3.0, 0.0, 0.0]), PursuitParams(2, 0.0))
    assert res.support.tolist() == [1]
    assert res.coefficients.tolist() == [3.0]
    assert res.residual_norm == 0.0
    assert len(res.residual_norms) == 2  # initial norm plus one iteration


def test_exact_recovery_random(rng):
    D = random_dictionary(rng, 64, 128)
    for _ in range(20):
        support, coefs, y = sparse_signal(rng, D, 3)
        res = omp(D, y, PursuitParams(5, 1e-6))
        order = np.argsort(res.support)
        assert res.support[order].tolist() == support.tolist()
        assert np.max(np.abs(res.coefficients[order] - coefs)) <= 1e-8


def test_exact_recovery_matches_exhaustive_oracle(rng):
    D = random_dictionary(rng, 24, 16)
    for _ in range(5):
        support, coefs, y = sparse_signal(rng, D, 3)
        r_best, S_best = best_subset(D.atoms, y, 3)
        res = omp(D, y, PursuitParams(5, 1e-6))
        assert tuple(sorted(res.support.tolist())) == S_best == tuple(support.tolist())
        assert res.residual_norm <= r_best + 1e-8


def test_epsilon_stops_after_one_atom():
    D = Dictionary(np.eye(4))
    # best single atom leaves relative residual 0.25
    y = np.array([np.sqrt(1 - 0.25 ** 2), 0.25, 0.0, 0.0])
    res = omp(D, y, PursuitParams(3, 0.3))
    assert res.support.tolist() == [0]
    assert res.residual_norm / np.linalg.norm(y) == pytest.approx(0.25)


def test_zero_and_nan_signals():
    D = Dictionary(np.eye(3))
    res = omp(D, np.zeros(3), PursuitParams(2))
    assert res.support.size == 0 and res.coefficients.size == 0
    with pytest.raises(ValueError):
        omp(D, np.array([np.nan, 0, 0]), PursuitParams(2))
    with pytest.raises(ValueError):
        omp(D, np.zeros(4), PursuitParams(2))


def test_tie_goes_to_lowest_index():
    D = Dictionary(np.eye(3))
    res = omp(D, np.array([0.0, 1.0, 1.0]), PursuitParams(1))
    assert res.support.tolist() == [1]


def test_rank_deficient_support_stops_early():
    a = np.array([1.0, 0.0, 0.0])
    D = Dictionary(np.stack([a, a, [0.0, 1.0, 0.0]], axis=1))
    res = omp(D, np.array([1.0, 0.0, 0.5]), PursuitParams(3, 0.0))
    assert len(set(res.support.tolist())) == len(res.support)
    assert 0 in res.support and 1 not in res.support


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), k0=st.integers(1, 8), eps=st.sampled_from([0.0, 0.1, 0.3]))
def test_omp_properties(seed, k0, eps):
    g = np.random.default_rng(seed)
    D = random_dictionary(g, 20, 40)
    y = g.standard_normal(20)
    res = omp(D, y, PursuitParams(k0, eps))
    norms = np.array(res.residual_norms)
    assert np.all(np.diff(norms) <= 1e-10)
    assert res.support.size <= k0
    r = y - D.atoms[:, res.support] @ res.coefficients
    assert np.max(np.abs(D.atoms[:, res.support].T @ r), initial=0.0) <= 1e-8 * np.linalg.norm(y)
    assert np.linalg.norm(r) == pytest.approx(res.residual_norm, abs=1e-10)


def test_batch_single_column_equals_omp(rng):
    D = random_dictionary(rng, 30, 60)
    y = rng.standard_normal(30)
    params = PursuitParams(6, 0.1)
    code = batch_omp(D, y[:, None], params)
    res = omp(D, y, params)
    idx, vals = code.column(0)
    assert idx.tolist() == sorted(res.support.tolist())
    assert np.allclose(vals, res.dense(60)[idx], atol=1e-10, rtol=0)


@pytest.mark.parametrize("eps", [0.0, 0.3])
def test_batch_matches_sequential(rng, eps):
    D = random_dictionary(rng, 64, 256)
    Y = rng.standard_normal((64, 100))
    params = PursuitParams(8, eps)
    code = batch_omp(D, Y, params, threads=2)
    for j in range(100):
        res = omp(D, Y[:, j], params)
        idx, vals = code.column(j)
        assert idx.tolist() == sorted(res.support.tolist())
        assert np.max(np.abs(vals - res.dense(256)[idx]), initial=0.0) <= 1e-8


def test_batch_sequential_supports_on_many_instances(rng):
    D = random_dictionary(rng, 32, 64)
    Y = rng.standard_normal((32, 1000))
    Y[:, ::7] = D.atoms[:, :3] @ rng.standard_normal((3, Y[:, ::7].shape[1]))
    params = PursuitParams(4, 0.2)
    codes = batch_omp_codes(D.atoms, Y, params.k0, params.epsilon)
    for j in range(1000):
        res = omp(D, Y[:, j], params)
        got = codes.support[j, :codes.nnz[j]]
        assert got.tolist() == res.support.tolist()


def test_batch_all_zero():
    D = Dictionary(np.eye(5))
    code = batch_omp(D, np.zeros((5, 7)), PursuitParams(3))
    assert code.shape == (5, 7)
    assert code.coefficients.nnz == 0


def test_batch_thread_count_invariance(rng):
    D = random_dictionary(rng, 16, 40)
    Y = rng.standard_normal((16, 3000))
    a = batch_omp_codes(D.atoms, Y, 5, 0.1, threads=1)
    b = batch_omp_codes(D.atoms, Y, 5, 0.1, threads=3)
    assert np.array_equal(a.support, b.support)
    assert a.coefs.tobytes() == b.coefs.tobytes()


def test_sparse_code_invariants(rng):
    D = random_dictionary(rng, 20, 50)
    code = batch_omp(D, rng.standard_normal((20, 40)), PursuitParams(4))
    assert code.nnz_per_column().max() <= 4
    for j in range(40):
        idx, _ = code.column(j)
        assert np.all(np.diff(idx) > 0)


def test_reconstruct_examples(rng):
    D = Dictionary(np.eye(6))
    code = batch_omp(D, np.zeros((6, 3)), PursuitParams(2))
    assert np.array_equal(reconstruct(D, code), np.zeros((6, 3)))
    y = np.zeros(6)
    y[2] = 3.0
    code = batch_omp(D, y[:, None], PursuitParams(2))
    assert code.column(0)[0].tolist() == [2]
    assert reconstruct(D, code)[:, 0].tolist() == y.tolist()


def test_reconstruct_round_trip(rng):
    D = random_dictionary(rng, 64, 128)
    cols = [sparse_signal(rng, D, 3)[2] for _ in range(30)]
    Y = np.stack(cols, axis=1)
    code = batch_omp(D, Y, PursuitParams(5, 1e-9))
    assert np.max(np.abs(reconstruct(D, code) - Y)) <= 1e-8


def test_reconstruct_dimension_mismatch(rng):
    code = batch_omp(Dictionary(np.eye(4)), np.ones((4, 2)), PursuitParams(2))
    with pytest.raises(ValueError):
        reconstruct(Dictionary(np.eye(5)), code)


def test_small_instance_optimality_report(rng):
    ratios = []
    for _ in range(40):
        D = random_dictionary(rng, 8, 12)
        y = rng.standard_normal(8)
        for k0 in (1, 2):
            opt, _ = best_subset(D.atoms, y, k0)
            res = omp(D, y, PursuitParams(k0))
            assert res.residual_norm >= opt - 1e-10
            ratios.append(res.residual_norm / opt)
    log.info("OMP / exhaustive residual ratio: median %.4f, max %.4f",
             np.median(ratios), np.max(ratios))
    print(f"OMP/optimal residual ratio: median {np.median(ratios):.4f} max {np.max(ratios):.4f}")

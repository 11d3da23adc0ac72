import numpy as np
import pytest

from mheipg import (
    ArrivalCost,
    MheProblem,
    NoiseSpec,
    Weights,
    Window,
    build_block,
    certify,
    check_diag_dominant,
    check_psd,
    hessian_sum_check,
    linear_model,
    pack,
    ramp_inputs,
    simulate,
    unicycle_model,
    window_from_trajectory,
)
from mheipg.convexity import VERDICT_INCONCLUSIVE, VERDICT_PSD, embed_blocks
from mheipg.mhe import stage_terms

from oracles import random_window_problem


def linear_problem(A, C, q, r, N=3, seed=0, pi=None):
    rng = np.random.default_rng(seed)
    model = linear_model(A, C)
    n = model.n
    window = Window(t=N, N=N, Y=rng.standard_normal((N, model.p)), U=np.zeros((N, 0)))
    return MheProblem(
        model=model,
        window=window,
        arrival=ArrivalCost(x_hat=np.zeros(n), Pi=np.eye(n) if pi is None else pi),
        weights=Weights(q_diag=q, r_diag=r),
    )


def test_build_block_linear_closed_form():
    rng = np.random.default_rng(1)
    A = 0.3 * rng.standard_normal((2, 2)) + np.eye(2)
    C = rng.standard_normal((1, 2))
    q = np.array([0.5, 1.5])
    r = np.array([2.0])
    p = linear_problem(A, C, q, r, N=3)
    xi = rng.standard_normal(8)
    Qi, Ri = np.diag(1 / q), np.diag(1 / r)
    expected_A11 = A.T @ Qi @ A + C.T @ Ri @ C
    for i in (1, 2):
        blk = build_block(p, xi, i)
        np.testing.assert_allclose(blk.matrix[:2, :2], expected_A11, atol=1e-12)
        np.testing.assert_allclose(blk.matrix[:2, 2:], -A.T @ Qi, atol=1e-12)
        np.testing.assert_allclose(blk.matrix[2:, 2:], Qi, atol=1e-12)
    blk0 = build_block(p, xi, 0)
    np.testing.assert_allclose(blk0.matrix[:2, :2], expected_A11 + np.eye(2), atol=1e-12)


def test_build_block_scalar_example():
    p = linear_problem(np.eye(1), np.eye(1), [1.0], [1.0], N=2)
    blk = build_block(p, np.zeros(3), 1)
    np.testing.assert_allclose(blk.matrix, [[2.0, -1.0], [-1.0, 1.0]], atol=1e-14)


def test_build_block_residual_free_unicycle(paper_weights):
    uni = unicycle_model(0.2)
    noise = NoiseSpec(process_std=[0.0] * 3, meas_std=[0.0] * 2, clip=1.0, seed=0)
    traj = simulate(uni, [0, 0, 0], ramp_inputs(30), noise, dt=0.2)
    t, N = 12, 4
    window = window_from_trajectory(traj, t, N)
    p = MheProblem(model=uni, window=window,
                   arrival=ArrivalCost(x_hat=traj.states[t - N], Pi=np.eye(3)),
                   weights=paper_weights)
    xi = pack(traj.states[t - N:t + 1])
    states = traj.states[t - N:t + 1]
    for i in range(N):
        blk = build_block(p, xi, i)
        st = stage_terms(p, states, i)
        expected = st["Jt_f"] + st["Jt_h"] + (p.arrival.pi_inv if i == 0 else 0.0)
        np.testing.assert_allclose(blk.matrix[:3, :3], expected, atol=1e-12)


def test_build_block_index_range(paper_weights):
    rng = np.random.default_rng(2)
    p, xi = random_window_problem(rng, N=3)
    with pytest.raises(IndexError):
        build_block(p, xi, 3)


def test_check_psd_examples():
    assert check_psd(np.array([[2.0, -1.0], [-1.0, 1.0]]))
    assert not check_psd(np.array([[0.0, 1.0], [1.0, 0.0]]))
    rng = np.random.default_rng(3)
    A = rng.standard_normal((4, 6))
    assert check_psd(A @ A.T)
    with pytest.raises(ValueError):
        check_psd(np.array([[1.0, 0.5], [-0.5, 1.0]]))


def test_check_diag_dominant_examples():
    assert check_diag_dominant([[2.0, -1.0], [-1.0, 1.0]])
    assert not check_diag_dominant([[1.0, 2.0], [0.0, 1.0]])
    assert check_diag_dominant(np.eye(5))


def test_dominance_route_implies_psd():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(2, 6))
        M = rng.standard_normal((n, n))
        M = 0.5 * (M + M.T)
        np.fill_diagonal(M, np.abs(M).sum(axis=1) - np.abs(np.diag(M)) + rng.uniform(0, 1, n))
        assert check_diag_dominant(M)
        assert check_psd(M)


def test_certify_scalar_linear_both_routes():
    p = linear_problem(np.eye(1), np.eye(1), [1.0], [1.0], N=2)
    report = certify(p, np.zeros(3))
    assert report.verdict == VERDICT_PSD
    assert report.all_psd and report.all_diag_dominant and report.diag_nonneg


def test_certify_unicycle_benchmark_instance(paper_weights):
    # benchmark parameters, no noise: the certificate holds at the truth
    uni = unicycle_model(0.2)
    noise = NoiseSpec(process_std=[0.0] * 3, meas_std=[0.0] * 2, clip=1.0, seed=0)
    traj = simulate(uni, [0, 0, 0], ramp_inputs(40), noise, dt=0.2)
    t, N = 30, 5
    window = window_from_trajectory(traj, t, N)
    p = MheProblem(model=uni, window=window,
                   arrival=ArrivalCost(x_hat=traj.states[t - N], Pi=np.eye(3)),
                   weights=paper_weights)
    report = certify(p, pack(traj.states[t - N:t + 1]))
    assert report.verdict == VERDICT_PSD


def test_certify_indefinite_block_is_inconclusive():
    # quadratic drift with a large residual drives the curvature term
    # negative; the certificate must refuse, not claim non-convexity
    def f(x, u):
        return np.array([x[0] + x[0] ** 2])

    from mheipg import SystemModel

    model = SystemModel(
        n=1, m=0, p=1,
        f=f,
        h=lambda x: x.copy(),
        J_f=lambda x, u: np.array([[1.0 + 2.0 * x[0]]]),
        J_h=lambda x: np.array([[1.0]]),
        H_f=lambda x, u: np.full((1, 1, 1), 2.0),
        H_h=lambda x: np.zeros((1, 1, 1)),
    )
    window = Window(t=1, N=1, Y=np.array([[0.0]]), U=np.zeros((1, 0)))
    p = MheProblem(model=model, window=window,
                   arrival=ArrivalCost(x_hat=[0.0], Pi=[[1.0]]),
                   weights=Weights(q_diag=[1.0], r_diag=[1.0]))
    # xi = [0, 5]: residual f(0) - 5 = -5, so A11 = 1 + 1 + (-5)(2) + 1 = -7
    xi = np.array([0.0, 5.0])
    blk = build_block(p, xi, 0)
    assert blk.min_eigenvalue < 0.0
    np.testing.assert_allclose(blk.matrix[0, 0], -7.0, atol=1e-12)
    report = certify(p, xi)
    assert report.verdict == VERDICT_INCONCLUSIVE


def test_block_symmetry_random_instances():
    rng = np.random.default_rng(5)
    for _ in range(30):
        p, xi = random_window_problem(rng)
        for i in range(p.N):
            M = build_block(p, xi, i).matrix
            assert np.max(np.abs(M - M.T)) <= 1e-12


def test_hessian_sum_reconstructs_hessian():
    rng = np.random.default_rng(6)
    for _ in range(10):
        p, xi = random_window_problem(rng)
        blocks = [build_block(p, xi, i) for i in range(p.N)]
        S = embed_blocks(p, blocks)
        H = p.hessian(xi).to_dense()
        np.testing.assert_allclose(2.0 * S, H, atol=1e-9 * max(1.0, np.max(np.abs(H))))
        assert hessian_sum_check(p, xi)


def test_hessian_sum_check_n1_exact():
    p = linear_problem(np.eye(1), np.eye(1), [1.0], [1.0], N=1)
    xi = np.array([0.3, -0.2])
    blocks = [build_block(p, xi, 0)]
    np.testing.assert_allclose(2.0 * embed_blocks(p, blocks), p.hessian(xi).to_dense(), atol=1e-13)


def test_psd_blocks_imply_psd_hessian_sample():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(100):
        p, xi = random_window_problem(rng)
        blocks = [build_block(p, xi, i) for i in range(p.N)]
        if all(b.min_eigenvalue >= -1e-10 for b in blocks):
            H = p.hessian(xi).to_dense()
            eig = np.linalg.eigvalsh(H)
            assert eig[0] >= -1e-8 * max(1.0, eig[-1])
            checked += 1
    assert checked > 0


def test_kronecker_stacking_matches_sum_form():
    # the weighted tensor contraction equals V' (I kron W) Hstack with the
    # row layout (derivative index major, output index minor)
    rng = np.random.default_rng(8)
    for n, p_dim in ((3, 2), (2, 2), (4, 3)):
        T = rng.standard_normal((p_dim, n, n))
        T = 0.5 * (T + T.transpose(0, 2, 1))
        res = rng.standard_normal(p_dim)
        w = rng.uniform(0.2, 2.0, size=p_dim)
        sum_form = np.einsum("k,kab->ab", w * res, T)

        V = np.kron(np.eye(n), res.reshape(-1, 1))          # (n*p, n)
        W = np.kron(np.eye(n), np.diag(w))                  # (n*p, n*p)
        Hstack = np.zeros((n * p_dim, n))
        for j in range(n):
            for k in range(p_dim):
                Hstack[j * p_dim + k, :] = T[k, j, :]
        kron_form = V.T @ W @ Hstack
        np.testing.assert_allclose(kron_form, sum_form, atol=1e-12)


def test_certify_report_consistency():
    rng = np.random.default_rng(9)
    p, xi = random_window_problem(rng, N=4)
    report = certify(p, xi)
    if report.verdict == VERDICT_PSD:
        assert report.all_psd
    if report.verdict == "certified_convex_dominance":
        assert report.all_diag_dominant and report.diag_nonneg

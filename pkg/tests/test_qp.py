import itertools

import numpy as np
import pytest

from aerialwbc.qp import QPInstance, dump_instance, load_instance, solve


def brute_force_oracle(p: QPInstance):
    """Enumerate every inequality active set; solve the KKT system of each,
    keep the feasible dual-nonnegative candidate with the lowest objective."""
    d, me, mi = p.dims()
    best = None
    for r in range(mi + 1):
        for combo in itertools.combinations(range(mi), r):
            rows = []
            if me:
                rows.extend(p.A_eq[i] for i in range(me))
            rows.extend(p.A_in[i] for i in combo)
            q = len(rows)
            KKT = np.zeros((d + q, d + q))
            KKT[:d, :d] = p.H
            rhs = np.concatenate([-p.g, np.zeros(q)])
            if q:
                A = np.array(rows)
                KKT[:d, d:] = A.T
                KKT[d:, :d] = A
                vals = list(p.b_eq) if me else []
                vals += [p.b_in[i] for i in combo]
                rhs[d:] = vals
            try:
                sol = np.linalg.solve(KKT, rhs)
            except np.linalg.LinAlgError:
                continue
            x = sol[:d]
            mu = sol[d + me:]
            if mi and np.any(p.A_in @ x > p.b_in + 1e-8):
                continue
            if me and np.any(np.abs(p.A_eq @ x - p.b_eq) > 1e-8):
                continue
            if np.any(mu < -1e-8):
                continue
            f = 0.5 * x @ p.H @ x + p.g @ x
            if best is None or f < best[0] - 1e-12:
                best = (f, x)
    return None if best is None else best[1]


def random_instance(rng, feasible=True):
    d = int(rng.integers(2, 7))
    mi = int(rng.integers(0, 8))
    me = int(rng.integers(0, min(2, d - 1) + 1))
    A = rng.normal(size=(d, d))
    H = A @ A.T + (0.1 + rng.random()) * np.eye(d)
    g = rng.normal(size=d)
    x0 = rng.normal(size=d)
    A_in = rng.normal(size=(mi, d)) if mi else None
    b_in = (A_in @ x0 + rng.random(mi)) if mi else None
    A_eq = rng.normal(size=(me, d)) if me else None
    b_eq = (A_eq @ x0) if me else None
    return QPInstance(H=H, g=g, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in)


def test_unconstrained_minimum():
    sol = solve(QPInstance(H=np.eye(2), g=np.array([-1.0, -1.0])))
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-12)


def test_single_equality():
    sol = solve(QPInstance(H=np.eye(2), g=np.zeros(2),
                           A_eq=np.array([[1.0, 1.0]]), b_eq=np.array([1.0])))
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, [0.5, 0.5], atol=1e-12)


def test_single_active_bound():
    # min 0.5 (x-2)^2 subject to x <= 1
    sol = solve(QPInstance(H=np.array([[1.0]]), g=np.array([-2.0]),
                           A_in=np.array([[1.0]]), b_in=np.array([1.0])))
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, [1.0], atol=1e-12)
    np.testing.assert_allclose(sol.mu_in, [1.0], atol=1e-12)
    assert sol.active_set == [0]


def test_infeasible_detection():
    sol = solve(QPInstance(H=np.eye(1), g=np.zeros(1),
                           A_in=np.array([[1.0], [-1.0]]),
                           b_in=np.array([-1.0, -1.0])))
    assert sol.status == "infeasible"


def test_random_instances_match_oracle():
    rng = np.random.default_rng(7)
    for _ in range(200):
        p = random_instance(rng)
        sol = solve(p)
        ref = brute_force_oracle(p)
        assert sol.status == "optimal"
        assert ref is not None
        np.testing.assert_allclose(sol.x, ref, atol=1e-7)
        assert sol.kkt_residual <= 1e-9


def test_kkt_conditions_reported(rng):
    for _ in range(50):
        p = random_instance(np.random.default_rng(rng.integers(1 << 30)))
        sol = solve(p)
        assert sol.status == "optimal"
        d, me, mi = p.dims()
        r = p.H @ sol.x + p.g
        if me:
            r = r + p.A_eq.T @ sol.lam_eq
        if mi:
            r = r + p.A_in.T @ sol.mu_in
            assert np.all(sol.mu_in >= -1e-9)
            assert np.all(p.A_in @ sol.x <= p.b_in + 1e-9)
        assert np.max(np.abs(r)) <= 1e-9


def test_determinism():
    rng = np.random.default_rng(3)
    p = random_instance(rng)
    baseline = solve(p).x.tobytes()
    for _ in range(5):
        assert solve(p).x.tobytes() == baseline


def test_scaling_covariance():
    rng = np.random.default_rng(11)
    for _ in range(20):
        p = random_instance(rng)
        x1 = solve(p).x
        c = 7.3
        p2 = QPInstance(H=c * p.H, g=c * p.g, A_eq=p.A_eq, b_eq=p.b_eq,
                        A_in=p.A_in, b_in=p.b_in)
        np.testing.assert_allclose(solve(p2).x, x1, atol=1e-9)


def test_duplicated_rows_handled():
    p = QPInstance(H=np.eye(2), g=np.array([-2.0, 0.0]),
                   A_in=np.array([[1.0, 0.0], [1.0, 0.0], [2.0, 0.0]]),
                   b_in=np.array([1.0, 1.0, 2.0]))
    sol = solve(p)
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, [1.0, 0.0], atol=1e-10)
    assert sol.kkt_residual <= 1e-9


def test_nonsymmetric_h_rejected():
    H = np.array([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValueError, match="symmetric"):
        solve(QPInstance(H=H, g=np.zeros(2)))


def test_indefinite_h_rejected():
    with pytest.raises(ValueError, match="positive definite"):
        solve(QPInstance(H=np.diag([1.0, -1.0]), g=np.zeros(2)))


def test_dump_and_load_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    p = random_instance(rng)
    path = tmp_path / "instance.txt"
    dump_instance(p, path)
    q = load_instance(path)
    np.testing.assert_allclose(q.H, p.H, atol=1e-15)
    np.testing.assert_allclose(q.g, p.g, atol=1e-15)
    if p.A_in is not None:
        np.testing.assert_allclose(q.A_in, p.A_in, atol=1e-15)
        np.testing.assert_allclose(q.b_in, p.b_in, atol=1e-15)
    np.testing.assert_allclose(solve(q).x, solve(p).x, atol=1e-12)

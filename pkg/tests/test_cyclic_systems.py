"""Cyclic chart, Hamiltonian, and flow tests."""

import numpy as np
import pytest

from quiverflow.cyclic_systems import (
    BlockLift,
    ChartBoundaryError,
    CyclicPoint,
    DarbouxChart,
    block_lift,
    chart_coords,
    chart_dimension,
    chart_with_coords,
    embed_eps0_in_delta,
    exact_flow_mk,
    family_Hlr,
    family_Hmkr,
    framed_weight_vector,
    from_darboux,
    from_framed,
    hamiltonian_Hlr_cyclic,
    hamiltonian_Hlr_lifted,
    hamiltonian_Hmk,
    independence_rank,
    partial_fraction_identity,
    random_chart,
    restrict_delta_to_eps0,
    symplectic_residual,
    to_darboux,
    to_framed,
)
from quiverflow.hamiltonian_dynamics import LZetaElement, e_r_ell, flow_IA, ia_poly
from quiverflow.rep_variety import (
    gauge_act,
    is_simple,
    poisson_bracket,
    random_gauge,
    relation_residual,
)

LAM2 = np.array([0.8, 0.45])
LAM3 = np.array([0.9, 0.4, -0.1])


def chart_distance(c1, c2):
    return max(
        np.max(np.abs(c1.x - c2.x)),
        np.max(np.abs(c1.p - c2.p)),
        np.max(np.abs(c1.phi - c2.phi)),
        np.max(np.abs(c1.psi - c2.psi)),
    )


def coll2a(x1=0.3, a=0.2, b=-0.7):
    X = np.array([[x1, 1.0], [0.0, x1]], dtype=complex)
    Y = np.array([[a, b], [1.0, a]], dtype=complex)
    v = np.array([[0.0], [2.0]], dtype=complex)
    w = np.array([[0.0, 1.0]], dtype=complex)
    return CyclicPoint(1, (2,), (1,), (X,), (Y,), (v,), (w,))


# ---------------------------------------------------------------------------
# points, lifts


def test_point_shape_validation():
    X = np.zeros((2, 2))
    with pytest.raises(ValueError):
        CyclicPoint(1, (2,), (1,), (np.zeros((2, 3)),), (X,), (np.zeros((2, 1)),), (np.zeros((1, 2)),))


def test_trivial_m1_n1_point():
    ch = DarbouxChart(
        "jordan", 1, np.array([0.4]), np.array([1.3]), np.ones((1, 1)), np.ones((1, 1))
    )
    V = from_darboux(ch, [1.0])
    assert V.residual([1.0]) <= 1e-14
    assert abs(V.X[0][0, 0] - 0.4) < 1e-15
    assert abs(V.Y[0][0, 0] - 1.3) < 1e-15


def test_trace_pairing_identity():
    ch = random_chart("delta", 2, 2, 2, LAM2, seed=0)
    V = from_darboux(ch, LAM2)
    assert abs(V.trace_pairing() - np.dot(LAM2, V.alpha)) <= 1e-10


def test_framed_round_trip():
    ch = random_chart("eps0", 3, 2, 2, LAM3, seed=1)
    V = from_darboux(ch, LAM3)
    P = to_framed(V)
    wl = framed_weight_vector(V, LAM3)
    assert relation_residual(P, wl) <= 1e-10
    W = from_framed(P)
    assert W.zeta == V.zeta
    for i in range(3):
        assert np.array_equal(W.X[i], V.X[i])
        assert np.array_equal(W.v[i], V.v[i])


def test_block_lift_structure_and_moment():
    ch = random_chart("delta", 3, 2, 1, LAM3, seed=2)
    V = from_darboux(ch, LAM3)
    L = block_lift(V)
    assert L.form_residual() == 0.0
    assert L.moment_residual(LAM3) <= 1e-11


# ---------------------------------------------------------------------------
# Hamiltonians


def test_Hmk_m1_is_momentum_power_sum():
    ch = DarbouxChart(
        "jordan", 1, np.array([0.4]), np.array([1.3]), np.ones((1, 1)), np.ones((1, 1))
    )
    V = from_darboux(ch, [1.0])
    for k in (1, 2, 3):
        assert abs(hamiltonian_Hmk(V, k) - 1.3**k) <= 1e-13


def test_Hmk_routes_cross_check_runs():
    ch = random_chart("eps0", 2, 2, 2, LAM2, seed=3)
    V = from_darboux(ch, LAM2)
    hamiltonian_Hmk(V, 1)
    hamiltonian_Hmk(V, 3)


def test_H2_chart_formula_m2_eps0():
    d = 2
    ch = random_chart("eps0", 2, 3, d, LAM2, seed=4)
    V = from_darboux(ch, LAM2)
    x, p = ch.x, ch.p
    pair = ch.psi @ ch.phi.T  # pair[a, b] = psi_a . phi_b
    expect = 0.25 * np.sum(p**2 - LAM2[1] ** 2 / x**2)
    for a in range(3):
        for b in range(a + 1, 3):
            expect -= 0.5 * (
                1.0 / (x[a] - x[b]) ** 2 + 1.0 / (x[a] + x[b]) ** 2
            ) * pair[a, b] * pair[b, a]
    assert abs(hamiltonian_Hmk(V, 1) - expect) <= 1e-10


def test_Hmk_equals_weighted_Hmkr_sum():
    ch = random_chart("delta", 2, 2, 2, LAM2, seed=5)
    V = from_darboux(ch, LAM2)
    tot = np.sum(LAM2)
    for k in (1, 2):
        s = sum(hamiltonian_Hlr_cyclic(V, 2 * k, r) for r in (1, 2))
        assert abs(hamiltonian_Hmk(V, k) + s / tot) <= 1e-10


def test_Hlr_ell0_specialization():
    ch = random_chart("delta", 2, 2, 2, LAM2, seed=6)
    V = from_darboux(ch, LAM2)
    for r in (1, 2):
        direct = -sum(
            (V.w[i][r - 1 : r, :] @ V.v[i][:, r - 1 : r])[0, 0] for i in range(2)
        )
        assert abs(hamiltonian_Hlr_cyclic(V, 0, r) - direct) <= 1e-13


def test_Hlr_matches_lifted_integral():
    for kind, m, d, lam in (("eps0", 2, 2, LAM2), ("delta", 3, 1, LAM3)):
        ch = random_chart(kind, m, 2, d, lam, seed=7)
        V = from_darboux(ch, lam)
        for ell in range(0, 2 * m + 1):
            for r in range(1, d + 1):
                a = hamiltonian_Hlr_cyclic(V, ell, r)
                b = hamiltonian_Hlr_lifted(V, ell, r)
                assert abs(a - b) <= 1e-12


def test_H11_coordinate_formula_m2_d1_delta():
    ch = random_chart("delta", 2, 3, 1, LAM2, seed=8)
    V = from_darboux(ch, LAM2)
    x = ch.x
    tot = np.sum(LAM2)
    phi = ch.phi[:, 0, :]  # row vectors, components indexed by vertex
    psi = ch.psi[:, :, 0]  # column vectors
    Fp = np.array([[0.0, 1.0], [1.0, 0.0]])
    Fm = np.array([[0.0, -1.0], [1.0, 0.0]])
    Z = np.diag([1.0, -1.0])
    expect = 0.0 + 0.0j
    for a in range(3):
        expect -= 0.5 * (
            (phi[a] @ Fp @ psi[a]) * ch.p[a]
            + (phi[a] @ Fm @ psi[a]) * (LAM2[1] - phi[a, 1] * psi[a, 1]) / x[a]
        )
    for a in range(3):
        for b in range(3):
            if a == b:
                continue
            expect -= 0.5 * (
                (phi[a] @ Fp @ psi[b]) * (phi[b] @ psi[a]) / (x[a] - x[b])
                + (phi[a] @ Fm @ psi[b]) * (phi[b] @ Z @ psi[a]) / (x[a] + x[b])
            )
    got = hamiltonian_Hlr_cyclic(V, 1, 1)
    direct = -(V.w[1] @ V.Y[1] @ V.v[0] + V.w[0] @ V.Y[0] @ V.v[1])[0, 0]
    assert abs(got - direct) <= 1e-12
    assert abs(got - expect) <= 1e-10


def test_H2r_tr_relation_m2():
    ch = random_chart("delta", 2, 2, 1, LAM2, seed=9)
    V = from_darboux(ch, LAM2)
    tr = np.trace(V.Y[0] @ V.Y[1])
    s = hamiltonian_Hlr_cyclic(V, 2, 1)
    assert abs(s + np.sum(LAM2) * tr) <= 1e-11


def test_hamiltonians_commute_and_gauge_invariant():
    ch = random_chart("delta", 2, 2, 2, LAM2, seed=10)
    V = from_darboux(ch, LAM2)
    P = to_framed(V)
    q = P.quiver
    polys = [
        ia_poly(q, e_r_ell(q, r, ell))
        for ell in range(1, 5)
        for r in (1, 2)
    ]
    g = random_gauge(P, seed=11)
    Pg = gauge_act(g, P)
    for i, f in enumerate(polys):
        assert abs(f.value(P) - f.value(Pg)) <= 1e-9
        for gpoly in polys[i + 1 :]:
            assert abs(poisson_bracket(P, f, gpoly)) <= 1e-9


# ---------------------------------------------------------------------------
# charts


def test_cm_chart_example_n2():
    ch = DarbouxChart(
        "jordan",
        1,
        np.array([0.0, 1.0]),
        np.array([0.0, 0.0]),
        np.ones((2, 1)),
        np.ones((2, 1)),
    )
    V = from_darboux(ch, [1.0])
    assert np.allclose(V.Y[0], np.array([[0.0, 1.0], [-1.0, 0.0]]), atol=1e-14)
    assert np.allclose(V.v[0], np.ones((2, 1)))
    assert np.allclose(V.w[0], np.ones((1, 2)))
    assert V.residual([1.0]) <= 1e-14


def test_chart_rejects_collisions_and_zero():
    with pytest.raises(ChartBoundaryError):
        DarbouxChart(
            "jordan",
            1,
            np.array([0.5, 0.5 + 1e-12]),
            np.zeros(2),
            np.ones((2, 1)),
            np.ones((2, 1)),
        ).validate([1.0])
    with pytest.raises(ChartBoundaryError):
        random_chart("eps0", 2, 2, 1, LAM2, seed=0).__class__(
            "eps0",
            2,
            np.array([0.0, 1.0]),
            np.zeros(2),
            np.ones((2, 1)),
            np.full((2, 1), np.sum(LAM2)),
        ).validate(LAM2)


def test_chart_rejects_bad_normalization():
    ch = random_chart("eps0", 2, 2, 2, LAM2, seed=12)
    bad = DarbouxChart(ch.kind, ch.m, ch.x, ch.p, 2.0 * ch.phi, ch.psi)
    with pytest.raises(ValueError):
        bad.validate(LAM2)


@pytest.mark.parametrize(
    "kind,m,n,d,lam",
    [
        ("jordan", 1, 3, 1, np.array([1.0])),
        ("jordan", 1, 2, 3, np.array([0.7])),
        ("eps0", 2, 2, 2, LAM2),
        ("eps0", 3, 2, 1, LAM3),
        ("delta", 2, 2, 2, LAM2),
        ("delta", 3, 2, 1, LAM3),
    ],
)
def test_round_trip(kind, m, n, d, lam):
    ch = random_chart(kind, m, n, d, lam, seed=13)
    V = from_darboux(ch, lam)
    assert V.residual(lam) <= 1e-11
    assert chart_distance(to_darboux(V), ch) <= 1e-9


def test_round_trip_gauge_invariance():
    ch = random_chart("eps0", 2, 2, 2, LAM2, seed=14)
    V = from_darboux(ch, LAM2)
    P = to_framed(V)
    Pg = gauge_act(random_gauge(P, seed=15), P)
    assert chart_distance(to_darboux(from_framed(Pg)), ch) <= 1e-8


def test_collision_point_rejected():
    V = coll2a()
    assert V.residual([1.0]) <= 1e-14
    with pytest.raises(ChartBoundaryError):
        to_darboux(V)


def test_chart_points_are_simple():
    for kind, m, d, lam in (("jordan", 1, 1, [1.0]), ("delta", 2, 2, LAM2)):
        ch = random_chart(kind, m, 2, d, lam, seed=16)
        assert is_simple(to_framed(from_darboux(ch, lam)))


def test_chart_dimensions():
    assert chart_dimension(random_chart("jordan", 1, 3, 1, [1.0], seed=0)) == 6
    assert chart_dimension(random_chart("eps0", 2, 2, 2, LAM2, seed=0)) == 8
    assert chart_dimension(random_chart("delta", 2, 2, 2, LAM2, seed=0)) == 16


def test_chart_coords_round_trip():
    for kind in ("eps0", "delta"):
        ch = random_chart(kind, 2, 2, 2, LAM2, seed=17)
        vec = chart_coords(ch)
        again = chart_with_coords(ch, vec, LAM2)
        assert chart_distance(again, ch) <= 1e-12


# ---------------------------------------------------------------------------
# flows


def test_exact_flow_zero_time():
    ch = random_chart("eps0", 2, 2, 1, LAM2, seed=18)
    V = from_darboux(ch, LAM2)
    W = exact_flow_mk(V, LAM2, {2: 0.0})
    for i in range(2):
        assert np.array_equal(W.X[i], V.X[i])


def test_exact_flow_m1_reduction():
    ch = random_chart("jordan", 1, 2, 1, [1.0], seed=19)
    V = from_darboux(ch, [1.0])
    t = 0.37
    W = exact_flow_mk(V, [1.0], {3: t})
    expect = V.X[0] - 3 * t * np.linalg.matrix_power(V.Y[0], 2)
    assert np.max(np.abs(W.X[0] - expect)) <= 1e-14


def test_exact_flow_conserves_hamiltonians_and_relations():
    ch = random_chart("eps0", 2, 2, 2, LAM2, seed=20)
    V = from_darboux(ch, LAM2)
    W = exact_flow_mk(V, LAM2, {2: 0.4, 4: -0.15})
    assert W.residual(LAM2) <= 1e-10
    assert block_lift(W).form_residual() == 0.0
    for k in (1, 2):
        for r in (1, 2):
            a = hamiltonian_Hlr_cyclic(V, 2 * k, r)
            b = hamiltonian_Hlr_cyclic(W, 2 * k, r)
            assert abs(a - b) <= 1e-10


def test_exact_flow_matches_bracket_flow():
    ch = random_chart("eps0", 2, 2, 1, LAM2, seed=21)
    V = from_darboux(ch, LAM2)
    P = to_framed(V)
    t = 0.3
    A = e_r_ell(P.quiver, 1, 2)
    traj = flow_IA(P, A, t, lam=framed_weight_vector(V, LAM2))
    che = to_darboux(from_framed(traj.points[-1]))
    W = exact_flow_mk(V, LAM2, {2: -t})
    assert chart_distance(to_darboux(W), che) <= 1e-8


def test_exact_flow_rejects_bad_index():
    ch = random_chart("eps0", 2, 1, 1, LAM2, seed=22)
    V = from_darboux(ch, LAM2)
    with pytest.raises(ValueError):
        exact_flow_mk(V, LAM2, {3: 0.1})


# ---------------------------------------------------------------------------
# independence


def test_independence_rank_eps0():
    ch = random_chart("eps0", 2, 2, 2, LAM2, seed=23)
    fam = family_Hmkr(2, 2, 2)
    assert independence_rank(ch, LAM2, fam) == 4


def test_independence_rank_delta():
    ch = random_chart("delta", 2, 1, 1, LAM2, seed=24)
    fam = family_Hlr(2, 1)
    assert independence_rank(ch, LAM2, fam) == 2


def test_constant_family_rank():
    d = 3
    lam = LAM2
    ch = random_chart("delta", 2, 2, d, lam, seed=25)
    fam = [
        (lambda V, r=r: hamiltonian_Hlr_cyclic(V, 0, r)) for r in range(1, d + 1)
    ]
    assert independence_rank(ch, lam, fam) == d - 1
    V = from_darboux(ch, lam)
    s = sum(f(V) for f in fam)
    assert abs(s - (-2 * np.sum(lam))) <= 1e-10


# ---------------------------------------------------------------------------
# embedding


def test_embedding_round_trip_and_values():
    ch = random_chart("eps0", 2, 2, 2, LAM2, seed=26)
    V = from_darboux(ch, LAM2)
    W = embed_eps0_in_delta(V)
    assert W.residual(LAM2) <= 1e-11
    back = restrict_delta_to_eps0(W)
    for i in range(2):
        assert np.array_equal(back.v[i], V.v[i])
    for k in (1, 2):
        for r in (1, 2):
            a = hamiltonian_Hlr_cyclic(V, 2 * k, r)
            b = hamiltonian_Hlr_cyclic(W, 2 * k, r)
            assert abs(a - b) <= 1e-12


def test_J1_flow_leaves_embedded_locus():
    ch = random_chart("eps0", 2, 1, 1, LAM2, seed=27)
    W = embed_eps0_in_delta(from_darboux(ch, LAM2))
    P = to_framed(W)
    q = P.quiver
    comps = {}
    for i in range(2):
        j = (i - 1) % 2
        comps[(str(i), ("a%d*" % j,))] = np.eye(1)
    A = LZetaElement(q, comps)
    traj = flow_IA(P, A, 0.2, lam=framed_weight_vector(W, LAM2))
    end = from_framed(traj.points[-1])
    off = max(np.max(np.abs(end.v[1])), np.max(np.abs(end.w[1])))
    assert off > 1e-4
    with pytest.raises(ValueError):
        restrict_delta_to_eps0(end)


# ---------------------------------------------------------------------------
# identities


def test_partial_fraction_trivial():
    lhs, rhs = partial_fraction_identity(0, 1, 2.0, 1.0)
    assert abs(lhs - 1.0) <= 1e-15
    assert abs(rhs - 1.0) <= 1e-15


def test_partial_fraction_m2():
    lhs, rhs = partial_fraction_identity(1, 2, 2.0, 1.0)
    assert abs(lhs - 1.0 / 3.0) <= 1e-14
    assert abs(lhs - rhs) <= 1e-14


def test_partial_fraction_random():
    rng = np.random.default_rng(28)
    for m in range(1, 7):
        for j in range(m):
            x = rng.standard_normal() + 1j * rng.standard_normal()
            y = rng.standard_normal() + 1j * rng.standard_normal()
            if abs(x**m - y**m) < 1e-3:
                continue
            lhs, rhs = partial_fraction_identity(j, m, x, y)
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_partial_fraction_pole():
    with pytest.raises(ZeroDivisionError):
        partial_fraction_identity(0, 2, 1.0, -1.0)


# ---------------------------------------------------------------------------
# symplectic diagnostics


@pytest.mark.parametrize(
    "kind,m,n,d,lam",
    [
        ("jordan", 1, 2, 1, np.array([1.0])),
        ("jordan", 1, 1, 2, np.array([0.7])),
        ("eps0", 2, 1, 2, LAM2),
        ("delta", 2, 1, 1, LAM2),
    ],
)
def test_symplectic_pairs(kind, m, n, d, lam):
    ch = random_chart(kind, m, n, d, lam, seed=29)
    assert symplectic_residual(ch, lam) <= 1e-8

import numpy as np
import pytest

from quiverflow.operator_algebra import (
    CrossedElement,
    HBarElement,
    MatrixOperator,
    RationalFunction,
    ce_epsilon,
    ce_sigma,
    ce_weight,
    ce_x,
    comm_y,
    crossed_mul,
    hbar_from_crossed,
    hbar_mul,
    hbar_one,
    hbar_y,
    hbar_zero,
    invert_unitriangular,
    matop_from_entries,
    matop_identity,
    matop_split_pm,
    rf_pole,
    rf_x,
    split_pm,
)

LAM2 = [0.7, 0.3]
LAM4 = [0.5, 0.2, -0.1, 0.3]
POLE = 0.4 + 0.9j
XS = np.array([2.7 + 1.1j, -3.2 + 0.6j, 1.9 - 2.4j, 4.1 + 3.3j])


def rf_close(f, g, tol=1e-12):
    a = f(XS)
    b = g(XS)
    return np.max(np.abs(a - b)) <= tol * (1.0 + np.max(np.abs(a)))


def ce_close(F, G, tol=1e-12):
    a = np.concatenate([c(XS) for c in F.comps])
    b = np.concatenate([c(XS) for c in G.comps])
    return np.max(np.abs(a - b)) <= tol * (1.0 + np.max(np.abs(a)))


def random_element(rng, lam, window, kmax=2, kmin=-2, pole=POLE):
    m = len(lam)
    coeffs = {}
    for k in rng.integers(kmin, kmax + 1, size=2):
        comps = [
            RationalFunction(rng.standard_normal(2) + 1j * rng.standard_normal(2))
            + rf_pole(pole, 1, rng.standard_normal())
            for _ in range(m)
        ]
        coeffs[int(k)] = CrossedElement(m, comps)
    return HBarElement(lam, window, coeffs)


def textbook_pdo_mul(A, B, window):
    """Independent product of formal series sum f_k d^k using the binomial
    expansion of d^k f = sum C(k,l) f^(l) d^(k-l)."""
    lo, hi = window
    out = {}
    for k1, f in A.items():
        for k2, g in B.items():
            gd = g
            l = 0
            cbin = 1.0
            while k1 - l + k2 >= lo:
                k = k1 - l + k2
                if k <= hi and cbin != 0:
                    out[k] = out.get(k, RationalFunction()) + cbin * f * gd
                if k1 >= 0 and l >= k1:
                    break
                cbin *= (k1 - l) / (l + 1)
                gd = gd.derivative()
                l += 1
    return out


class TestRationalFunction:
    def test_add_partial_fractions(self):
        f = rf_pole(1.0) + rf_pole(-1.0)
        g = RationalFunction([0.0, 2.0], [-1.0, 0.0, 1.0])
        assert rf_close(f, g)

    def test_derivative_of_inverse(self):
        f = rf_pole(0.0)
        assert rf_close(f.derivative(), rf_pole(0.0, 2, -1.0))

    def test_eval_after_cancellation(self):
        f = RationalFunction([-1.0, 0.0, 1.0], [-1.0, 1.0])
        assert abs(f(3.0) - 4.0) < 1e-12
        unreduced = (3.0001**2 - 1.0) / (3.0001 - 1.0)
        assert abs(f(3.0001) - unreduced) < 1e-10

    def test_zero_denominator_rejected(self):
        with pytest.raises(ZeroDivisionError):
            RationalFunction([1.0], [0.0])

    def test_division_by_zero_rejected(self):
        with pytest.raises(ZeroDivisionError):
            rf_x() / RationalFunction()

    def test_degree_cap(self):
        with pytest.raises(OverflowError):
            rf_pole(1.3, 70)

    def test_scale_arg(self):
        f = rf_pole(2.0, 2, 1.0) + RationalFunction([0.0, 3.0])
        a = -1.7 + 0.4j
        assert np.max(np.abs(f.scale_arg(a)(XS) - f(a * XS))) < 1e-12

    def test_repeated_pole_cancellation(self):
        f = rf_pole(POLE, 6, 2.0)
        g = RationalFunction(np.polynomial.polynomial.polyfromroots([POLE] * 4))
        assert len((f * g).roots) == 2

    def test_poles_clear(self):
        f = rf_pole(XS[0])
        assert not f.poles_clear(XS)
        assert f.poles_clear(XS + 10.0)


class TestCrossedElement:
    def test_epsilon_idempotents_m4(self):
        for k in range(4):
            ek = ce_epsilon(4, k)
            assert ce_close(crossed_mul(ek, ek), ek, 1e-14)
            for l in range(4):
                if l != k:
                    prod = crossed_mul(ek, ce_epsilon(4, l))
                    assert np.max(np.abs(prod.eval(1.3))) < 1e-14

    def test_epsilon_partition_of_unity(self):
        m = 5
        total = CrossedElement(m)
        for k in range(m):
            total = total + ce_epsilon(m, k)
        one = CrossedElement(m, [1.0] + [0.0] * (m - 1))
        assert ce_close(total, one, 1e-14)

    def test_m1_reduces_to_rational_product(self):
        f = CrossedElement(1, [rf_pole(0.3) + rf_x()])
        g = CrossedElement(1, [RationalFunction([1.0, 2.0])])
        assert rf_close(crossed_mul(f, g).comps[0], f.comps[0] * g.comps[0])

    def test_epsilon_x_shift_m3(self):
        x = ce_x(3)
        for i in range(3):
            lhs = crossed_mul(ce_epsilon(3, i), x)
            rhs = crossed_mul(x, ce_epsilon(3, (i + 1) % 3))
            assert ce_close(lhs, rhs, 1e-14)

    def test_sigma_x_twist(self):
        m = 3
        mu = np.exp(2j * np.pi / m)
        lhs = crossed_mul(ce_sigma(m), ce_x(m))
        rhs = crossed_mul(ce_x(m), ce_sigma(m))
        assert ce_close(lhs, CrossedElement(m, [0.0, rf_x() * (mu**-1), 0.0]), 1e-14)
        assert ce_close(rhs, CrossedElement(m, [0.0, rf_x(), 0.0]), 1e-14)


class TestCommY:
    def test_m1_is_derivative(self):
        out = comm_y(RationalFunction([0.0, 0.0, 1.0]), [1.0])
        assert rf_close(out.comps[0], RationalFunction([0.0, 2.0]))
        f = rf_pole(0.6, 2, 1.4) + RationalFunction([0.2, 0.0, 0.5])
        assert rf_close(comm_y(f, [1.0]).comps[0], f.derivative())

    def test_comm_x_is_weight(self):
        assert ce_close(comm_y(rf_x(), LAM2), ce_weight(LAM2), 1e-14)

    def test_comm_x_squared_m2(self):
        got = comm_y(RationalFunction([0.0, 0.0, 1.0]), LAM2)
        expected = ce_x(2) * sum(LAM2)
        assert ce_close(got, expected, 1e-13)
        c = ce_weight(LAM2)
        oracle = crossed_mul(c, ce_x(2)) + crossed_mul(ce_x(2), c)
        assert ce_close(got, oracle, 1e-13)

    def test_quotient_rule(self):
        q = RationalFunction([0.5, 1.0])
        lhs = comm_y(1.0 / q, LAM2)
        qc = comm_y(q, LAM2)
        inv = CrossedElement(2, [1.0 / q, RationalFunction()])
        rhs = -crossed_mul(crossed_mul(inv, qc), inv)
        assert ce_close(lhs, rhs, 1e-13)


class TestHBarMul:
    def test_inverse_derivative_times_x(self):
        lam = [1.0]
        P = hbar_mul(hbar_y(lam, -1), hbar_from_crossed(ce_x(1), lam))
        assert sorted(P.coeffs) == [-2, -1]
        assert rf_close(P.coeff(-1).comps[0], rf_x())
        assert rf_close(P.coeff(-2).comps[0], RationalFunction([-1.0]))

    def test_y_times_y_inverse(self):
        P = hbar_mul(hbar_y(LAM2, 1), hbar_y(LAM2, -1))
        assert sorted(P.coeffs) == [0]
        assert np.max(np.abs(P.coeff(0).eval(1.5) - np.array([1.0, 0.0]))) < 1e-14

    def test_cherednik_relation_exact(self):
        y = hbar_y(LAM2, 1)
        x = hbar_from_crossed(ce_x(2), LAM2)
        C = hbar_mul(y, x) - hbar_mul(x, y)
        assert sorted(C.coeffs) == [0]
        assert ce_close(C.coeff(0), ce_weight(LAM2), 1e-15)
        assert C.validity_floor is None

    def test_sector_bookkeeping_oracle_m2(self):
        f = RationalFunction([0.4, 1.1])
        fce = CrossedElement(2, [f, RationalFunction()])
        lhs = hbar_mul(
            hbar_y(LAM2, 1), hbar_from_crossed(crossed_mul(ce_epsilon(2, 0), fce), LAM2)
        )
        e1 = ce_epsilon(2, 1)
        assert ce_close(lhs.coeff(1), crossed_mul(e1, fce), 1e-12)
        assert ce_close(lhs.coeff(0), crossed_mul(e1, comm_y(f, LAM2)), 1e-12)

    @pytest.mark.parametrize(
        "lam,window,kmax,reps",
        [(LAM2, (-6, 6), 2, 2), (LAM4, (-4, 3), 1, 1)],
    )
    def test_associativity(self, lam, window, kmax, reps):
        rng = np.random.default_rng(7)
        for _ in range(reps):
            A, B, C = (random_element(rng, lam, window, kmax) for _ in range(3))
            L = hbar_mul(hbar_mul(A, B), C)
            R = hbar_mul(A, hbar_mul(B, C))
            floor = max(L.floor, R.floor)
            L.validity_floor = floor
            R.validity_floor = floor
            l, r = L.sample(), R.sample()
            assert np.max(np.abs(l - r)) <= 1e-10 * (1.0 + np.max(np.abs(l)))

    def test_m1_textbook_regression(self):
        rng = np.random.default_rng(3)
        window = (-12, 6)
        for _ in range(10):
            ops = []
            for _ in range(2):
                ks = rng.integers(-4, 4, size=2)
                ops.append(
                    {
                        int(k): RationalFunction(rng.standard_normal(3))
                        + rf_pole(POLE, 1, rng.standard_normal())
                        for k in ks
                    }
                )
            ref = textbook_pdo_mul(ops[0], ops[1], window)
            HP = hbar_mul(
                *(
                    HBarElement(
                        [1.0], window, {k: CrossedElement(1, [f]) for k, f in op.items()}
                    )
                    for op in ops
                )
            )
            scale = 1.0 + max(
                np.max(np.abs(f(XS))) for f in ref.values() if not f.is_zero()
            )
            for k in range(window[0], window[1] + 1):
                a = ref.get(k, RationalFunction())(XS)
                b = HP.coeff(k).comps[0](XS)
                assert np.max(np.abs(a - b)) <= 1e-12 * scale

    def test_deeper_window_agrees_on_guaranteed_part(self):
        rng = np.random.default_rng(11)
        A = random_element(rng, LAM2, (-6, 4))
        B = random_element(rng, LAM2, (-6, 4))
        P1 = hbar_mul(A, B)
        A2 = HBarElement(LAM2, (-10, 4), A.coeffs)
        B2 = HBarElement(LAM2, (-10, 4), B.coeffs)
        P2 = hbar_mul(A2, B2)
        for k in range(P1.floor, 5):
            a = P1.coeff(k).eval(XS)
            b = P2.coeff(k).eval(XS)
            assert np.max(np.abs(a - b)) <= 1e-10 * (1.0 + np.max(np.abs(b)))

    def test_validity_floor_rises_through_products(self):
        lam = [1.0]
        x = hbar_from_crossed(ce_x(1), lam)
        exact = hbar_mul(hbar_y(lam, -1), x)
        assert exact.validity_floor is None
        f = hbar_from_crossed(CrossedElement(1, [rf_pole(POLE)]), lam)
        tail = hbar_mul(hbar_y(lam, -1), f)
        assert tail.validity_floor == tail.window[0]
        shifted = hbar_mul(tail, hbar_y(lam, 2))
        assert shifted.validity_floor == tail.window[0] + 2

    def test_window_overflow_raises(self):
        with pytest.raises(ValueError):
            hbar_mul(hbar_y(LAM2, 4), hbar_y(LAM2, 4))

    def test_coefficient_outside_window_rejected(self):
        with pytest.raises(ValueError):
            HBarElement(LAM2, (-2, 2), {5: 1.0})


class TestSplitAndInvert:
    def test_split_pure_positive(self):
        F = hbar_y(LAM2, 2)
        plus, minus = split_pm(F)
        assert sorted(plus.coeffs) == [2] and not minus.coeffs

    def test_split_sum_and_fixpoint(self):
        rng = np.random.default_rng(5)
        F = random_element(rng, LAM2, (-6, 4))
        plus, minus = split_pm(F)
        total = plus + minus
        assert np.max(np.abs(total.sample() - F.sample())) < 1e-14
        again = split_pm(plus)
        assert sorted(again[0].coeffs) == sorted(plus.coeffs) and not again[1].coeffs

    def test_invert_identity(self):
        M = hbar_one(LAM2, (-8, 4))
        assert not (invert_unitriangular(M) - 1.0).coeffs

    def test_invert_single_tail(self):
        a = CrossedElement(2, [rf_pole(POLE, 1, 0.9), RationalFunction([0.2])])
        M = hbar_one(LAM2, (-8, 4)) + hbar_from_crossed(a, LAM2, (-8, 4), k=-1)
        Mi = invert_unitriangular(M)
        resid = hbar_mul(M, Mi) - 1.0
        s = resid.sample()
        assert s.size == 0 or np.max(np.abs(s)) < 1e-10
        resid = hbar_mul(Mi, M) - 1.0
        s = resid.sample()
        assert s.size == 0 or np.max(np.abs(s)) < 1e-10

    def test_invert_rejects_positive_part(self):
        M = hbar_one(LAM2, (-8, 4)) + hbar_y(LAM2, 1, (-8, 4))
        with pytest.raises(ValueError):
            invert_unitriangular(M)

    def test_invert_matrix_nilpotent_top(self):
        window = (-8, 4)
        a = hbar_from_crossed(
            CrossedElement(2, [rf_pole(POLE), RationalFunction()]), LAM2, window, k=-1
        )
        b = hbar_from_crossed(
            CrossedElement(2, [RationalFunction([0.3]), RationalFunction([0.1])]),
            LAM2,
            window,
            k=-2,
        )
        M = matop_identity(2, LAM2, window) + matop_from_entries(
            [[hbar_zero(LAM2, window), a], [b, hbar_zero(LAM2, window)]]
        )
        Mi = invert_unitriangular(M)
        resid = (M @ Mi) - 1.0
        s = resid.sample()
        assert np.max(np.abs(s)) < 1e-10


class TestMatrixOperator:
    def test_matmul_matches_entrywise(self):
        window = (-6, 4)
        rng = np.random.default_rng(9)
        ents = np.array(
            [[random_element(rng, LAM2, window, 1) for _ in range(2)] for _ in range(2)],
            dtype=object,
        )
        A = MatrixOperator(ents)
        B = matop_identity(2, LAM2, window)
        P = A @ B
        for i in range(2):
            for j in range(2):
                assert np.max(np.abs(P.entries[i, j].sample() - A.entries[i, j].sample())) < 1e-14

    def test_split_reassembles(self):
        window = (-6, 4)
        rng = np.random.default_rng(13)
        ents = np.array(
            [[random_element(rng, LAM2, window, 1) for _ in range(2)] for _ in range(2)],
            dtype=object,
        )
        A = MatrixOperator(ents)
        P, N = matop_split_pm(A)
        back = P + N
        assert np.max(np.abs(back.sample() - A.sample())) < 1e-14

    def test_mismatched_window_rejected(self):
        bad = np.array(
            [
                [hbar_one(LAM2, (-6, 4)), hbar_zero(LAM2, (-6, 4))],
                [hbar_zero(LAM2, (-6, 4)), hbar_one(LAM2, (-4, 2))],
            ],
            dtype=object,
        )
        with pytest.raises(ValueError):
            MatrixOperator(bad)

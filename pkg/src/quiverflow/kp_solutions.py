"""Dressing construction for rational solutions of KP-type hierarchies.

A seed is an on-shell framed cyclic-quiver point.  Its block lift gives a
pair of matrices with framing columns and rows, from which a unitriangular
dressing operator M is assembled inside the windowed operator algebra.
Conjugating y (or a weighted diagonal times y) by M produces a Lax operator
together with a complete family of commuting idempotents, and time flows of
the seed translate into hierarchy flows of the dressed operators.
"""

from dataclasses import dataclass

import numpy as np
import sympy

from .cyclic_systems import (
    CyclicPoint,
    block_lift,
    exact_flow_mk,
    from_framed,
    to_framed,
)
from .hamiltonian_dynamics import e_r_ell, flow_IA
from .operator_algebra import (
    DEFAULT_WINDOW,
    CrossedElement,
    _as_ce,
    HBarElement,
    MatrixOperator,
    RationalFunction,
    ce_epsilon,
    ce_sigma,
    crossed_mul,
    degree_cap,
    hbar_from_crossed,
    hbar_one,
    hbar_zero,
    invert_unitriangular,
    matop_identity,
    rf_pole,
    set_degree_cap,
    split_pm,
)
from .rep_variety import is_simple

ONSHELL_TOL = 1e-8

# Depth-(window) products of dressed operators legitimately exceed the
# default runaway guard on the rational-function degree, so the routines in
# this module widen it while they work.
_KP_DEGREE_CAP = 512


class _cap_guard:
    def __enter__(self):
        self._old = degree_cap()
        set_degree_cap(max(self._old, _KP_DEGREE_CAP))

    def __exit__(self, *exc):
        set_degree_cap(self._old if self._old != 64 else None)


# ---------------------------------------------------------------------------
# seeds


@dataclass(frozen=True)
class SolutionSeed:
    """On-shell cyclic point with weight, order window and optional diagonal
    leading weights for the Lax operator.

    Times are supplied per flow when the seed is used: an integer key ``ell``
    (a positive multiple of m) selects the polynomial flow shifting the
    forward matrices, a pair ``(ell, r)`` selects the numerically integrated
    flow of the degree-ell framing Hamiltonian in component r."""

    point: CyclicPoint
    lam: tuple
    window: tuple = DEFAULT_WINDOW
    a_diag: tuple = None

    def __post_init__(self):
        lam = tuple(complex(z) for z in self.lam)
        object.__setattr__(self, "lam", lam)
        if len(lam) != self.point.m:
            raise ValueError("weight length must match the vertex count")
        res = self.point.residual(np.asarray(lam))
        if res > ONSHELL_TOL:
            raise ValueError("seed is off shell (residual %.3g)" % res)
        lo, hi = self.window
        if lo > hi:
            raise ValueError("empty order window")
        if -lo < sum(self.point.alpha) + 2:
            raise ValueError("window too shallow for the seed dimension")
        if self.a_diag is not None:
            a = tuple(complex(z) for z in self.a_diag)
            if len(a) != self.d:
                raise ValueError("diagonal weight length must equal d")
            if any(z == 0 for z in a):
                raise ValueError("diagonal weights must be nonzero")
            object.__setattr__(self, "a_diag", a)

    @property
    def m(self) -> int:
        return self.point.m

    @property
    def d(self) -> int:
        """Framing multiplicity (columns of the nonzero framing blocks)."""
        return max(self.point.zeta)

    @property
    def kind(self) -> str:
        ze = self.point.zeta
        if self.m > 1 and all(z == 0 for z in ze[1:]):
            return "eps0"
        return "delta"


def _check_times(seed: SolutionSeed, times: dict) -> dict:
    out = {}
    for key, t in times.items():
        if isinstance(key, tuple):
            ell, r = key
            if not (1 <= r <= seed.d):
                raise ValueError("component index out of range in %s" % (key,))
            if ell < 0:
                raise ValueError("negative flow degree in %s" % (key,))
        else:
            ell = int(key)
            if seed.d > 1:
                raise ValueError(
                    "aggregate integer-keyed times are only defined for d = 1;"
                    " use (ell, r) keys"
                )
        if seed.kind == "eps0" and ell % seed.m != 0:
            raise ValueError(
                "a spherical seed only carries flows of degree divisible by m"
            )
        out[key] = complex(t)
    return out


def evolve_seed(seed: SolutionSeed, times: dict = None) -> CyclicPoint:
    """The seed point moved along the requested hierarchy flows.

    Integer-keyed times use the exact polynomial flow; pair-keyed times are
    integrated numerically one at a time (the flows commute on shell).  With
    diagonal weights a_r, the pair (ell, r) time is rescaled by a_r**-ell."""
    times = _check_times(seed, dict(times or {}))
    V = seed.point
    active = {k: t for k, t in times.items() if t != 0}
    if active and not is_simple(to_framed(V)):
        raise ValueError("flows require a simple seed module")
    spher = {int(k): t for k, t in active.items() if not isinstance(k, tuple)}
    if seed.a_diag is not None and spher:
        if seed.d != 1:
            raise ValueError(
                "integer-keyed times need component indices when d > 1"
            )
        spher = {k: t * seed.a_diag[0] ** (-k) for k, t in spher.items()}
    if spher:
        V = exact_flow_mk(V, np.asarray(seed.lam), spher)
    for key, t in active.items():
        if not isinstance(key, tuple):
            continue
        ell, r = key
        if seed.a_diag is not None:
            t = t * seed.a_diag[r - 1] ** (-ell)
        P = to_framed(V)
        A = e_r_ell(P.quiver, r, ell, cap=max(12, ell + 1))
        traj = flow_IA(P, A, -t, tol=1e-12)
        V = from_framed(traj.points[-1])
    return V


# ---------------------------------------------------------------------------
# resolvent helpers


def _faddeev(A: np.ndarray):
    """Coefficient matrices of adj(x - A) in descending powers of x, and the
    monic characteristic polynomial coefficients (descending)."""
    N = A.shape[0]
    Bs = [np.eye(N, dtype=complex)]
    cs = [1.0 + 0j]
    M = np.eye(N, dtype=complex)
    for k in range(1, N + 1):
        AM = A @ M
        c = -np.trace(AM) / k
        cs.append(c)
        M = AM + c * np.eye(N)
        if k < N:
            Bs.append(M)
    return Bs, np.array(cs, dtype=complex)


def build_M(seed: SolutionSeed, times: dict = None) -> MatrixOperator:
    """The unitriangular dressing operator of the (optionally evolved) seed.

    Entry (r, s) is delta_rs plus, for every framed vertex pair (i, j) and
    every tail depth l, the idempotent-framed resolvent contraction
    eps_i w_i (X - x)^{-1} Y^l v_j eps_{j-l-1} placed at order -l-1."""
    with _cap_guard():
        return _build_M_inner(seed, times)


def _build_M_inner(seed, times):
    V = evolve_seed(seed, times)
    B = block_lift(V)
    m, d = seed.m, seed.d
    lam = np.asarray(seed.lam)
    lo, hi = seed.window
    N = B.X.shape[0]
    depth = -lo
    entries = np.empty((d, d), dtype=object)
    for r in range(d):
        for s in range(d):
            entries[r, s] = hbar_one(lam, seed.window) if r == s else hbar_zero(
                lam, seed.window
            )
    if N == 0:
        return MatrixOperator(entries)

    roots = tuple(np.linalg.eigvals(B.X))
    Bs, _ = _faddeev(B.X)
    eps = [ce_epsilon(m, i) for i in range(m)]
    coeffs = {}  # (r, s) -> {order: CrossedElement}

    framed = [i for i in range(m) if V.zeta[i] > 0]
    tails = {}
    terminated = True
    for j in framed:
        cols = [B.v[j]]
        for l in range(1, depth):
            cols.append(B.Y @ cols[-1])
        if np.max(np.abs(B.Y @ cols[-1])) > 0:
            terminated = False
        tails[j] = cols
    for i in framed:
        for j in framed:
            for l in range(depth):
                # ascending numerator coefficients of w_i adj(x-X) Y^l v_j
                mats = [B.w[i] @ Bk @ tails[j][l] for Bk in Bs]
                if all(np.max(np.abs(M)) == 0 for M in mats):
                    continue
                er = eps[(j - l - 1) % m]
                for r in range(V.zeta[i]):
                    for s in range(V.zeta[j]):
                        num = np.array([M[r, s] for M in reversed(mats)])
                        if np.max(np.abs(num)) == 0:
                            continue
                        g = -RationalFunction(num, roots=roots)
                        c = crossed_mul(crossed_mul(eps[i], _as_ce(g, m)), er)
                        slot = coeffs.setdefault((r, s), {})
                        slot[-l - 1] = slot.get(-l - 1, CrossedElement(m)) + c
    floor = None if terminated else lo
    for (r, s), cf in coeffs.items():
        entries[r, s] = entries[r, s] + HBarElement(lam, seed.window, cf, floor)
    return MatrixOperator(entries)


# ---------------------------------------------------------------------------
# dressing


@dataclass(frozen=True)
class LaxData:
    """Dressed operators of a seed at fixed times: the dressing operator, its
    inverse, the Lax operator and the complete idempotent family."""

    seed: SolutionSeed
    times: dict
    M: MatrixOperator
    Minv: MatrixOperator
    L: MatrixOperator
    R: tuple


def _matop_diag(values, lam, window) -> MatrixOperator:
    """Diagonal matrix operator from order-0 scalar/crossed diagonal values."""
    d = len(values)
    out = np.empty((d, d), dtype=object)
    for i in range(d):
        for j in range(d):
            if i == j:
                out[i, j] = hbar_from_crossed(values[i], lam, window)
            else:
                out[i, j] = hbar_zero(lam, window)
    return MatrixOperator(out)


def _matop_unit(r: int, d: int, lam, window) -> MatrixOperator:
    vals = [1.0 if i == r - 1 else 0.0 for i in range(d)]
    return _matop_diag(vals, lam, window)


def _matop_y(seed: SolutionSeed, power: int = 1, unit: int = None) -> MatrixOperator:
    d, lam, window = seed.d, np.asarray(seed.lam), seed.window
    a = seed.a_diag if (seed.a_diag is not None and power == 1) else (1.0,) * d
    out = np.empty((d, d), dtype=object)
    for i in range(d):
        for j in range(d):
            keep = i == j and (unit is None or i == unit - 1)
            cf = {power: a[i]} if keep else {}
            out[i, j] = HBarElement(lam, window, cf)
    return MatrixOperator(out)


def matop_scale(M: MatrixOperator, c) -> MatrixOperator:
    out = np.empty((M.d, M.d), dtype=object)
    for i in range(M.d):
        for j in range(M.d):
            e = M.entries[i, j]
            out[i, j] = HBarElement(
                e.lam, e.window, {k: c * v for k, v in e.coeffs.items()},
                e.validity_floor,
            )
    return MatrixOperator(out)


def _operator_poles(D) -> list:
    entries = D.entries.ravel() if isinstance(D, MatrixOperator) else [D]
    out = []
    for e in entries:
        for c in e.coeffs.values():
            for f in c.comps:
                out.extend(a for a, _ in f.parts)
    return out


def _safe_samples(D, count: int = 12) -> np.ndarray:
    """Evaluation points on a circle clearing every coefficient pole by >= 2,
    so near-pole amplification cannot dominate a residual."""
    poles = _operator_poles(D)
    radius = 2.0 + (max(abs(a) for a in poles) if poles else 0.0)
    ang = 2 * np.pi * (np.arange(count) + 0.351) / count
    return radius * np.exp(1j * ang)


def op_dist(A, B=None, xs=None) -> float:
    """Largest sampled coefficient magnitude of A - B over guaranteed orders."""
    D = A if B is None else A - B
    if xs is None:
        xs = _safe_samples(D)
    vals = D.sample(xs)
    return float(np.max(np.abs(vals))) if vals.size else 0.0


def dress(
    seed: SolutionSeed, times: dict = None, M: MatrixOperator = None,
    check: bool = True,
) -> LaxData:
    """Conjugate the weighted shift by the dressing operator.

    Returns the Lax operator L = M (A) y M^{-1} and the idempotents
    R_r = M E_r M^{-1}; with ``check`` the partition, idempotency and
    commutation identities are validated on pole-clearing samples."""
    times = dict(times or {})
    with _cap_guard():
        if M is None:
            M = _build_M_inner(seed, times)
        else:
            _, neg = _matop_split(M - matop_identity(
                seed.d, np.asarray(seed.lam), seed.window
            ))
            if op_dist(M - matop_identity(
                seed.d, np.asarray(seed.lam), seed.window
            ) - neg) > 0:
                raise ValueError("dressing operator is not unitriangular")
        Minv = invert_unitriangular(M)
        L = M @ _matop_y(seed) @ Minv
        R = tuple(
            M @ _matop_unit(r, seed.d, np.asarray(seed.lam), seed.window) @ Minv
            for r in range(1, seed.d + 1)
        )
        data = LaxData(seed, times, M, Minv, L, R)
        if check:
            res = constraint_residuals(data)
            worst = max(res.values())
            if worst > 1e-6:
                raise ValueError(
                    "dressed-operator identities fail at %.3g" % worst
                )
    return data


def constraint_residuals(data: LaxData) -> dict:
    """Sampled residuals of the algebraic identities among L and the R_r."""
    with _cap_guard():
        d = data.seed.d
        lam, window = np.asarray(data.seed.lam), data.seed.window
        out = {}
        total = None
        for r, Rr in enumerate(data.R):
            total = Rr if total is None else total + Rr
            out["commute_%d" % (r + 1)] = op_dist(
                data.L @ Rr - Rr @ data.L
            )
        out["partition"] = op_dist(total, matop_identity(d, lam, window))
        for r in range(d):
            for s in range(d):
                prod = data.R[r] @ data.R[s]
                ref = data.R[r] if r == s else None
                out["idem_%d%d" % (r + 1, s + 1)] = (
                    op_dist(prod, ref) if ref is not None else op_dist(prod)
                )
        return out


def equivariance_residuals(data: LaxData) -> dict:
    """Sampled residuals of the grading identities.

    sigma L = mu L sigma always holds for the dressed shift of a spherical
    seed; eps_i L = L eps_{i-1} expresses the same fact idempotent-wise, and
    sigma R_r = R_r sigma states that the idempotents are grading-neutral."""
    seed = data.seed
    m = seed.m
    lam, window = np.asarray(seed.lam), seed.window
    with _cap_guard():
        mu = np.exp(2j * np.pi / m)
        sig = _matop_diag([ce_sigma(m)] * seed.d, lam, window)
        out = {
            "sigma_L": op_dist(sig @ data.L, matop_scale(data.L @ sig, mu))
        }
        for i in range(m):
            Ei = _matop_diag([ce_epsilon(m, i)] * seed.d, lam, window)
            Em = _matop_diag([ce_epsilon(m, (i - 1) % m)] * seed.d, lam, window)
            out["eps_%d" % i] = op_dist(Ei @ data.L, data.L @ Em)
        for r, Rr in enumerate(data.R):
            out["sigma_R%d" % (r + 1)] = op_dist(sig @ Rr, Rr @ sig)
        return out


# ---------------------------------------------------------------------------
# hierarchy flow residuals


def lax_residual(
    seed: SolutionSeed,
    ell: int,
    r: int = 1,
    h: float = 1e-3,
    times: dict = None,
    key=None,
    order: int = 2,
    base=None,
) -> float:
    """Largest centered-difference residual of the hierarchy equations in
    the time of the degree-ell, component-r flow around the given base
    times; the per-equation breakdown is in lax_residuals."""
    return max(
        lax_residuals(seed, ell, r, h, times, key, order, base).values()
    )


def lax_residuals(
    seed: SolutionSeed,
    ell: int,
    r: int = 1,
    h: float = 1e-3,
    times: dict = None,
    key=None,
    order: int = 2,
    base=None,
) -> dict:
    """Centered-difference residuals of the hierarchy equations in the time
    of the degree-ell, component-r flow around the given base times.

    Compares dL/dt with [(L^ell R_r)_+, L], each dR_s/dt with
    [(L^ell R_r)_+, R_s], and dM/dt with -(M y^ell E_r M^-1)_- M.
    order selects the centered-difference stencil (2 or 4); a dressing at
    the base times may be passed in to avoid recomputing it."""
    if not 1e-4 <= h <= 1e-2:
        raise ValueError("step must lie in [1e-4, 1e-2]")
    if order not in (2, 4):
        raise ValueError("stencil order must be 2 or 4")
    times = dict(times or {})
    if key is None:
        key = (
            ell
            if (seed.d == 1 and r == 1 and ell % seed.m == 0 and ell > 0)
            else (ell, r)
        )
    with _cap_guard():
        if base is None:
            base = dress(seed, times, check=False)

        def shifted(step):
            t = dict(times)
            t[key] = t.get(key, 0.0) + step
            return dress(seed, t, check=False)

        if order == 2:
            stencil = ((h, 0.5 / h), (-h, -0.5 / h))
        else:
            stencil = (
                (h, 8.0 / (12 * h)),
                (-h, -8.0 / (12 * h)),
                (2 * h, -1.0 / (12 * h)),
                (-2 * h, 1.0 / (12 * h)),
            )
        evals = [(shifted(step), wgt) for step, wgt in stencil]

        def fd(pick):
            acc = matop_scale(pick(evals[0][0]), evals[0][1])
            for datum, wgt in evals[1:]:
                acc = acc + matop_scale(pick(datum), wgt)
            return acc

        P, _ = _matop_power_R(base, ell, r)
        out = {}
        dL = fd(lambda dat: dat.L)
        out["L"] = op_dist(dL, P @ base.L - base.L @ P)
        for s in range(seed.d):
            dR = fd(lambda dat, s=s: dat.R[s])
            out["R_%d" % (s + 1)] = op_dist(
                dR, P @ base.R[s] - base.R[s] @ P
            )
        dM = fd(lambda dat: dat.M)
        NY = base.M @ _matop_yl_unit(seed, ell, r) @ base.Minv
        _, Nm = _matop_split(NY)
        out["M"] = op_dist(dM, matop_scale(Nm @ base.M, -1.0))
        return out


def _matop_yl_unit(seed, ell, r):
    d, lam, window = seed.d, np.asarray(seed.lam), seed.window
    out = np.empty((d, d), dtype=object)
    for i in range(d):
        for j in range(d):
            cf = {ell: 1.0} if (i == j == r - 1 and ell <= window[1]) else {}
            out[i, j] = HBarElement(lam, window, cf)
    return MatrixOperator(out)


def _matop_split(M: MatrixOperator):
    d = M.d
    P = np.empty((d, d), dtype=object)
    N = np.empty((d, d), dtype=object)
    for i in range(d):
        for j in range(d):
            P[i, j], N[i, j] = split_pm(M.entries[i, j])
    return MatrixOperator(P), MatrixOperator(N)


def _matop_power_R(data: LaxData, ell: int, r: int):
    """Nonnegative and negative parts of L^ell R_r."""
    acc = data.R[r - 1]
    for _ in range(ell):
        acc = data.L @ acc
    return _matop_split(acc)


# ---------------------------------------------------------------------------
# the scalar KP equation (m = 1)


def _cm_positions(seed: SolutionSeed, t2: complex, t3: complex) -> np.ndarray:
    B = block_lift(seed.point)
    return np.linalg.eigvals(B.X - 2 * t2 * B.Y - 3 * t3 * (B.Y @ B.Y))


def kp_pde_residual(
    seed: SolutionSeed,
    xs=None,
    t2s=None,
    t3s=None,
    exclusion: float = 0.35,
) -> float:
    """Largest residual of 3 u_{t2 t2} = d/dx (4 u_{t3} - 6 u u_x - u_xxx)
    over a grid, for the rational solution carried by a one-vertex seed.

    u(x, t2, t3) = 2 d^2/dx^2 log det(x - X + 2 t2 Y + 3 t3 Y^2); the
    derivatives are taken in closed form and grid points within ``exclusion``
    of a pole are skipped."""
    if seed.m != 1 or seed.d != 1:
        raise ValueError("the scalar KP residual needs m = 1, d = 1")
    B = block_lift(seed.point)
    n = B.X.shape[0]
    if xs is None:
        xs = np.linspace(-2.5, 2.5, 10)
    if t2s is None:
        t2s = np.linspace(-0.4, 0.4, 5)
    if t3s is None:
        t3s = np.linspace(-0.3, 0.3, 5)
    if n == 0:
        return 0.0
    x, t2, t3 = sympy.symbols("x t2 t3")
    def _c(z):
        return sympy.Float(z.real, 17) + sympy.I * sympy.Float(z.imag, 17)

    Y2 = B.Y @ B.Y
    Mat = sympy.Matrix(
        n,
        n,
        lambda i, j: _c(B.X[i, j]) - 2 * t2 * _c(B.Y[i, j]) - 3 * t3 * _c(Y2[i, j]),
    )
    theta = (x * sympy.eye(n) - Mat).det()
    # u = -2 sum (x - x_a)^-2 = +2 (log theta)''
    u = 2 * (sympy.diff(theta, x, 2) / theta - (sympy.diff(theta, x) / theta) ** 2)
    res = 3 * sympy.diff(u, t2, 2) - sympy.diff(
        4 * sympy.diff(u, t3) - 6 * u * sympy.diff(u, x) - sympy.diff(u, x, 3), x
    )
    f = sympy.lambdify((x, t2, t3), res, modules="numpy")
    worst = 0.0
    for b in np.atleast_1d(t2s):
        for c in np.atleast_1d(t3s):
            poles = _cm_positions(seed, b, c)
            for a in np.atleast_1d(xs):
                if np.min(np.abs(a - poles)) < exclusion:
                    continue
                worst = max(worst, abs(complex(f(a, b, c))))
    return float(worst)


def emit_u(seed: SolutionSeed, times: dict = None) -> dict:
    """The rational KP field u = 2 f_1 of a one-vertex seed at given times.

    Returns the pole locations, the rational function, a printable pole-sum
    expression and the sampled distance between the dressed coefficient and
    the pole-sum form."""
    if seed.m != 1 or seed.d != 1:
        raise ValueError("the scalar field needs m = 1, d = 1")
    times = dict(times or {})
    with _cap_guard():
        data = dress(seed, times, check=False)
        f1 = data.L.entries[0, 0].coeff(-1).comps[0]
        u = 2.0 * f1
        V = evolve_seed(seed, times)
        B = block_lift(V)
        poles = np.linalg.eigvals(B.X) if B.X.size else np.zeros(0)
        ref = RationalFunction(0.0)
        for a in poles:
            ref = ref + rf_pole(a, 2, -2.0)
        terms = ["-2/(x-(%.12g%+.12gj))^2" % (a.real, a.imag) for a in poles]
        return {
            "poles": poles,
            "u": u,
            "expression": " + ".join(terms) if terms else "0",
            "pole_sum_residual": op_dist(
                hbar_from_crossed(u, np.asarray(seed.lam), seed.window),
                hbar_from_crossed(ref, np.asarray(seed.lam), seed.window),
            ),
        }

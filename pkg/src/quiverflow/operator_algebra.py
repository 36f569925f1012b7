"""Truncated operator arithmetic for the cyclic-group deformation of the
pseudo-differential calculus.

Elements are kept in the normal form ``sum_k c_k(x) y^k`` where each
coefficient ``c_k`` lives in the crossed product of rational functions with
the cyclic group of order m (components ``f_j(x) sigma^j``).  The defining
relations are ``y x - x y = sum_k lambda_k eps_k``, ``sigma x = mu^{-1} x
sigma`` and ``sigma y = mu y sigma`` with ``mu = exp(2 pi i / m)``; at m = 1
they collapse to the textbook pseudo-differential calculus with ``y`` playing
the role of d/dx scaled by lambda.

Truncation policy: every element carries an order window and a validity
floor; coefficients at orders below the floor are not guaranteed and every
product recomputes the floor it can promise."""

import math

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

DEGREE_CAP = 64
DEFAULT_WINDOW = (-12, 6)

_cap_override = [None]


def degree_cap() -> int:
    return _cap_override[0] if _cap_override[0] is not None else DEGREE_CAP


def set_degree_cap(cap):
    """Override the rational-function degree cap (None restores the default)."""
    _cap_override[0] = cap

_SAMPLES = np.array(
    [1.37 + 0.83j, -2.11 + 0.41j, 0.59 - 1.73j, 2.91 + 1.13j,
     -1.57 - 0.67j, 0.23 + 2.39j, -0.97 + 1.91j, 1.73 - 0.29j,
     3.41 - 1.07j, -2.63 - 1.49j, 0.83 + 0.37j, -0.41 - 2.27j,
     1.19 + 1.61j, -3.07 + 0.73j, 2.27 - 0.91j, -1.31 + 2.03j]
)



def _trim(c) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c, dtype=complex)).ravel()
    mx = np.max(np.abs(c)) if c.size else 0.0
    if mx == 0.0:
        return np.zeros(1, dtype=complex)
    keep = len(c)
    while keep > 1 and abs(c[keep - 1]) <= 1e-14 * mx:
        keep -= 1
    return np.array(c[:keep], dtype=complex)


def _shift(p, a):
    """Coefficients of p(t + a) in t (ascending), by Horner rebuilding."""
    p = np.atleast_1d(np.asarray(p, dtype=complex))
    q = np.array([p[-1]], dtype=complex)
    lin = np.array([a, 1.0], dtype=complex)
    for c in p[-2::-1]:
        q = npoly.polymul(q, lin)
        q[0] += c
    return q


def _match_pole(groups, a):
    """Index of the stored pole matching a within the clustering tolerance."""
    for idx, b in enumerate(groups):
        if abs(a - b) <= 1e-9 * (1.0 + abs(b)):
            return idx
    return None


def _series_div(num, den, terms):
    """First ``terms`` coefficients of the power series num/den (den[0] != 0)."""
    out = np.zeros(terms, dtype=complex)
    for t in range(terms):
        acc = num[t] if t < len(num) else 0.0
        for s in range(1, min(t, len(den) - 1) + 1):
            acc -= den[s] * out[t - s]
        out[t] = acc / den[0]
    return out


def _expand_pf(num, roots):
    """Partial fractions of num / prod (x - root): polynomial part plus the
    Laurent coefficients at each clustered pole."""
    num = _trim(num)
    if np.max(np.abs(num)) == 0.0 or not roots:
        return num, []
    poles, mult = [], []
    for r in roots:
        r = complex(r)
        idx = _match_pole(poles, r)
        if idx is None:
            poles.append(r)
            mult.append(1)
        else:
            mult[idx] += 1
    dendeg = sum(mult)
    poly = np.zeros(1, dtype=complex)
    if len(num) - 1 >= dendeg:
        den = npoly.polyfromroots(
            [p for p, k in zip(poles, mult) for _ in range(k)]
        )
        poly, num = npoly.polydiv(num, den)
        num = _trim(num)
    parts = []
    for i, (a, k) in enumerate(zip(poles, mult)):
        rest_roots = [
            b - a for j, (b, kb) in enumerate(zip(poles, mult)) if j != i
            for _ in range(kb)
        ]
        rest = npoly.polyfromroots(rest_roots) if rest_roots else np.ones(1)
        h = _series_div(_shift(num, a), rest, k)
        coeffs = np.zeros(k, dtype=complex)
        for p in range(1, k + 1):
            coeffs[p - 1] = h[k - p]
        parts.append((a, coeffs))
    return poly, parts


def _norm_parts(parts):
    """Cluster poles, trim per-pole noise, drop empty poles."""
    poles, vecs = [], []
    for a, arr in parts:
        arr = np.atleast_1d(np.asarray(arr, dtype=complex))
        idx = _match_pole(poles, complex(a))
        if idx is None:
            poles.append(complex(a))
            vecs.append(np.array(arr, dtype=complex))
        else:
            if len(arr) > len(vecs[idx]):
                arr = np.array(arr, dtype=complex)
                arr[: len(vecs[idx])] += vecs[idx]
                vecs[idx] = arr
            else:
                vecs[idx][: len(arr)] += arr
    out = []
    for a, vec in zip(poles, vecs):
        mx = np.max(np.abs(vec)) if vec.size else 0.0
        if mx == 0.0:
            continue
        vec = np.where(np.abs(vec) <= 1e-14 * mx, 0.0, vec)
        top = len(vec)
        while top > 0 and vec[top - 1] == 0.0:
            top -= 1
        if top:
            out.append((a, tuple(vec[:top])))
    return tuple(out)


@dataclass(frozen=True)
class RationalFunction:
    """Rational function in partial-fraction form: a polynomial part plus
    Laurent coefficients at each pole (stored for powers 1 upward).

    Arithmetic on shared poles is slotwise.  Repeated factors are never
    expanded against each other, so deep products of elements with a common
    pole set stay well conditioned."""

    poly: tuple
    parts: tuple  # ((pole, (c_1, ..., c_K)), ...) for c_p / (x - pole)^p

    def __init__(self, num=0.0, den=None, roots=None):
        if den is not None and roots is None:
            den = _trim(den)
            if np.max(np.abs(den)) == 0.0:
                raise ZeroDivisionError("zero denominator polynomial")
            lead = den[-1]
            roots = tuple(npoly.polyroots(den / lead)) if len(den) > 1 else ()
            num = _trim(num) / lead
        poly, parts = _expand_pf(num, tuple(roots or ()))
        _rf_set(self, poly, parts)

    @classmethod
    def _make(cls, num, roots):
        obj = cls.__new__(cls)
        cls.__init__(obj, num, roots=tuple(roots))
        return obj

    @classmethod
    def _from_pf(cls, poly, parts):
        obj = cls.__new__(cls)
        _rf_set(obj, poly, parts)
        return obj

    # -- compatibility views ------------------------------------------------

    @property
    def roots(self) -> tuple:
        """Denominator roots with multiplicity (each pole by its top power)."""
        return tuple(a for a, vec in self.parts for _ in range(len(vec)))

    @property
    def den(self) -> np.ndarray:
        """Denominator as an expanded monic coefficient array."""
        rs = self.roots
        return npoly.polyfromroots(rs) if rs else np.ones(1)

    @property
    def num(self) -> np.ndarray:
        """Numerator over the expanded denominator (ascending)."""
        out = npoly.polymul(np.asarray(self.poly, dtype=complex), self.den)
        for i, (a, vec) in enumerate(self.parts):
            top = len(vec)
            rest = [
                b
                for j, (b, w) in enumerate(self.parts)
                if j != i
                for _ in range(len(w))
            ]
            other = npoly.polyfromroots(rest) if rest else np.ones(1)
            for p, c in enumerate(vec, start=1):
                if c == 0.0:
                    continue
                fac = npoly.polyfromroots([a] * (top - p))
                out = npoly.polyadd(out, c * npoly.polymul(fac, other))
        return _trim(out)

    # -- basic queries ------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.parts and np.max(np.abs(self.poly)) == 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=complex)
        out = npoly.polyval(x, np.asarray(self.poly, dtype=complex))
        for a, vec in self.parts:
            inv = 1.0 / (x - a)
            pw = inv
            for c in vec:
                if c != 0.0:
                    out = out + c * pw
                pw = pw * inv
        return out

    def poles_clear(self, xs, radius: float = 1e-6) -> bool:
        xs = np.asarray(xs, dtype=complex)
        for a, _ in self.parts:
            if np.any(np.abs(xs - a) <= radius):
                return False
        return True

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _as_rf(other)
        poly = npoly.polyadd(
            np.asarray(self.poly, dtype=complex),
            np.asarray(other.poly, dtype=complex),
        )
        return RationalFunction._from_pf(poly, self.parts + other.parts)

    __radd__ = __add__

    def __neg__(self):
        return RationalFunction._from_pf(
            -np.asarray(self.poly, dtype=complex),
            tuple((a, tuple(-c for c in vec)) for a, vec in self.parts),
        )

    def __sub__(self, other):
        return self + (-_as_rf(other))

    def __rsub__(self, other):
        return _as_rf(other) + (-self)

    def __mul__(self, other):
        other = _as_rf(other)
        p1 = np.asarray(self.poly, dtype=complex)
        p2 = np.asarray(other.poly, dtype=complex)
        poly = npoly.polymul(p1, p2)
        parts = []

        def poly_times_part(p, a, vec):
            # p(x) * c / (x-a)^k, split into slots and a polynomial rest
            nonlocal poly
            if np.max(np.abs(p)) == 0.0:
                return
            q = _shift(p, a)
            rest = np.zeros(1, dtype=complex)
            for k, c in enumerate(vec, start=1):
                if c == 0.0:
                    continue
                slot = np.zeros(k, dtype=complex)
                for j in range(min(k, len(q))):
                    slot[k - j - 1] = c * q[j]
                parts.append((a, slot))
                if len(q) > k:
                    rest = npoly.polyadd(rest, c * q[k:])
            if np.max(np.abs(rest)) != 0.0:
                poly = npoly.polyadd(poly, _shift(rest, -a))

        for a, vec in self.parts:
            poly_times_part(p2, a, vec)
        for b, vec in other.parts:
            poly_times_part(p1, b, vec)
        for a, va in self.parts:
            for b, vb in other.parts:
                same = abs(a - b) <= 1e-9 * (1.0 + abs(a))
                for i, ca in enumerate(va, start=1):
                    if ca == 0.0:
                        continue
                    for j, cb in enumerate(vb, start=1):
                        if cb == 0.0:
                            continue
                        if same:
                            slot = np.zeros(i + j, dtype=complex)
                            slot[i + j - 1] = ca * cb
                            parts.append((a, slot))
                        else:
                            parts.append((a, _cross_pf(i, j, a, b, ca * cb)))
                            parts.append((b, _cross_pf(j, i, b, a, ca * cb)))
        return RationalFunction._from_pf(poly, tuple(parts))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_rf(other)
        if other.is_zero():
            raise ZeroDivisionError("division by the zero rational function")
        onum = other.num
        inv = RationalFunction(other.den, den=onum)
        return self * inv

    def __rtruediv__(self, other):
        return _as_rf(other) / self

    def derivative(self):
        return RationalFunction._from_pf(
            npoly.polyder(np.asarray(self.poly, dtype=complex))
            if len(self.poly) > 1
            else np.zeros(1, dtype=complex),
            tuple(
                (a, (0.0,) + tuple(-k * c for k, c in enumerate(vec, start=1)))
                for a, vec in self.parts
            ),
        )

    def scale_arg(self, a):
        """The function x -> f(a x)."""
        a = complex(a)
        if a == 0:
            raise ValueError("argument scale must be nonzero")
        pw = a ** np.arange(len(self.poly))
        return RationalFunction._from_pf(
            np.asarray(self.poly, dtype=complex) * pw,
            tuple(
                (
                    b / a,
                    tuple(c * a ** (-k) for k, c in enumerate(vec, start=1)),
                )
                for b, vec in self.parts
            ),
        )


def _rf_set(obj, poly, parts):
    poly = _trim(poly)
    parts = _norm_parts(parts)
    cap = degree_cap()
    dendeg = sum(len(vec) for _, vec in parts)
    if len(poly) - 1 > cap or dendeg > cap:
        raise OverflowError("rational-function degree cap exceeded")
    object.__setattr__(obj, "poly", tuple(poly))
    object.__setattr__(obj, "parts", parts)


def _cross_pf(i, j, a, b, scale):
    """Laurent coefficients at a (powers 1..i) of scale/((x-a)^i (x-b)^j)."""
    out = np.zeros(i, dtype=complex)
    for t in range(1, i + 1):
        out[t - 1] = (
            scale
            * (-1) ** (i - t)
            * math.comb(i + j - t - 1, j - 1)
            * (a - b) ** (t - i - j)
        )
    return out


def _as_rf(v) -> RationalFunction:
    if isinstance(v, RationalFunction):
        return v
    return RationalFunction(np.array([v], dtype=complex))


def rf_x() -> RationalFunction:
    return RationalFunction(np.array([0.0, 1.0]))


def rf_pole(root, order: int = 1, scale=1.0) -> RationalFunction:
    """scale / (x - root)^order."""
    if order < 1:
        raise ValueError("pole order must be >= 1")
    vec = np.zeros(order, dtype=complex)
    vec[order - 1] = scale
    return RationalFunction._from_pf(np.zeros(1), ((complex(root), vec),))


@dataclass(frozen=True)
class CrossedElement:
    """sum_j f_j(x) sigma^j with rational components."""

    m: int
    comps: tuple  # m RationalFunctions

    def __init__(self, m: int, comps=None):
        if m < 1:
            raise ValueError("m must be >= 1")
        if comps is None:
            comps = [RationalFunction() for _ in range(m)]
        comps = tuple(_as_rf(c) for c in comps)
        if len(comps) != m:
            raise ValueError("need one component per group element")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "comps", comps)

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.comps)

    def __add__(self, other):
        other = _as_ce(other, self.m)
        return CrossedElement(
            self.m, [a + b for a, b in zip(self.comps, other.comps)]
        )

    __radd__ = __add__

    def __neg__(self):
        return CrossedElement(self.m, [-c for c in self.comps])

    def __sub__(self, other):
        return self + (-_as_ce(other, self.m))

    def __mul__(self, other):
        return crossed_mul(self, _as_ce(other, self.m))

    def __rmul__(self, other):
        return crossed_mul(_as_ce(other, self.m), self)

    def eval(self, x) -> np.ndarray:
        """Component values (f_0(x), ..., f_{m-1}(x))."""
        return np.array([c(x) for c in self.comps])

    def poles_clear(self, xs, radius: float = 1e-6) -> bool:
        return all(c.poles_clear(xs, radius) for c in self.comps)


def _as_ce(v, m: int) -> CrossedElement:
    if isinstance(v, CrossedElement):
        if v.m != m:
            raise ValueError("mismatched group orders")
        return v
    comps = [_as_rf(v)] + [RationalFunction() for _ in range(m - 1)]
    return CrossedElement(m, comps)


def ce_x(m: int) -> CrossedElement:
    return _as_ce(0, m) + CrossedElement(
        m, [rf_x()] + [RationalFunction() for _ in range(m - 1)]
    )


def ce_sigma(m: int, j: int = 1) -> CrossedElement:
    comps = [RationalFunction() for _ in range(m)]
    comps[j % m] = _as_rf(1.0)
    return CrossedElement(m, comps)


def ce_epsilon(m: int, k: int) -> CrossedElement:
    mu = np.exp(2j * np.pi / m)
    comps = [mu ** (-(k % m) * j) / m for j in range(m)]
    return CrossedElement(m, comps)


def ce_weight(lam) -> CrossedElement:
    """The central-commutator value sum_k lambda_k eps_k."""
    lam = np.asarray(lam, dtype=complex)
    m = len(lam)
    out = CrossedElement(m)
    for k in range(m):
        out = out + ce_epsilon(m, k) * lam[k]
    return out


def crossed_mul(F: CrossedElement, G: CrossedElement) -> CrossedElement:
    """(f sigma^i)(g sigma^j) = f(x) g(mu^{-i} x) sigma^{i+j}."""
    if F.m != G.m:
        raise ValueError("mismatched group orders")
    m = F.m
    mu = np.exp(2j * np.pi / m)
    out = [RationalFunction() for _ in range(m)]
    for i in range(m):
        if F.comps[i].is_zero():
            continue
        for j in range(m):
            if G.comps[j].is_zero():
                continue
            out[(i + j) % m] = out[(i + j) % m] + F.comps[i] * G.comps[j].scale_arg(
                mu ** (-i)
            )
    return CrossedElement(m, out)


def _twist_y(F: CrossedElement) -> CrossedElement:
    """Conjugation by y on the group part: sigma^j picks up mu^{-j}."""
    m = F.m
    mu = np.exp(2j * np.pi / m)
    return CrossedElement(m, [F.comps[j] * mu ** (-j) for j in range(m)])


def _twist_y_inv(F: CrossedElement) -> CrossedElement:
    m = F.m
    mu = np.exp(2j * np.pi / m)
    return CrossedElement(m, [F.comps[j] * mu ** j for j in range(m)])


def comm_y(f, lam) -> CrossedElement:
    """[y, f] from the defining relation y x - x y = sum_k lambda_k eps_k.

    Accepts a rational function or a crossed element; for m = 1 with
    lambda = 1 this is the formal derivative."""
    if isinstance(f, CrossedElement):
        return _comm_y_crossed(f, lam)
    return _comm_y_rf(_as_rf(f), lam)


def _comm_y_rf(f: RationalFunction, lam) -> CrossedElement:
    """[y, f(x)] from the defining relation, computed per partial fraction.

    Constants commute, [y, x] is the weight element, powers follow Leibniz
    through the crossed product, and inverse linear factors use
    [y, 1/q] = -(1/q) [y, q] (1/q)."""
    lam = np.asarray(lam, dtype=complex)
    m = len(lam)
    c = ce_weight(lam)
    x = ce_x(m)

    def poly_comm(coeffs) -> CrossedElement:
        # [y, x^{k+1}] = c x^k + x [y, x^k], summed against the coefficients
        out = CrossedElement(m)
        xpow = _as_ce(1.0, m)
        comm_xpow = CrossedElement(m)  # [y, x^k]
        for k, a in enumerate(coeffs):
            if k > 0:
                comm_xpow = crossed_mul(c, xpow) + crossed_mul(x, comm_xpow)
                xpow = crossed_mul(x, xpow)
            if a != 0:
                out = out + comm_xpow * a
        return out

    out = poly_comm(np.asarray(f.poly, dtype=complex))
    lam_key = tuple(lam.tolist())
    for a, vec in f.parts:
        for k, coeff in enumerate(vec, start=1):
            if coeff != 0.0:
                out = out + _comm_pole_power(a, k, lam_key, m, c) * coeff
    return out


_COMM_CACHE = {}


def _comm_pole_power(a, k, lam_key, m, c) -> CrossedElement:
    """[y, (x-a)^{-k}], memoized: these towers repeat across every product
    with the same pole set and weight."""
    key = (m, lam_key, a, k)
    hit = _COMM_CACHE.get(key)
    if hit is not None:
        return hit
    # u = 1/(x-a): [y, u] = -u c u, then [y, u^k] = [y, u^{k-1}] u + u^{k-1} [y, u]
    u = _as_ce(rf_pole(a), m)
    if k == 1:
        val = -crossed_mul(crossed_mul(u, c), u)
    else:
        comm_u = _comm_pole_power(a, 1, lam_key, m, c)
        val = crossed_mul(
            _comm_pole_power(a, k - 1, lam_key, m, c), u
        ) + crossed_mul(_as_ce(rf_pole(a, k - 1), m), comm_u)
    if len(_COMM_CACHE) > 200000:
        _COMM_CACHE.clear()
    _COMM_CACHE[key] = val
    return val


def _comm_y_crossed(F: CrossedElement, lam) -> CrossedElement:
    """Coefficient derivation d with y F = twist(F) y + d(F); the mu twist
    on sigma^j is handled separately by the y-order bookkeeping."""
    m = F.m
    out = CrossedElement(m)
    for j in range(m):
        if F.comps[j].is_zero():
            continue
        out = out + crossed_mul(_comm_y_rf(F.comps[j], lam), ce_sigma(m, j))
    return out


# ---------------------------------------------------------------------------
# windowed normal-form elements


@dataclass
class HBarElement:
    """Normal form sum_k c_k(x, sigma) y^k on a finite order window.

    validity_floor None means the element is known exactly (its true
    expansion has no terms outside the stored coefficients); an integer
    floor means coefficients at orders >= floor are guaranteed and lower
    orders are unknown."""

    lam: np.ndarray
    window: tuple = DEFAULT_WINDOW
    coeffs: dict = field(default_factory=dict)
    validity_floor: int = None

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=complex)
        lo, hi = self.window
        if lo > hi:
            raise ValueError("empty order window")
        if self.validity_floor is not None and self.validity_floor < lo:
            raise ValueError("validity floor below the window")
        m = len(self.lam)
        clean = {}
        for k, c in self.coeffs.items():
            if not lo <= k <= hi:
                raise ValueError("coefficient order %d outside the window" % k)
            c = _as_ce(c, m)
            if not c.is_zero():
                clean[k] = c
        self.coeffs = clean

    @property
    def floor(self) -> int:
        """Lowest guaranteed order (the window bottom for exact elements)."""
        return self.window[0] if self.validity_floor is None else self.validity_floor

    @property
    def m(self) -> int:
        return len(self.lam)

    def order(self):
        return max(self.coeffs) if self.coeffs else None

    def coeff(self, k) -> CrossedElement:
        return self.coeffs.get(k, CrossedElement(self.m))

    def __add__(self, other):
        other = _as_hbar(other, self)
        out = dict(self.coeffs)
        for k, c in other.coeffs.items():
            out[k] = out.get(k, CrossedElement(self.m)) + c
        return HBarElement(
            self.lam, self.window, out,
            _combine_floors(self.validity_floor, other.validity_floor),
        )

    __radd__ = __add__

    def __neg__(self):
        return HBarElement(
            self.lam,
            self.window,
            {k: -c for k, c in self.coeffs.items()},
            self.validity_floor,
        )

    def __sub__(self, other):
        return self + (-_as_hbar(other, self))

    def __rsub__(self, other):
        return _as_hbar(other, self) + (-self)

    def __mul__(self, other):
        return hbar_mul(self, _as_hbar(other, self))

    def __rmul__(self, other):
        return hbar_mul(_as_hbar(other, self), self)

    def sample(self, xs=None) -> np.ndarray:
        """Array of coefficient component values over the window, used for
        comparisons; orders below the validity floor are zeroed."""
        if xs is None:
            xs = _SAMPLES
        lo, hi = self.window
        rows = []
        for k in range(self.floor, hi + 1):
            rows.append(self.coeff(k).eval(xs).ravel())
        return np.concatenate(rows) if rows else np.zeros(0)


def _combine_floors(*floors):
    vals = [f for f in floors if f is not None]
    return max(vals) if vals else None


def _as_hbar(v, like: HBarElement) -> HBarElement:
    if isinstance(v, HBarElement):
        if len(v.lam) != len(like.lam) or v.window != like.window:
            raise ValueError("mismatched operator families")
        return v
    return HBarElement(like.lam, like.window, {0: _as_ce(v, like.m)})


def hbar_zero(lam, window=DEFAULT_WINDOW) -> HBarElement:
    return HBarElement(lam, window, {})


def hbar_one(lam, window=DEFAULT_WINDOW) -> HBarElement:
    return HBarElement(lam, window, {0: 1.0})


def hbar_y(lam, k: int = 1, window=DEFAULT_WINDOW) -> HBarElement:
    return HBarElement(lam, window, {k: 1.0})


def hbar_from_crossed(c, lam, window=DEFAULT_WINDOW, k: int = 0) -> HBarElement:
    return HBarElement(lam, window, {k: c})


def _y_step(state: dict, lam) -> dict:
    """Normal form of y * N from that of N (orders can only rise by one)."""
    out = {}
    for o, c in state.items():
        tw = _twist_y(c)
        if not tw.is_zero():
            out[o + 1] = out.get(o + 1, CrossedElement(c.m)) + tw
        dc = comm_y(c, lam)
        if not dc.is_zero():
            out[o] = out.get(o, CrossedElement(c.m)) + dc
    return {o: c for o, c in out.items() if not c.is_zero()}


def _yinv_step(state: dict, lam, floor: int, m: int):
    """Normal form of y^{-1} N, solved top-down from y N' = N: the order-o
    coefficient satisfies twist(n'_{o-1}) = n_o - d(n'_o).  Returns the
    truncated result and whether any nonzero term was dropped."""
    if not state:
        return {}, False
    top = max(state)
    out = {}
    zero = CrossedElement(m)
    for o in range(top, floor, -1):
        val = state.get(o, zero) - comm_y(out.get(o, zero), lam)
        if not val.is_zero():
            out[o - 1] = _twist_y_inv(val)
    dropped = not (
        state.get(floor, zero) - comm_y(out.get(floor, zero), lam)
    ).is_zero()
    return {o: c for o, c in out.items() if o >= floor and not c.is_zero()}, dropped


def _pull_through(k: int, c: CrossedElement, lam, floor: int) -> dict:
    """Normal ordering of y^k c as a dict order -> crossed coefficient,
    truncated below the floor."""
    if c.is_zero():
        return {}
    state = {0: c}
    if k > 0:
        for _ in range(k):
            state = _y_step(state, lam)
    else:
        for _ in range(-k):
            state, _dropped = _yinv_step(state, lam, floor, c.m)
    return {o: cc for o, cc in state.items() if o >= floor}


def hbar_mul(F: HBarElement, G: HBarElement) -> HBarElement:
    """Product in normal form; the result records the deepest order it can
    guarantee given the factors' floors and the window truncation."""
    G = _as_hbar(G, F)
    lo, hi = F.window
    m = F.m
    out = {}
    truncated = False
    ks = sorted(F.coeffs)
    for k2, c2 in G.coeffs.items():
        floor2 = lo - k2
        states = {0: {0: c2}}
        if ks and ks[-1] > 0:
            state = states[0]
            for t in range(1, ks[-1] + 1):
                state = _y_step(state, F.lam)
                states[t] = state
        if ks and ks[0] < 0:
            state = states[0]
            for t in range(1, -ks[0] + 1):
                state, dropped = _yinv_step(state, F.lam, floor2, m)
                truncated = truncated or dropped
                states[-t] = state
        for k1 in ks:
            c1 = F.coeffs[k1]
            for o, cc in states[k1].items():
                k = o + k2
                if k > hi:
                    raise ValueError("product order exceeds the window top")
                if k >= lo:
                    out[k] = out.get(k, CrossedElement(m)) + crossed_mul(c1, cc)
                else:
                    truncated = True
    candidates = []
    if truncated:
        candidates.append(lo)
    topF = F.order()
    topG = G.order()
    if F.validity_floor is not None and topG is not None:
        candidates.append(F.validity_floor + max(0, topG))
    if G.validity_floor is not None and topF is not None:
        candidates.append(G.validity_floor + max(0, topF))
    floor = _combine_floors(*candidates)
    if floor is not None and floor > hi:
        raise ValueError("empty validity window in product")
    return HBarElement(F.lam, F.window, out, floor)


def split_pm(F: HBarElement):
    """The (nonnegative, negative) order parts; their sum is F."""
    plus = {k: c for k, c in F.coeffs.items() if k >= 0}
    minus = {k: c for k, c in F.coeffs.items() if k < 0}
    return (
        HBarElement(F.lam, F.window, plus, F.validity_floor),
        HBarElement(F.lam, F.window, minus, F.validity_floor),
    )


def invert_unitriangular(M):
    """Inverse of 1 + (strictly negative order) by the terminating Neumann
    series; also handles the matrix case."""
    if isinstance(M, MatrixOperator):
        return _invert_matrix(M)
    N = M - 1.0
    if N.coeffs and max(N.coeffs) >= 0:
        raise ValueError("operator is not unitriangular")
    lo, _ = M.window
    out = hbar_one(M.lam, M.window)
    term = hbar_one(M.lam, M.window)
    while True:
        term = hbar_mul(term, -N)
        if not term.coeffs:
            break
        out = out + term
    out.validity_floor = _combine_floors(out.validity_floor, M.validity_floor)
    return out


# ---------------------------------------------------------------------------
# matrix extension


@dataclass
class MatrixOperator:
    """d x d array of windowed elements sharing one weight and window."""

    entries: np.ndarray  # object array of HBarElement

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=object)
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise ValueError("entries must form a square array")
        ref = self.entries[0, 0]
        for e in self.entries.ravel():
            if e.window != ref.window or len(e.lam) != len(ref.lam):
                raise ValueError("entries disagree on window or weight")

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    @property
    def window(self):
        return self.entries[0, 0].window

    @property
    def lam(self):
        return self.entries[0, 0].lam

    @property
    def validity_floor(self):
        return _combine_floors(*(e.validity_floor for e in self.entries.ravel()))

    @property
    def floor(self) -> int:
        f = self.validity_floor
        return self.window[0] if f is None else f

    def __add__(self, other):
        other = _as_matop(other, self)
        out = np.empty((self.d, self.d), dtype=object)
        for i in range(self.d):
            for j in range(self.d):
                out[i, j] = self.entries[i, j] + other.entries[i, j]
        return MatrixOperator(out)

    def __neg__(self):
        out = np.empty((self.d, self.d), dtype=object)
        for i in range(self.d):
            for j in range(self.d):
                out[i, j] = -self.entries[i, j]
        return MatrixOperator(out)

    def __sub__(self, other):
        return self + (-_as_matop(other, self))

    def __matmul__(self, other):
        other = _as_matop(other, self)
        out = np.empty((self.d, self.d), dtype=object)
        for i in range(self.d):
            for j in range(self.d):
                acc = hbar_zero(self.lam, self.window)
                for k in range(self.d):
                    acc = acc + hbar_mul(self.entries[i, k], other.entries[k, j])
                out[i, j] = acc
        return MatrixOperator(out)

    def sample(self, xs=None) -> np.ndarray:
        floor = self.floor
        rows = []
        for e in self.entries.ravel():
            lo, hi = e.window
            vals = []
            for k in range(floor, hi + 1):
                vals.append(e.coeff(k).eval(xs if xs is not None else _SAMPLES).ravel())
            rows.append(np.concatenate(vals) if vals else np.zeros(0))
        return np.concatenate(rows)


def _as_matop(v, like: MatrixOperator) -> MatrixOperator:
    if isinstance(v, MatrixOperator):
        return v
    out = np.empty((like.d, like.d), dtype=object)
    for i in range(like.d):
        for j in range(like.d):
            out[i, j] = _as_hbar(v if i == j else 0.0, like.entries[0, 0])
    return MatrixOperator(out)


def matop_identity(d: int, lam, window=DEFAULT_WINDOW) -> MatrixOperator:
    out = np.empty((d, d), dtype=object)
    for i in range(d):
        for j in range(d):
            out[i, j] = hbar_one(lam, window) if i == j else hbar_zero(lam, window)
    return MatrixOperator(out)


def matop_from_entries(entries) -> MatrixOperator:
    return MatrixOperator(np.asarray(entries, dtype=object))


def matop_split_pm(M: MatrixOperator):
    d = M.d
    P = np.empty((d, d), dtype=object)
    N = np.empty((d, d), dtype=object)
    for i in range(d):
        for j in range(d):
            P[i, j], N[i, j] = split_pm(M.entries[i, j])
    return MatrixOperator(P), MatrixOperator(N)


def _invert_matrix(M: MatrixOperator) -> MatrixOperator:
    N = M - 1.0
    for e in N.entries.ravel():
        if e.coeffs and max(e.coeffs) >= 0:
            raise ValueError("operator is not unitriangular")
    out = matop_identity(M.d, M.lam, M.window)
    term = matop_identity(M.d, M.lam, M.window)
    while True:
        term = term @ (-N)
        if all(not e.coeffs for e in term.entries.ravel()):
            break
        out = out + term
    return out

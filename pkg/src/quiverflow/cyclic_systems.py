"""Cyclic-quiver systems: explicit Darboux charts, Calogero-Moser and
Gibbons-Hermsen Hamiltonians, exact flows, and independence diagnostics.

A point is stored vertexwise as matrices ``X_i`` (forward arrows), ``Y_i``
(backward arrows) and framing columns ``v_i`` / rows ``w_i``; the on-shell
condition at vertex ``i`` reads ``X_{i-1} Y_{i-1} - Y_i X_i + v_i w_i =
lambda_i``.  The block lift assembles everything on the direct sum of the
vertex spaces, where the same condition becomes a single commutator equation.
"""

from dataclasses import dataclass

import numpy as np

from .quiver_core import INF, FramedQuiver, Quiver, builtin, double
from .rep_variety import RepPoint, poisson_bracket_grads
from .hamiltonian_dynamics import e_r_ell, integral_IA


class ChartBoundaryError(ValueError):
    """The point sits outside the chart (colliding or degenerate spectrum)."""


# ---------------------------------------------------------------------------
# points


@dataclass(frozen=True)
class CyclicPoint:
    """Vertexwise data of a framed cyclic-quiver representation.

    ``X[i]`` maps vertex ``i`` to ``i+1`` (shape ``alpha_{i+1} x alpha_i``),
    ``Y[i]`` maps back, ``v[i]`` holds the ``zeta_i`` framing columns and
    ``w[i]`` the framing rows."""

    m: int
    alpha: tuple
    zeta: tuple
    X: tuple
    Y: tuple
    v: tuple
    w: tuple

    def __post_init__(self):
        m, al, ze = self.m, self.alpha, self.zeta
        if not (len(al) == len(ze) == m):
            raise ValueError("alpha and zeta must have one entry per vertex")
        if not (len(self.X) == len(self.Y) == len(self.v) == len(self.w) == m):
            raise ValueError("need one X, Y, v, w per vertex")
        for i in range(m):
            j = (i + 1) % m
            checks = [
                (self.X[i], (al[j], al[i]), "X"),
                (self.Y[i], (al[i], al[j]), "Y"),
                (self.v[i], (al[i], ze[i]), "v"),
                (self.w[i], (ze[i], al[i]), "w"),
            ]
            for mat, want, name in checks:
                if np.asarray(mat).shape != want:
                    raise ValueError(
                        "%s[%d] has shape %s, expected %s"
                        % (name, i, np.asarray(mat).shape, want)
                    )

    def residual(self, lam) -> float:
        """Largest deviation of the vertexwise on-shell condition."""
        lam = np.asarray(lam, dtype=complex)
        worst = 0.0
        for i in range(self.m):
            if self.alpha[i] == 0:
                continue
            j = (i - 1) % self.m
            M = self.X[j] @ self.Y[j] - self.Y[i] @ self.X[i] + self.v[i] @ self.w[i]
            worst = max(worst, np.linalg.norm(M - lam[i] * np.eye(self.alpha[i]), 2))
        return worst

    def trace_pairing(self) -> complex:
        """Sum of tr(w_i v_i); equals lambda . alpha on shell."""
        return complex(sum(np.trace(self.w[i] @ self.v[i]) for i in range(self.m)))


def framed_cyclic_quiver(m: int, zeta) -> Quiver:
    return double(FramedQuiver(builtin("cyclic:%d" % m), tuple(zeta)).quiver)


def to_framed(V: CyclicPoint) -> RepPoint:
    """Repack as a representation of the doubled framed cyclic quiver."""
    q = framed_cyclic_quiver(V.m, V.zeta)
    mats = {}
    for i in range(V.m):
        a = "a%d" % i if V.m > 1 else "a0"
        mats[a] = np.asarray(V.X[i], dtype=complex)
        mats[a + "*"] = np.asarray(V.Y[i], dtype=complex)
        for r in range(1, V.zeta[i] + 1):
            mats["b%d_%d" % (i, r)] = np.asarray(V.v[i][:, r - 1 : r], dtype=complex)
            mats["b%d_%d*" % (i, r)] = np.asarray(V.w[i][r - 1 : r, :], dtype=complex)
    dims = (1,) + tuple(V.alpha)
    return RepPoint(q, dims, mats)


def from_framed(P: RepPoint) -> CyclicPoint:
    """Inverse of :func:`to_framed`."""
    q = P.quiver
    base = [v for v in q.vertices if v != INF]
    m = len(base)
    alpha = tuple(P.dim(str(i)) for i in range(m))
    zeta = [0] * m
    for e in q.edges:
        if e.tail == INF and not e.id.endswith("*"):
            i, r = e.id[1:].rsplit("_", 1)
            zeta[int(i)] = max(zeta[int(i)], int(r))
    X, Y, v, w = [], [], [], []
    for i in range(m):
        a = "a%d" % i
        X.append(P.mats[a])
        Y.append(P.mats[a + "*"])
        cols = [P.mats["b%d_%d" % (i, r)] for r in range(1, zeta[i] + 1)]
        rows = [P.mats["b%d_%d*" % (i, r)] for r in range(1, zeta[i] + 1)]
        v.append(np.hstack(cols) if cols else np.zeros((alpha[i], 0), dtype=complex))
        w.append(np.vstack(rows) if rows else np.zeros((0, alpha[i]), dtype=complex))
    return CyclicPoint(m, alpha, tuple(zeta), tuple(X), tuple(Y), tuple(v), tuple(w))


def framed_weight_vector(V: CyclicPoint, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=complex)
    al = np.asarray(V.alpha)
    return np.concatenate(([-np.dot(lam, al)], lam))


# ---------------------------------------------------------------------------
# block lift


@dataclass(frozen=True)
class BlockLift:
    """X and Y assembled on the direct sum of the vertex spaces, with the
    stacked framing columns and rows."""

    m: int
    alpha: tuple
    offsets: tuple
    X: np.ndarray
    Y: np.ndarray
    v: tuple  # one (N x zeta_i) block per vertex
    w: tuple  # one (zeta_i x N) block per vertex

    def form_residual(self) -> float:
        """Largest entry sitting outside the allowed cyclic block pattern."""
        worst = 0.0
        off, al, m = self.offsets, self.alpha, self.m
        for i in range(m):
            for j in range(m):
                bx = self.X[off[j] : off[j] + al[j], off[i] : off[i] + al[i]]
                by = self.Y[off[i] : off[i] + al[i], off[j] : off[j] + al[j]]
                if j != (i + 1) % m and bx.size:
                    worst = max(worst, np.max(np.abs(bx)))
                if j != (i + 1) % m and by.size:
                    worst = max(worst, np.max(np.abs(by)))
            for j in range(m):
                if j == i:
                    continue
                bv = self.v[i][off[j] : off[j] + al[j], :]
                bw = self.w[i][:, off[j] : off[j] + al[j]]
                if bv.size:
                    worst = max(worst, np.max(np.abs(bv)))
                if bw.size:
                    worst = max(worst, np.max(np.abs(bw)))
        return float(worst)

    def moment_residual(self, lam) -> float:
        lam = np.asarray(lam, dtype=complex)
        N = self.X.shape[0]
        M = self.X @ self.Y - self.Y @ self.X
        for i in range(self.m):
            M = M + self.v[i] @ self.w[i]
        D = np.zeros((N, N), dtype=complex)
        for i in range(self.m):
            s = self.offsets[i]
            D[s : s + self.alpha[i], s : s + self.alpha[i]] = lam[i] * np.eye(
                self.alpha[i]
            )
        return float(np.linalg.norm(M - D, 2))


def block_lift(V: CyclicPoint) -> BlockLift:
    m, al = V.m, V.alpha
    off = tuple(int(s) for s in np.concatenate(([0], np.cumsum(al)[:-1])))
    N = sum(al)
    X = np.zeros((N, N), dtype=complex)
    Y = np.zeros((N, N), dtype=complex)
    for i in range(m):
        j = (i + 1) % m
        X[off[j] : off[j] + al[j], off[i] : off[i] + al[i]] = V.X[i]
        Y[off[i] : off[i] + al[i], off[j] : off[j] + al[j]] = V.Y[i]
    vs, ws = [], []
    for i in range(m):
        bv = np.zeros((N, V.zeta[i]), dtype=complex)
        bw = np.zeros((V.zeta[i], N), dtype=complex)
        bv[off[i] : off[i] + al[i], :] = V.v[i]
        bw[:, off[i] : off[i] + al[i]] = V.w[i]
        vs.append(bv)
        ws.append(bw)
    return BlockLift(m, al, off, X, Y, tuple(vs), tuple(ws))


# ---------------------------------------------------------------------------
# Hamiltonians


def hamiltonian_Hmk(V: CyclicPoint, k: int) -> complex:
    """Trace of the length-mk backward cycle, cross-checked on the block lift."""
    if k < 1:
        raise ValueError("k must be >= 1")
    m = V.m
    M = np.eye(V.alpha[0], dtype=complex)
    for j in range(m * k):
        M = M @ V.Y[j % m]
    direct = complex(np.trace(M))
    L = block_lift(V)
    lifted = complex(np.trace(np.linalg.matrix_power(L.Y, m * k))) / m
    if abs(direct - lifted) > 1e-11 * max(1.0, abs(direct)):
        raise ArithmeticError(
            "cycle trace %r disagrees with block lift %r" % (direct, lifted)
        )
    return direct


def hamiltonian_Hlr_cyclic(V: CyclicPoint, ell: int, r: int) -> complex:
    """-sum_i w_{i-ell,r} Y_{i-ell} ... Y_{i-1} v_{i,r} over the admissible i."""
    if ell < 0 or r < 1:
        raise ValueError("need ell >= 0 and r >= 1")
    m = V.m
    total = 0.0 + 0.0j
    for i in range(m):
        j = (i - ell) % m
        if r > V.zeta[i] or r > V.zeta[j]:
            continue
        row = V.w[j][r - 1 : r, :]
        for s in range(ell):
            row = row @ V.Y[(j + s) % m]
        total += (row @ V.v[i][:, r - 1 : r])[0, 0]
    return -complex(total)


def hamiltonian_Hlr_lifted(V: CyclicPoint, ell: int, r: int) -> complex:
    """The same value read off the framed representation; cross-check route."""
    P = to_framed(V)
    return integral_IA(P, e_r_ell(P.quiver, r, ell, cap=max(12, ell)))


# ---------------------------------------------------------------------------
# Darboux charts


@dataclass(frozen=True)
class DarbouxChart:
    """Particle coordinates with spin variables.

    ``kind`` is ``jordan`` (m=1), ``eps0`` (framing at vertex 0 only, spins
    ``phi[a, r]`` / ``psi[a, r]``), or ``delta`` (uniform framing, spins
    ``phi[a, r, i]`` / ``psi[a, i, r]``)."""

    kind: str
    m: int
    x: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    psi: np.ndarray

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def d(self) -> int:
        return self.phi.shape[1]

    def validate(self, lam) -> None:
        lam = np.asarray(lam, dtype=complex)
        if self.kind not in ("jordan", "eps0", "delta"):
            raise ValueError("unknown chart kind %r" % self.kind)
        if self.kind == "jordan" and self.m != 1:
            raise ValueError("jordan charts require m = 1")
        if len(lam) != self.m:
            raise ValueError("weight length does not match m")
        x = np.asarray(self.x, dtype=complex)
        xm = x**self.m
        scale = max(1.0, float(np.max(np.abs(xm))) if len(x) else 1.0)
        for a in range(len(x)):
            for b in range(a + 1, len(x)):
                if abs(xm[a] - xm[b]) <= 1e-8 * scale:
                    raise ChartBoundaryError(
                        "colliding particles %d and %d" % (a, b)
                    )
        if self.m >= 2 and np.any(np.abs(xm) <= 1e-8 * scale):
            raise ChartBoundaryError("vanishing particle position")
        tot = complex(np.sum(lam))
        if self.kind in ("jordan", "eps0"):
            if self.phi.shape != self.psi.shape or self.phi.ndim != 2:
                raise ValueError("spin arrays must both be n x d")
            for a in range(self.n):
                if abs(self.phi[a, 0] - 1.0) > 1e-9:
                    raise ValueError("first spin component must be 1")
                pairing = complex(self.psi[a] @ self.phi[a])
                if abs(pairing - tot) > 1e-9 * max(1.0, abs(tot)):
                    raise ValueError("spin pairing off the required value")
        else:
            n, d, m = self.phi.shape
            if self.psi.shape != (n, m, d) or m != self.m:
                raise ValueError("spin arrays must be n x d x m and n x m x d")
            for a in range(self.n):
                if abs(self.phi[a, 0, 0] - 1.0) > 1e-9:
                    raise ValueError("first spin component must be 1")
                pairing = complex(np.trace(self.psi[a] @ self.phi[a]))
                if abs(pairing - tot) > 1e-9 * max(1.0, abs(tot)):
                    raise ValueError("spin pairing off the required value")


def chart_zeta(chart: DarbouxChart) -> tuple:
    if chart.kind == "delta":
        return (chart.d,) * chart.m
    return (chart.d,) + (0,) * (chart.m - 1)


def from_darboux(chart: DarbouxChart, lam) -> CyclicPoint:
    """Assemble the explicit matrices of the chart point.

    All forward matrices are diag(x); the backward matrices carry the momenta
    on the diagonal, spin-weighted particle interactions off the diagonal, and
    the vertex-dependent 1/x corrections that make the diagonal sums equal the
    momenta."""
    chart.validate(lam)
    lam = np.asarray(lam, dtype=complex)
    m, n, d = chart.m, chart.n, chart.d
    x = np.asarray(chart.x, dtype=complex)
    p = np.asarray(chart.p, dtype=complex)
    zeta = chart_zeta(chart)
    D = np.diag(x)
    X = [D.copy() for _ in range(m)]
    Y = [np.zeros((n, n), dtype=complex) for _ in range(m)]
    if chart.kind in ("jordan", "eps0"):
        pair = chart.psi @ chart.phi.T  # pair[b, a] = psi_b . phi_a
        for i in range(m):
            corr = sum((m - l) / m * lam[l] for l in range(1, m)) - sum(
                lam[l] for l in range(1, i + 1)
            )
            for a in range(n):
                Y[i][a, a] = p[a] / m + (corr / x[a] if m > 1 else 0.0)
                for b in range(n):
                    if b == a:
                        continue
                    Y[i][a, b] = (
                        -(x[a] ** i) * x[b] ** (m - i - 1) / (x[a] ** m - x[b] ** m)
                    ) * pair[b, a]
        v = [chart.phi.astype(complex)] + [
            np.zeros((n, 0), dtype=complex) for _ in range(m - 1)
        ]
        w = [chart.psi.T.astype(complex)] + [
            np.zeros((0, n), dtype=complex) for _ in range(m - 1)
        ]
    else:
        spin = np.empty((n, n, m), dtype=complex)  # diag of psi_b phi_a
        for a in range(n):
            for b in range(n):
                spin[b, a] = np.diagonal(chart.psi[b] @ chart.phi[a])
        for i in range(m):
            for a in range(n):
                c = lam - spin[a, a]
                corr = sum((m - l) / m * c[l] for l in range(1, m)) - sum(
                    c[l] for l in range(1, i + 1)
                )
                Y[i][a, a] = p[a] / m + (corr / x[a] if m > 1 else 0.0)
                for b in range(n):
                    if b == a:
                        continue
                    Y[i][a, b] = -sum(
                        x[a] ** j
                        * x[b] ** (m - j - 1)
                        / (x[a] ** m - x[b] ** m)
                        * spin[b, a][(i - j) % m]
                        for j in range(m)
                    )
        v = [np.ascontiguousarray(chart.phi[:, :, i]) for i in range(m)]
        w = [np.ascontiguousarray(chart.psi[:, i, :].T) for i in range(m)]
    point = CyclicPoint(m, (n,) * m, zeta, tuple(X), tuple(Y), tuple(v), tuple(w))
    scale = max(1.0, float(np.max(np.abs(p))) if n else 1.0)
    res = point.residual(lam)
    if res > 1e-11 * scale:
        raise ArithmeticError("chart point misses the relations by %.3e" % res)
    return point


def _detect_kind(V: CyclicPoint) -> str:
    if V.m == 1:
        return "jordan"
    if all(z == V.zeta[0] for z in V.zeta) and V.zeta[0] > 0:
        return "delta"
    if V.zeta[0] > 0 and all(z == 0 for z in V.zeta[1:]):
        return "eps0"
    raise ValueError("framing pattern supports no chart extraction")


def to_darboux(V: CyclicPoint, tol: float = 1e-8) -> DarbouxChart:
    """Diagonalize the forward product and gauge-fix down to chart data.

    The forward matrices are made diagonal one vertex at a time, the m-th
    roots are taken with argument in [0, 2*pi/m), particles are sorted
    lexicographically by (Re, Im), and the residual torus is used to set the
    first spin component to 1."""
    kind = _detect_kind(V)
    m, n = V.m, V.alpha[0]
    if any(a != n for a in V.alpha):
        raise ValueError("chart extraction needs equal vertex dimensions")
    prod = np.eye(n, dtype=complex)
    for i in range(m):
        prod = V.X[i] @ prod
    evals, S = np.linalg.eig(prod)
    scale = max(1.0, float(np.max(np.abs(evals))) if n else 1.0)
    for a in range(n):
        for b in range(a + 1, n):
            if abs(evals[a] - evals[b]) <= tol * scale:
                raise ChartBoundaryError("colliding particles %d and %d" % (a, b))
    if m >= 2 and np.any(np.abs(evals) <= tol * scale):
        raise ChartBoundaryError("vanishing particle position")
    if n and np.linalg.cond(S) > 1e8:
        raise ChartBoundaryError("non-diagonalizable forward product")
    theta = np.angle(evals) % (2 * np.pi)
    x = np.abs(evals) ** (1.0 / m) * np.exp(1j * theta / m)
    order = np.lexsort((x.imag, x.real))
    x = x[order]
    S = S[:, order]
    D = np.diag(x)
    g = [np.linalg.inv(S)]
    for i in range(m - 1):
        if abs(np.linalg.det(V.X[i])) < 1e-300:
            raise ChartBoundaryError("singular forward matrix at vertex %d" % i)
        g.append(D @ g[i] @ np.linalg.inv(V.X[i]))
    X = [g[(i + 1) % m] @ V.X[i] @ np.linalg.inv(g[i]) for i in range(m)]
    for i in range(m):
        if np.max(np.abs(X[i] - D)) > 1e-7 * scale:
            raise ChartBoundaryError("forward matrices resist diagonalization")
    Y = [g[i] @ V.Y[i] @ np.linalg.inv(g[(i + 1) % m]) for i in range(m)]
    v = [g[i] @ V.v[i] for i in range(m)]
    w = [V.w[i] @ np.linalg.inv(g[i]) for i in range(m)]
    first = v[0][:, 0] if V.zeta[0] else np.zeros(n)
    if np.any(np.abs(first) < 1e-10):
        raise ChartBoundaryError("vanishing leading spin component")
    t = 1.0 / first
    T = np.diag(t)
    Tinv = np.diag(first)
    Y = [T @ Y[i] @ Tinv for i in range(m)]
    v = [T @ v[i] for i in range(m)]
    w = [w[i] @ Tinv for i in range(m)]
    p = np.array([sum(Y[i][a, a] for i in range(m)) for a in range(n)])
    if kind in ("jordan", "eps0"):
        phi = v[0].copy()
        psi = w[0].T.copy()
    else:
        d = V.zeta[0]
        phi = np.empty((n, d, m), dtype=complex)
        psi = np.empty((n, m, d), dtype=complex)
        for i in range(m):
            phi[:, :, i] = v[i]
            psi[:, i, :] = w[i].T
    return DarbouxChart(kind, m, x, p, phi, psi)


def random_chart(kind: str, m: int, n: int, d: int, lam, seed: int = 0) -> DarbouxChart:
    """A generic chart point with well-separated particles and admissible
    spin normalization."""
    rng = np.random.default_rng(seed)
    lam = np.asarray(lam, dtype=complex)
    tot = complex(np.sum(lam))
    radius = 1.0 + rng.random(n)
    theta = (np.arange(n) + 0.2 + 0.6 * rng.random(n)) / n * (2 * np.pi / m)
    x = radius * np.exp(1j * theta)
    order = np.lexsort((x.imag, x.real))
    x = x[order]
    p = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    if kind in ("jordan", "eps0"):
        phi = rng.standard_normal((n, d)) + 1j * rng.standard_normal((n, d))
        psi = rng.standard_normal((n, d)) + 1j * rng.standard_normal((n, d))
        phi[:, 0] = 1.0
        for a in range(n):
            psi[a, 0] = tot - phi[a, 1:] @ psi[a, 1:]
    else:
        phi = rng.standard_normal((n, d, m)) + 1j * rng.standard_normal((n, d, m))
        psi = rng.standard_normal((n, m, d)) + 1j * rng.standard_normal((n, m, d))
        phi[:, 0, 0] = 1.0
        for a in range(n):
            psi[a, 0, 0] = 0.0
            psi[a, 0, 0] = tot - complex(np.trace(psi[a] @ phi[a]))
    chart = DarbouxChart(kind, m, x, p, phi, psi)
    chart.validate(lam)
    return chart


# ---------------------------------------------------------------------------
# exact flows


def exact_flow_mk(V: CyclicPoint, lam, times: dict) -> CyclicPoint:
    """Polynomial flow moving each forward matrix by backward-path products.

    ``times`` maps the cycle length m*k to its time; the forward matrix at
    vertex i is shifted by -|lambda| * k * t * Y_{i+1} ... Y_{i+mk-1}, while
    the backward matrices and framings stay fixed.  The cyclic grading is
    preserved exactly because shifts are built per block."""
    m = V.m
    lam = np.asarray(lam, dtype=complex)
    tot = complex(np.sum(lam))
    for ell in times:
        if ell < m or ell % m != 0:
            raise ValueError("flow times must be indexed by positive multiples of m")
    X = [np.array(Xi, dtype=complex) for Xi in V.X]
    for ell, t in times.items():
        if t == 0:
            continue
        k = ell // m
        for i in range(m):
            shift = np.eye(V.alpha[(i + 1) % m], dtype=complex)
            for s in range(i + 1, i + ell):
                shift = shift @ V.Y[s % m]
            X[i] = X[i] - tot * k * t * shift
    return CyclicPoint(m, V.alpha, V.zeta, tuple(X), V.Y, V.v, V.w)


# ---------------------------------------------------------------------------
# chart coordinates and independence


def chart_coords(chart: DarbouxChart) -> np.ndarray:
    """Flatten the free chart coordinates (the constrained spin entries are
    omitted)."""
    parts = [chart.x, chart.p]
    if chart.kind in ("jordan", "eps0"):
        parts += [chart.phi[:, 1:].ravel(), chart.psi[:, 1:].ravel()]
    else:
        n, d, m = chart.phi.shape
        fmask = np.ones((d, m), dtype=bool)
        fmask[0, 0] = False
        pmask = np.ones((m, d), dtype=bool)
        pmask[0, 0] = False
        parts += [chart.phi[:, fmask].ravel(), chart.psi[:, pmask].ravel()]
    return np.concatenate([np.asarray(p, dtype=complex).ravel() for p in parts])


def chart_with_coords(chart: DarbouxChart, vec, lam) -> DarbouxChart:
    """Rebuild a chart from a free-coordinate vector, restoring the
    constrained spin entries from the weight."""
    vec = np.asarray(vec, dtype=complex)
    n, d, m = chart.n, chart.d, chart.m
    tot = complex(np.sum(np.asarray(lam, dtype=complex)))
    x = vec[:n]
    p = vec[n : 2 * n]
    rest = vec[2 * n :]
    if chart.kind in ("jordan", "eps0"):
        phi = np.ones((n, d), dtype=complex)
        psi = np.empty((n, d), dtype=complex)
        phi[:, 1:] = rest[: n * (d - 1)].reshape(n, d - 1)
        psi[:, 1:] = rest[n * (d - 1) :].reshape(n, d - 1)
        for a in range(n):
            psi[a, 0] = tot - phi[a, 1:] @ psi[a, 1:]
    else:
        k = m * d - 1
        phi = np.empty((n, d, m), dtype=complex)
        psi = np.empty((n, m, d), dtype=complex)
        fmask = np.ones((d, m), dtype=bool)
        fmask[0, 0] = False
        pmask = np.ones((m, d), dtype=bool)
        pmask[0, 0] = False
        for a in range(n):
            block = np.empty((d, m), dtype=complex)
            block[0, 0] = 1.0
            block[fmask] = rest[a * k : (a + 1) * k]
            phi[a] = block
        tail = rest[n * k :]
        for a in range(n):
            block = np.empty((m, d), dtype=complex)
            block[0, 0] = 0.0
            block[pmask] = tail[a * k : (a + 1) * k]
            psi[a] = block
            psi[a, 0, 0] = tot - complex(np.trace(psi[a] @ phi[a]))
    return DarbouxChart(chart.kind, m, x, p, phi, psi)


def chart_dimension(chart: DarbouxChart) -> int:
    return len(chart_coords(chart))


def chart_jacobian(chart: DarbouxChart, lam, family, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of the family with respect to the free
    chart coordinates."""
    base = chart_coords(chart)
    J = np.empty((len(family), len(base)), dtype=complex)
    for c in range(len(base)):
        hi = base.copy()
        hi[c] += step
        lo = base.copy()
        lo[c] -= step
        Vhi = from_darboux(chart_with_coords(chart, hi, lam), lam)
        Vlo = from_darboux(chart_with_coords(chart, lo, lam), lam)
        for f in range(len(family)):
            J[f, c] = (family[f](Vhi) - family[f](Vlo)) / (2 * step)
    return J


def independence_rank(chart: DarbouxChart, lam, family, cutoff: float = 1e-8) -> int:
    """Numeric rank of the chart Jacobian of the family."""
    J = chart_jacobian(chart, lam, family)
    s = np.linalg.svd(J, compute_uv=False)
    if len(s) == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > cutoff * s[0]))


def family_Hmkr(m: int, k_max: int, d: int):
    """The callables V -> H_{mk,r} for k = 1..k_max, r = 1..d."""
    return [
        (lambda V, k=k, r=r: hamiltonian_Hlr_cyclic(V, m * k, r))
        for k in range(1, k_max + 1)
        for r in range(1, d + 1)
    ]


def family_Hlr(ell_max: int, d: int):
    """The callables V -> H_{l,r} for l = 1..ell_max, r = 1..d."""
    return [
        (lambda V, ell=ell, r=r: hamiltonian_Hlr_cyclic(V, ell, r))
        for ell in range(1, ell_max + 1)
        for r in range(1, d + 1)
    ]


# ---------------------------------------------------------------------------
# embedding of the single-vertex framing into the uniform one


def embed_eps0_in_delta(V: CyclicPoint) -> CyclicPoint:
    """Pad the framing with zero columns and rows at the other vertices."""
    if _detect_kind(V) not in ("jordan", "eps0"):
        raise ValueError("expected a point framed at vertex 0 only")
    d = V.zeta[0]
    v = [V.v[0]] + [np.zeros((V.alpha[i], d), dtype=complex) for i in range(1, V.m)]
    w = [V.w[0]] + [np.zeros((d, V.alpha[i]), dtype=complex) for i in range(1, V.m)]
    return CyclicPoint(V.m, V.alpha, (d,) * V.m, V.X, V.Y, tuple(v), tuple(w))


def restrict_delta_to_eps0(V: CyclicPoint, tol: float = 1e-10) -> CyclicPoint:
    """Inverse of the embedding; rejects points off the zero-framing locus."""
    worst = 0.0
    for i in range(1, V.m):
        if V.v[i].size:
            worst = max(worst, float(np.max(np.abs(V.v[i]))))
        if V.w[i].size:
            worst = max(worst, float(np.max(np.abs(V.w[i]))))
    if worst > tol:
        raise ValueError("point leaves the embedded locus by %.3e" % worst)
    d = V.zeta[0]
    zeta = (d,) + (0,) * (V.m - 1)
    v = [V.v[0]] + [np.zeros((V.alpha[i], 0), dtype=complex) for i in range(1, V.m)]
    w = [V.w[0]] + [np.zeros((0, V.alpha[i]), dtype=complex) for i in range(1, V.m)]
    return CyclicPoint(V.m, V.alpha, zeta, V.X, V.Y, tuple(v), tuple(w))


# ---------------------------------------------------------------------------
# identities and diagnostics


def partial_fraction_identity(j: int, m: int, x: complex, y: complex):
    """Both sides of the root-of-unity partial-fraction expansion of
    x^(m-j-1) y^j / (x^m - y^m)."""
    if not 0 <= j <= m - 1:
        raise ValueError("need 0 <= j <= m-1")
    if abs(x**m - y**m) < 1e-300:
        raise ZeroDivisionError("pole input: x^m = y^m")
    lhs = x ** (m - j - 1) * y**j / (x**m - y**m)
    mu = np.exp(2j * np.pi / m)
    rhs = sum(mu ** (-j * l) / (x - mu**l * y) for l in range(m)) / m
    return complex(lhs), complex(rhs)


def _coordinate_gradients(V: CyclicPoint, tol: float, step: float = 1e-6):
    """Finite-difference gradients of every chart coordinate with respect to
    the framed matrices, in the pairing convention of the bracket engine."""
    P = to_framed(V)
    q = P.quiver

    def coords_of(point: RepPoint) -> np.ndarray:
        return chart_coords(to_darboux(from_framed(point), tol))

    base = coords_of(P)
    grads = [dict() for _ in base]
    for e in q.edges:
        M = P.mats[e.id]
        G = [np.zeros((M.shape[1], M.shape[0]), dtype=complex) for _ in base]
        for hh in range(M.shape[0]):
            for tt in range(M.shape[1]):
                hi = M.copy()
                hi[hh, tt] += step
                lo = M.copy()
                lo[hh, tt] -= step
                chi = coords_of(P.replace(**{e.id: hi}))
                clo = coords_of(P.replace(**{e.id: lo}))
                dc = (chi - clo) / (2 * step)
                for k in range(len(base)):
                    G[k][tt, hh] = dc[k]
        for k in range(len(base)):
            grads[k][e.id] = G[k]
    return P, base, grads


def symplectic_residual(chart: DarbouxChart, lam, tol: float = 1e-8) -> float:
    """Largest deviation of the chart-coordinate brackets from the canonical
    pairing: positions against momenta and spin phi against spin psi."""
    V = from_darboux(chart, lam)
    P, base, grads = _coordinate_gradients(V, tol)
    n = chart.n
    ncoord = len(base)
    half = ncoord // 2
    # coordinate layout: x (n), p (n), phi-free, psi-free; the canonical
    # pairs are (x_a, p_a) and (phi-free_j, psi-free_j) in matching order.
    expected = np.zeros((ncoord, ncoord))
    for a in range(n):
        expected[a, n + a] = 1.0
    nspin = (ncoord - 2 * n) // 2
    for jj in range(nspin):
        expected[2 * n + jj, 2 * n + nspin + jj] = 1.0
    expected = expected - expected.T
    worst = 0.0
    for i in range(ncoord):
        for jcol in range(i + 1, ncoord):
            val = poisson_bracket_grads(P, grads[i], grads[jcol])
            worst = max(worst, abs(val - expected[i, jcol]))
    return float(worst)

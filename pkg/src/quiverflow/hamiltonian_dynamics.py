"""Commuting Hamiltonians on framed quiver varieties and their flows.

Everything is expressed through trace words in the starred edges and the
framing maps, so the bracket engine of rep_variety does the heavy lifting.
Conventions: a path in the starred quiver is stored as a tuple of starred
edge ids in application order (first letter acts first); the component A_p of
a Lie-algebra element attached to a path p from i to j is a zeta_i x zeta_j
matrix.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .quiver_core import Quiver
from .rep_variety import (
    RepPoint,
    TraceWord,
    WordPolynomial,
    hamiltonian_field,
    poisson_bracket_grads,
    relation_residual,
    trace_word,
)

INF = "inf"

__all__ = [
    "LZetaElement",
    "PathSet",
    "Trajectory",
    "e_r_ell",
    "flow_IA",
    "flow_exact_Hp",
    "framing_edges",
    "hamiltonian_Hlr",
    "hamiltonian_Hp",
    "ia_poly",
    "integral_IA",
    "lzeta_bracket",
    "star_paths",
    "zeta_sizes",
]


def _is_framing(q: Quiver, eid: str) -> bool:
    e = q.edge(eid)
    return e.tail == INF or e.head == INF


def star_edges(q: Quiver):
    """Starred partners of the base (non-framing) edges."""
    return [
        e for e in q.edges
        if e.id.endswith("*") and not _is_framing(q, e.id)
    ]


def framing_edges(q: Quiver):
    return [e for e in q.edges if e.tail == INF and not e.id.endswith("*")]


def zeta_sizes(q: Quiver) -> dict:
    zeta = {v: 0 for v in q.vertices if v != INF}
    for e in framing_edges(q):
        v, r = e.id[1:].rsplit("_", 1)
        zeta[v] = max(zeta[v], int(r))
    return zeta


@dataclass(frozen=True)
class PathSet:
    source: str
    target: str
    length: int
    paths: tuple  # tuples of starred edge ids, application order


def star_paths(q: Quiver, source, target, length) -> PathSet:
    """All paths of the given length through starred non-framing edges."""
    es = star_edges(q)
    found = []

    def walk(v, letters):
        if len(letters) == length:
            if v == target:
                found.append(tuple(letters))
            return
        for e in es:
            if e.tail == v:
                walk(e.head, letters + [e.id])

    walk(source, [])
    return PathSet(source, target, length, tuple(found))


def _path_target(q: Quiver, source, letters):
    v = source
    for l in letters:
        e = q.edge(l)
        if e.tail != v:
            raise ValueError("path letters do not compose")
        v = e.head
    return v


@dataclass
class LZetaElement:
    """Finitely supported assignment of matrices to starred-quiver paths."""

    quiver: Quiver
    comps: dict  # (source vertex, letters tuple) -> zeta_src x zeta_tgt matrix
    cap: int = 12

    def __post_init__(self):
        zeta = zeta_sizes(self.quiver)
        clean = {}
        for (src, letters), mat in self.comps.items():
            if len(letters) > self.cap:
                raise ValueError("path longer than the cap %d" % self.cap)
            tgt = _path_target(self.quiver, src, letters)
            mat = np.asarray(mat, dtype=complex)
            want = (zeta[src], zeta[tgt])
            if mat.shape != want:
                raise ValueError(
                    "component at %s has shape %s, want %s" % ((src, letters), mat.shape, want)
                )
            clean[(src, tuple(letters))] = mat
        self.comps = clean

    def target(self, key):
        return _path_target(self.quiver, key[0], key[1])

    def __add__(self, other):
        out = dict(self.comps)
        for k, m in other.comps.items():
            out[k] = out.get(k, 0) + m
        return LZetaElement(self.quiver, out, max(self.cap, other.cap))

    def __mul__(self, scalar):
        return LZetaElement(
            self.quiver, {k: scalar * m for k, m in self.comps.items()}, self.cap
        )

    def norm(self) -> float:
        return max((np.max(np.abs(m)) for m in self.comps.values()), default=0.0)


def e_r_ell(q: Quiver, r: int, ell: int, cap: int = 12) -> LZetaElement:
    """The element whose component on every length-ell path is the (r,r) unit."""
    zeta = zeta_sizes(q)
    comps = {}
    for i in zeta:
        for j in zeta:
            ps = star_paths(q, i, j, ell)
            for p in ps.paths:
                E = np.zeros((zeta[i], zeta[j]), dtype=complex)
                if r <= min(zeta[i], zeta[j]):
                    E[r - 1, r - 1] = 1.0
                comps[(i, p)] = E
    return LZetaElement(q, comps, cap)


def lzeta_bracket(A: LZetaElement, B: LZetaElement) -> LZetaElement:
    """Convolution bracket: the component on a path p sums A_q1 B_q2 - B_q1 A_q2
    over the splittings of p into q1 applied first, then q2."""
    if A.quiver is not B.quiver and A.quiver != B.quiver:
        raise ValueError("mismatched quivers")
    cap = min(A.cap, B.cap)
    out = {}

    def accumulate(first, second, sign):
        for (s1, l1), m1 in first.comps.items():
            mid = first.target((s1, l1))
            for (s2, l2), m2 in second.comps.items():
                if s2 != mid:
                    continue
                key = (s1, l1 + l2)
                term = sign * (m1 @ m2)
                out[key] = out.get(key, 0) + term

    accumulate(A, B, +1.0)
    accumulate(B, A, -1.0)
    out = {k: m for k, m in out.items() if np.max(np.abs(m)) > 0}
    for (src, letters) in out:
        if len(letters) > cap:
            raise ValueError("bracket support exceeds the cap %d" % cap)
    return LZetaElement(A.quiver, out, cap)


# ---------------------------------------------------------------------------
# Hamiltonians


def _as_cycle(q: Quiver, p) -> TraceWord:
    if isinstance(p, TraceWord):
        w = p
    elif isinstance(p, str):
        w = TraceWord((), base_vertex=p)
    else:
        w = TraceWord(tuple(p))
    w.validate(q)
    for l in w.letters:
        if not l.endswith("*") or _is_framing(q, l):
            raise ValueError("letter %s is not a starred base edge" % l)
    return w


def hamiltonian_Hp(V: RepPoint, p) -> complex:
    """Trace of the starred-edge product along a cycle; a bare vertex means the
    trivial cycle and gives the dimension there."""
    return trace_word(V, _as_cycle(V.quiver, p))


def ia_poly(q: Quiver, A: LZetaElement) -> WordPolynomial:
    """I_A as a trace-word polynomial: -sum (A_p)_{rs} tr(b_{js}* p b_{ir})."""
    terms = []
    for (src, letters), mat in A.comps.items():
        tgt = _path_target(q, src, letters)
        zi, zj = mat.shape
        for r in range(1, zi + 1):
            for s in range(1, zj + 1):
                c = mat[r - 1, s - 1]
                if c == 0:
                    continue
                w = TraceWord(("b%s_%d" % (src, r),) + letters + ("b%s_%d*" % (tgt, s),))
                terms.append((-c, [w]))
    return WordPolynomial(terms)


def integral_IA(V: RepPoint, A: LZetaElement) -> complex:
    return ia_poly(V.quiver, A).value(V)


def hamiltonian_Hlr(V: RepPoint, ell: int, r: int, cap: int = 12) -> complex:
    return integral_IA(V, e_r_ell(V.quiver, r, ell, cap))


# ---------------------------------------------------------------------------
# flows


def flow_exact_Hp(V: RepPoint, p, t: complex) -> RepPoint:
    """The flow of a starred-cycle Hamiltonian: linear translation of the
    unstarred base matrices, everything else frozen."""
    w = _as_cycle(V.quiver, p)
    field = hamiltonian_field(V, w)
    mats = {}
    for eid, M in V.mats.items():
        d = field.get(eid)
        mats[eid] = M if d is None or not np.any(d) else M + t * d
    return V.replace(**mats)


@dataclass
class Trajectory:
    times: list
    points: list
    conserved: dict = field(default_factory=dict)  # name -> list of values

    def __post_init__(self):
        ts = [complex(t) for t in self.times]
        if any(
            abs(b - a) == 0 for a, b in zip(ts, ts[1:])
        ):
            raise ValueError("time stamps must be distinct and increasing")


def _framing_flow_generators(V: RepPoint, A: LZetaElement):
    """Constant matrices generating the linear w- and v-flows, as block maps on
    the stacked framing matrices."""
    q = V.quiver
    zeta = zeta_sizes(q)
    verts = [v for v in q.vertices if v != INF and zeta[v] > 0]
    woff, voff = {}, {}
    wi, vi = 0, 0
    for v in verts:
        woff[v] = wi
        wi += zeta[v] * V.dim(v)
        voff[v] = vi
        vi += V.dim(v) * zeta[v]
    Ow = np.zeros((wi, wi), dtype=complex)
    Ov = np.zeros((vi, vi), dtype=complex)
    for (src, letters), Ap in A.comps.items():
        tgt = _path_target(q, src, letters)
        if zeta.get(src, 0) == 0 or zeta.get(tgt, 0) == 0:
            continue
        Vp = np.eye(V.dim(src), dtype=complex)
        for l in letters:
            Vp = V.mats[l] @ Vp
        # dw_src/dt -= A_p w_tgt V_p ; dv_tgt/dt += V_p v_src A_p
        i, j = src, tgt
        bw = np.kron(Ap, Vp.T)
        Ow[woff[i]:woff[i] + zeta[i] * V.dim(i), woff[j]:woff[j] + zeta[j] * V.dim(j)] -= bw
        bv = np.kron(Vp, Ap.T)
        Ov[voff[j]:voff[j] + V.dim(j) * zeta[j], voff[i]:voff[i] + V.dim(i) * zeta[i]] += bv
    return verts, woff, voff, Ow, Ov


def _pack_framing(V: RepPoint, verts, zeta):
    ws, vs = [], []
    for v in verts:
        w = np.vstack([V.mats["b%s_%d*" % (v, r)] for r in range(1, zeta[v] + 1)])
        vv = np.hstack([V.mats["b%s_%d" % (v, r)] for r in range(1, zeta[v] + 1)])
        ws.append(w.ravel())
        vs.append(vv.ravel())
    return (
        np.concatenate(ws) if ws else np.zeros(0, complex),
        np.concatenate(vs) if vs else np.zeros(0, complex),
    )


def _point_at(V: RepPoint, verts, zeta, woff, voff, W, Vv):
    mats = dict(V.mats)
    for v in verts:
        zv, av = zeta[v], V.dim(v)
        wmat = W[woff[v]:woff[v] + zv * av].reshape(zv, av)
        vmat = Vv[voff[v]:voff[v] + av * zv].reshape(av, zv)
        for r in range(1, zv + 1):
            mats["b%s_%d*" % (v, r)] = wmat[r - 1:r, :]
            mats["b%s_%d" % (v, r)] = vmat[:, r - 1:r]
    return V.replace(**mats)


def flow_IA(
    V: RepPoint,
    A: LZetaElement,
    t: complex,
    steps: int = 64,
    lam=None,
    conserve=(),
    tol: float = 1e-10,
) -> Trajectory:
    """Integrate the flow of I_A to time t.

    Framing maps move by the exact exponential of their constant linear system;
    the unstarred base matrices are recovered by quadrature of an entire
    integrand (Simpson with one Richardson halving, refined until tol)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    q = V.quiver
    zeta = zeta_sizes(q)
    verts, woff, voff, Ow, Ov = _framing_flow_generators(V, A)
    W0, V0 = _pack_framing(V, verts, zeta)
    poly = ia_poly(q, A)
    base_edges = [
        e for e in q.unstarred_edges() if not _is_framing(q, e.id)
    ]

    def point_at(s):
        W = scipy.linalg.expm(s * Ow) @ W0 if W0.size else W0
        Vv = scipy.linalg.expm(s * Ov) @ V0 if V0.size else V0
        return _point_at(V, verts, zeta, woff, voff, W, Vv)

    def integrand(s):
        P = point_at(s)
        return {e.id: -poly.gradient(P, q.star_of[e.id]) for e in base_edges}

    def simpson(n):
        # composite Simpson over [0, t] along the straight segment
        total = {e.id: np.zeros_like(V.mats[e.id]) for e in base_edges}
        h = t / (2 * n)
        for j in range(2 * n + 1):
            wgt = 1 if j in (0, 2 * n) else (4 if j % 2 else 2)
            f = integrand(j * h)
            for eid in total:
                total[eid] = total[eid] + wgt * f[eid]
        return {eid: (h / 3) * M for eid, M in total.items()}

    n = max(1, steps // 2)
    coarse = simpson(n)
    for _ in range(12):
        fine = simpson(2 * n)
        rich = {
            eid: fine[eid] + (fine[eid] - coarse[eid]) / 15.0 for eid in fine
        }
        err = max(
            (np.max(np.abs(fine[eid] - coarse[eid])) for eid in fine), default=0.0
        )
        if err <= tol * 15:
            break
        coarse, n = fine, 2 * n
        if n > 1 << 16:
            raise RuntimeError("step-size underflow in the quadrature")

    end = point_at(t)
    mats = {eid: end.mats[eid] for eid in end.mats}
    for eid, incr in rich.items():
        mats[eid] = V.mats[eid] + incr
    final = V.replace(**mats)

    times = [0.0, t] if t != 0 else [0.0]
    points = [V, final] if t != 0 else [V]
    log = {"I_A": [integral_IA(p, A) for p in points]}
    if lam is not None:
        log["relation_residual"] = [relation_residual(p, lam) for p in points]
    for name, f in conserve:
        log[name] = [f(p) for p in points]
    return Trajectory(times, points, log)

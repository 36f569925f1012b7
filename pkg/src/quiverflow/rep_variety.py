"""Points of the deformed-relation representation variety as matrix tuples.

Moment map, relation residuals, gauge action, trace-word functions, the
canonical Poisson bracket of trace-word polynomials, and a numerical
simplicity test.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .quiver_core import Quiver


@dataclass(frozen=True)
class RepPoint:
    quiver: Quiver
    dims: tuple
    mats: dict  # edge id -> complex matrix (head_dim x tail_dim)

    def __post_init__(self):
        if len(self.dims) != len(self.quiver.vertices):
            raise ValueError("dims length mismatch")
        fixed = {}
        for e in self.quiver.edges:
            m = np.asarray(self.mats[e.id], dtype=complex)
            want = (self.dims[self.quiver.index(e.head)], self.dims[self.quiver.index(e.tail)])
            if m.shape != want:
                raise ValueError("matrix for %s has shape %s, expected %s" % (e.id, m.shape, want))
            fixed[e.id] = m
        object.__setattr__(self, "mats", fixed)

    def dim(self, v) -> int:
        return self.dims[self.quiver.index(v)]

    def replace(self, **updates) -> "RepPoint":
        mats = dict(self.mats)
        mats.update(updates)
        return RepPoint(self.quiver, self.dims, mats)


def zero_point(q: Quiver, dims) -> RepPoint:
    dims = tuple(int(d) for d in dims)
    mats = {}
    for e in q.edges:
        mats[e.id] = np.zeros((dims[q.index(e.head)], dims[q.index(e.tail)]), dtype=complex)
    return RepPoint(q, dims, mats)


def random_point(q: Quiver, dims, seed=0, scale=1.0) -> RepPoint:
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in dims)
    mats = {}
    for e in q.edges:
        shape = (dims[q.index(e.head)], dims[q.index(e.tail)])
        mats[e.id] = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return RepPoint(q, dims, mats)


def edge_sign(eid: str) -> int:
    """+1 for an original edge, -1 for a starred one."""
    return -1 if eid.endswith("*") else 1


def moment_map(V: RepPoint) -> dict:
    """Per-vertex matrices sum_{a: j->i} (-1)^a V_a V_{a*}."""
    q = V.quiver
    if not q.is_double:
        raise ValueError("moment map needs a double quiver")
    out = {v: np.zeros((V.dim(v), V.dim(v)), dtype=complex) for v in q.vertices}
    for e in q.edges:
        out[e.head] += edge_sign(e.id) * V.mats[e.id] @ V.mats[q.star_of[e.id]]
    return out


def relation_residual(V: RepPoint, lam) -> float:
    """max_i || P_i(V) - lam_i Id || in operator norm."""
    lam = np.asarray(lam, dtype=complex)
    P = moment_map(V)
    worst = 0.0
    for v, M in P.items():
        i = V.quiver.index(v)
        if M.size == 0:
            continue
        worst = max(worst, np.linalg.norm(M - lam[i] * np.eye(M.shape[0]), 2))
    return worst


@dataclass(frozen=True)
class GaugeElement:
    gs: dict  # vertex -> invertible matrix

    def inverse(self):
        return GaugeElement({v: np.linalg.inv(g) for v, g in self.gs.items()})


def random_gauge(V: RepPoint, seed=0, spread=0.5) -> GaugeElement:
    rng = np.random.default_rng(seed)
    gs = {}
    for v in V.quiver.vertices:
        n = V.dim(v)
        g = np.eye(n, dtype=complex)
        if n:
            g = g + spread * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
        gs[v] = g
    return GaugeElement(gs)


def gauge_act(g: GaugeElement, V: RepPoint) -> RepPoint:
    """V_a -> g_head V_a g_tail^{-1}."""
    inv = {}
    for v, gm in g.gs.items():
        if gm.shape[0] and abs(np.linalg.det(gm)) < 1e-300:
            raise np.linalg.LinAlgError("singular gauge matrix at vertex %s" % v)
        inv[v] = np.linalg.inv(gm) if gm.shape[0] else gm
    mats = {}
    for e in V.quiver.edges:
        mats[e.id] = g.gs[e.head] @ V.mats[e.id] @ inv[e.tail]
    return RepPoint(V.quiver, V.dims, mats)


# ---------------------------------------------------------------------------
# trace words


@dataclass(frozen=True)
class TraceWord:
    """A cyclic word of edge ids; the empty word at a vertex is the projector 1_v."""

    letters: tuple
    base_vertex: Optional[str] = None  # required only for the empty word

    def __post_init__(self):
        if not self.letters and self.base_vertex is None:
            raise ValueError("empty word needs a base vertex")

    def validate(self, q: Quiver):
        if not self.letters:
            return
        es = [q.edge(l) for l in self.letters]
        for a, b in zip(es, es[1:]):
            if a.head != b.tail:
                raise ValueError("letters %s,%s do not compose" % (a.id, b.id))
        if es[-1].head != es[0].tail:
            raise ValueError("word does not close up")

    def rotate(self, s: int) -> "TraceWord":
        if not self.letters:
            return self
        s %= len(self.letters)
        return TraceWord(self.letters[s:] + self.letters[:s])


def word(*letters, at=None) -> TraceWord:
    return TraceWord(tuple(letters), base_vertex=at)


def trace_word(V: RepPoint, w: TraceWord) -> complex:
    w.validate(V.quiver)
    if not w.letters:
        return complex(V.dim(w.base_vertex))
    prod = None
    for l in w.letters:
        m = V.mats[l]
        prod = m if prod is None else m @ prod
    return complex(np.trace(prod))


def word_gradient(V: RepPoint, w: TraceWord, eid: str) -> np.ndarray:
    """Matrix G with d(tr word) = tr(G dV_eid).

    G has shape (tail_dim, head_dim) of the edge; a sum over all occurrences of
    the edge in the cyclic word of the complementary product.
    """
    w.validate(V.quiver)
    q = V.quiver
    e = q.edge(eid)
    ti, hi = V.dim(e.tail), V.dim(e.head)
    G = np.zeros((ti, hi), dtype=complex)
    n = len(w.letters)
    for j, l in enumerate(w.letters):
        if l != eid:
            continue
        # product of the remaining letters taken cyclically after position j
        rest = None
        for s in range(1, n):
            m = V.mats[w.letters[(j + s) % n]]
            rest = m if rest is None else m @ rest
        if rest is None:
            rest = np.eye(ti, dtype=complex)
        G += rest
    return G


class WordPolynomial:
    """Finite linear combination of products of trace words."""

    def __init__(self, terms):
        # terms: list of (coefficient, [TraceWord, ...])
        self.terms = [(complex(c), list(ws)) for c, ws in terms]

    @classmethod
    def of(cls, w: TraceWord, coeff=1.0):
        return cls([(coeff, [w])])

    def __add__(self, other):
        return WordPolynomial(self.terms + other.terms)

    def __mul__(self, scalar):
        return WordPolynomial([(c * scalar, ws) for c, ws in self.terms])

    def value(self, V: RepPoint) -> complex:
        tot = 0.0 + 0.0j
        for c, ws in self.terms:
            prod = c
            for w in ws:
                prod *= trace_word(V, w)
            tot += prod
        return tot

    def gradient(self, V: RepPoint, eid: str) -> np.ndarray:
        e = V.quiver.edge(eid)
        G = np.zeros((V.dim(e.tail), V.dim(e.head)), dtype=complex)
        for c, ws in self.terms:
            vals = [trace_word(V, w) for w in ws]
            for i, w in enumerate(ws):
                pref = c
                for j, v in enumerate(vals):
                    if j != i:
                        pref *= v
                G += pref * word_gradient(V, w, eid)
        return G


def _as_poly(f) -> WordPolynomial:
    if isinstance(f, TraceWord):
        return WordPolynomial.of(f)
    return f


def poisson_bracket_grads(V: RepPoint, grad_f: dict, grad_g: dict) -> complex:
    """Bracket from precomputed gradient dicts (edge id -> matrix with the
    tr(G dV) pairing convention)."""
    q = V.quiver
    if not q.is_double:
        raise ValueError("bracket needs a double quiver")
    tot = 0.0 + 0.0j
    for e in q.unstarred_edges():
        a, astar = e.id, q.star_of[e.id]
        tot += np.trace(grad_f[a] @ grad_g[astar]) - np.trace(grad_g[a] @ grad_f[astar])
    return complex(tot)


def poisson_bracket(V: RepPoint, f, g) -> complex:
    """Canonical bracket with {V_a, V_{a*}} pairing of weight (-1)^a."""
    fp, gp = _as_poly(f), _as_poly(g)
    gf = {e.id: fp.gradient(V, e.id) for e in V.quiver.edges}
    gg = {e.id: gp.gradient(V, e.id) for e in V.quiver.edges}
    return poisson_bracket_grads(V, gf, gg)


def hamiltonian_field(V: RepPoint, f) -> dict:
    """The Hamiltonian vector field of a trace-word polynomial.

    dV_a/dt = -grad_{a*} f and dV_{a*}/dt = +grad_a f; with the tr(G dV)
    pairing convention the gradient matrices already have the right shapes.
    """
    q = V.quiver
    fp = _as_poly(f)
    out = {}
    for e in q.unstarred_edges():
        a, astar = e.id, q.star_of[e.id]
        out[a] = -fp.gradient(V, astar)
        out[astar] = fp.gradient(V, a)
    return out


# ---------------------------------------------------------------------------
# solving the relations numerically


def solve_relations(q: Quiver, dims, lam, seed=0, scale=1.0, tol=1e-10, max_tries=8) -> RepPoint:
    """Find a point with P_i(V) = lam_i Id by least squares from a random start.

    The system is underdetermined (gauge directions), which Gauss-Newton with a
    trust region handles fine. Requires sum_i lam_i dims_i = 0.
    """
    from scipy.optimize import least_squares

    lam = np.asarray(lam, dtype=complex)
    dims = tuple(int(d) for d in dims)
    if abs(sum(lam[q.index(v)] * dims[q.index(v)] for v in q.vertices)) > 1e-9:
        raise ValueError("lam . dims != 0: the relations have no solution")
    shapes = [(e.id, (dims[q.index(e.head)], dims[q.index(e.tail)])) for e in q.edges]
    sizes = [sh[0] * sh[1] for _, sh in shapes]
    total = sum(sizes)

    def unpack(x):
        z = x[:total] + 1j * x[total:]
        mats, off = {}, 0
        for (eid, sh), sz in zip(shapes, sizes):
            mats[eid] = z[off:off + sz].reshape(sh)
            off += sz
        return RepPoint(q, dims, mats)

    def resid(x):
        P = moment_map(unpack(x))
        parts = [
            (P[v] - lam[q.index(v)] * np.eye(dims[q.index(v)])).ravel()
            for v in q.vertices
        ]
        z = np.concatenate(parts) if parts else np.zeros(0, dtype=complex)
        return np.concatenate([z.real, z.imag])

    for t in range(max_tries):
        rng = np.random.default_rng(seed + 7919 * t)
        x0 = scale * rng.standard_normal(2 * total)
        sol = least_squares(resid, x0, xtol=3e-16, ftol=3e-16, gtol=3e-16)
        V = unpack(sol.x)
        if relation_residual(V, lam) <= tol:
            return V
    raise RuntimeError(
        "no point found for dims %s after %d attempts" % (dims, max_tries)
    )


# ---------------------------------------------------------------------------
# simplicity


def is_simple(V: RepPoint, max_rounds: int = 30, tol: float = 1e-8) -> bool:
    """Jacobson-density test: the algebra generated by the vertex projections and
    the edge matrices acting on the total space must fill End of it."""
    q = V.quiver
    N = sum(V.dims)
    if N == 0:
        return False
    offs = {}
    acc = 0
    for v in q.vertices:
        offs[v] = acc
        acc += V.dim(v)
    gens = []
    for v in q.vertices:
        P = np.zeros((N, N), dtype=complex)
        n = V.dim(v)
        P[offs[v]:offs[v] + n, offs[v]:offs[v] + n] = np.eye(n)
        gens.append(P)
    for e in q.edges:
        M = np.zeros((N, N), dtype=complex)
        hn, tn = V.dim(e.head), V.dim(e.tail)
        M[offs[e.head]:offs[e.head] + hn, offs[e.tail]:offs[e.tail] + tn] = V.mats[e.id]
        gens.append(M)

    basis = []  # orthonormal rows spanning the flattened algebra

    def add(mat):
        vec = mat.ravel().copy()
        for b in basis:
            vec -= np.vdot(b, vec) * b
        nrm = np.linalg.norm(vec)
        if nrm > tol * max(1.0, np.linalg.norm(mat)):
            basis.append(vec / nrm)
            return True
        return False

    frontier = []
    for gmat in gens + [np.eye(N, dtype=complex)]:
        if add(gmat):
            frontier.append(gmat)
    for _ in range(max_rounds):
        new_frontier = []
        for f in frontier:
            for gmat in gens:
                prod = gmat @ f
                if add(prod):
                    new_frontier.append(prod)
                if len(basis) == N * N:
                    return True
        if not new_frontier:
            break
        frontier = new_frontier
    return len(basis) == N * N

"""Quivers, framing, the symmetric bilinear form, reflections and root classification.

Dimension vectors and weights are plain numpy arrays aligned with the order of
``Quiver.vertices``. All operations here are pure functions on immutable data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from collections import deque
from itertools import product
from typing import Callable, Optional, Sequence

import numpy as np

INF = "inf"


@dataclass(frozen=True)
class Edge:
    id: str
    tail: str
    head: str


@dataclass(frozen=True)
class Quiver:
    vertices: tuple
    edges: tuple
    # edge-id -> edge-id pairing, present only for doubled quivers
    star_of: Optional[dict] = None

    def __post_init__(self):
        vs = set(self.vertices)
        for e in self.edges:
            if e.tail not in vs or e.head not in vs:
                raise ValueError("edge %s has endpoint outside vertex set" % e.id)
        if self.star_of is not None:
            emap = {e.id: e for e in self.edges}
            for a, b in self.star_of.items():
                if a == b or self.star_of[b] != a:
                    raise ValueError("star pairing is not a fixed-point-free involution")
                if emap[a].tail != emap[b].head or emap[a].head != emap[b].tail:
                    raise ValueError("star partner of %s does not reverse it" % a)

    def index(self, v) -> int:
        return self.vertices.index(v)

    def edge(self, eid: str) -> Edge:
        for e in self.edges:
            if e.id == eid:
                return e
        raise KeyError(eid)

    @property
    def is_double(self) -> bool:
        return self.star_of is not None

    def unstarred_edges(self):
        """Edges of the underlying quiver (all edges if not a double)."""
        if self.star_of is None:
            return list(self.edges)
        return [e for e in self.edges if not e.id.endswith("*")]

    def n_matrix(self) -> np.ndarray:
        """n_ij = number of edges joining i and j in either direction; n_ii = 2 * loops."""
        k = len(self.vertices)
        n = np.zeros((k, k), dtype=int)
        for e in self.unstarred_edges():
            i, j = self.index(e.tail), self.index(e.head)
            if i == j:
                n[i, i] += 2
            else:
                n[i, j] += 1
                n[j, i] += 1
        return n

    def loop_free(self):
        """Indices of vertices with no loop attached."""
        n = self.n_matrix()
        return [i for i in range(len(self.vertices)) if n[i, i] == 0]


@dataclass(frozen=True)
class FramedQuiver:
    base: Quiver
    zeta: tuple  # one nonnegative integer per base vertex
    quiver: Quiver = field(init=False)

    def __post_init__(self):
        if len(self.zeta) != len(self.base.vertices):
            raise ValueError("framing vector length mismatch")
        if any(z < 0 for z in self.zeta):
            raise ValueError("framing multiplicities must be nonnegative")
        verts = (INF,) + tuple(self.base.vertices)
        edges = list(self.base.edges)
        for i, v in enumerate(self.base.vertices):
            for r in range(1, self.zeta[i] + 1):
                edges.append(Edge("b%s_%d" % (v, r), INF, v))
        object.__setattr__(self, "quiver", Quiver(verts, tuple(edges)))

    def framing_edge(self, v, r) -> str:
        return "b%s_%d" % (v, r)


def double(q: Quiver) -> Quiver:
    """The double quiver: a reversed partner a* for every edge a."""
    if q.is_double:
        raise ValueError("already a double quiver")
    edges = list(q.edges)
    star = {}
    for e in q.edges:
        sid = e.id + "*"
        edges.append(Edge(sid, e.head, e.tail))
        star[e.id] = sid
        star[sid] = e.id
    return Quiver(q.vertices, tuple(edges), star)


def builtin(name: str) -> Quiver:
    """Named quivers: ``jordan``, ``cyclic:<m>``, ``A:<n>``."""
    if name == "jordan":
        return Quiver(("0",), (Edge("a0", "0", "0"),))
    if name.startswith("cyclic:"):
        m = int(name.split(":")[1])
        if m < 1:
            raise ValueError("cyclic quiver needs m >= 1")
        if m == 1:
            return builtin("jordan")
        vs = tuple(str(i) for i in range(m))
        es = tuple(Edge("a%d" % i, str(i), str((i + 1) % m)) for i in range(m))
        return Quiver(vs, es)
    if name.startswith("A:"):
        n = int(name.split(":")[1])
        if n < 1:
            raise ValueError("A-type quiver needs n >= 1 vertices")
        vs = tuple(str(i) for i in range(n))
        es = tuple(Edge("a%d" % i, str(i), str(i + 1)) for i in range(n - 1))
        return Quiver(vs, es)
    raise ValueError("unknown builtin quiver %r" % name)


def quiver_from_json(obj) -> Quiver:
    edges = tuple(Edge(e["id"], e["tail"], e["head"]) for e in obj["edges"])
    return Quiver(tuple(obj["vertices"]), edges)


# ---------------------------------------------------------------------------
# bilinear form, Tits form, reflections


def _as_vec(q: Quiver, alpha) -> np.ndarray:
    a = np.asarray(alpha)
    if a.shape != (len(q.vertices),):
        raise ValueError("vector has length %s, expected %d" % (a.shape, len(q.vertices)))
    return a


def bilinear_form(q: Quiver, alpha, beta):
    """(alpha, beta) = 2 sum_i a_i b_i - sum_{edges i->j} (a_i b_j + a_j b_i)."""
    a = _as_vec(q, alpha)
    b = _as_vec(q, beta)
    val = 2 * np.dot(a, b)
    for e in q.unstarred_edges():
        i, j = q.index(e.tail), q.index(e.head)
        val -= a[i] * b[j] + a[j] * b[i]
    return val


def tits_forms(q: Quiver, alpha):
    """Returns (q(alpha), p(alpha)) with q = (alpha,alpha)/2 and p = 1 - q."""
    a = _as_vec(q, alpha)
    two_q = bilinear_form(q, a, a)
    if two_q % 2 != 0:
        raise ArithmeticError("(alpha,alpha) should always be even")
    qq = two_q // 2
    return qq, 1 - qq


def _unit(q: Quiver, k: int) -> np.ndarray:
    e = np.zeros(len(q.vertices), dtype=int)
    e[k] = 1
    return e


def reflect_dim(q: Quiver, k: int, alpha) -> np.ndarray:
    """s_k alpha = alpha - (alpha, eps_k) eps_k, for loop-free k."""
    if k not in q.loop_free():
        raise ValueError("vertex %s carries a loop; reflection undefined" % q.vertices[k])
    a = _as_vec(q, alpha).copy()
    a[k] -= bilinear_form(q, a, _unit(q, k))
    return a


def reflect_weight(q: Quiver, k: int, lam) -> np.ndarray:
    """(r_k lam)_j = lam_j - (eps_k, eps_j) lam_k, for loop-free k."""
    if k not in q.loop_free():
        raise ValueError("vertex %s carries a loop; reflection undefined" % q.vertices[k])
    lam = np.asarray(lam, dtype=complex)
    if lam.shape != (len(q.vertices),):
        raise ValueError("weight length mismatch")
    n = q.n_matrix()
    out = lam.copy()
    for j in range(len(lam)):
        cart = 2 if j == k else -n[k, j]
        out[j] = lam[j] - cart * lam[k]
    return out


# ---------------------------------------------------------------------------
# root classification


@dataclass(frozen=True)
class RootClass:
    kind: str  # "real" | "imaginary" | "not_root"
    sign: Optional[int] = None
    chain: tuple = ()  # reflection vertices applied during descent
    witness: Optional[tuple] = None  # final vector reached by the descent

    @property
    def is_root(self):
        return self.kind in ("real", "imaginary")


def _support_connected(q: Quiver, alpha) -> bool:
    supp = {i for i in range(len(alpha)) if alpha[i] != 0}
    if not supp:
        return False
    n = q.n_matrix()
    seen = {next(iter(supp))}
    work = deque(seen)
    while work:
        i = work.popleft()
        for j in supp:
            if j not in seen and (n[i, j] > 0 or (i == j)):
                seen.add(j)
                work.append(j)
    return seen == supp


def classify_root(q: Quiver, alpha) -> RootClass:
    """Kac-style classification by reflection descent.

    Normalizes sign first (mixed-sign vectors are not roots), then repeatedly
    reflects at the smallest-index loop-free vertex with (alpha, eps_i) > 0.
    The coordinate sum strictly decreases, so this terminates.
    """
    a = _as_vec(q, alpha).astype(int)
    if not a.any():
        return RootClass("not_root")
    if np.all(a <= 0):
        sign = -1
        a = -a
    elif np.all(a >= 0):
        sign = 1
    else:
        return RootClass("not_root")

    lf = q.loop_free()
    units = {i: _unit(q, i) for i in lf}
    chain = []
    while True:
        for i in lf:
            if a[i] == 1 and not np.delete(a, i).any():
                return RootClass("real", sign, tuple(chain), tuple(a))
        pairings = {i: bilinear_form(q, a, units[i]) for i in lf}
        if all(v <= 0 for v in pairings.values()):
            if _support_connected(q, a):
                return RootClass("imaginary", sign, tuple(chain), tuple(a))
            return RootClass("not_root")
        k = min(i for i, v in pairings.items() if v > 0)
        a = reflect_dim(q, k, a)
        chain.append(k)
        if np.any(a < 0):
            return RootClass("not_root")


# ---------------------------------------------------------------------------
# regularity of weights


@dataclass(frozen=True)
class RegularityResult:
    regular: bool
    exact: bool
    bound: Optional[int] = None
    witness: Optional[tuple] = None  # a root alpha with lam . alpha == 0


def _is_cyclic_family(q: Quiver) -> bool:
    """One vertex with a loop (Jordan) or an oriented cycle through every vertex."""
    m = len(q.vertices)
    es = q.unstarred_edges()
    if len(es) != m:
        return False
    if m == 1:
        return es[0].tail == es[0].head
    outs = {e.tail: e.head for e in es}
    if len(outs) != m:
        return False
    v = q.vertices[0]
    seen = []
    for _ in range(m):
        seen.append(v)
        v = outs.get(v)
        if v is None:
            return False
    return v == q.vertices[0] and len(set(seen)) == m


def is_regular(q: Quiver, lam, height_bound: int = 20) -> RegularityResult:
    """lam is regular when lam . alpha != 0 for every root alpha.

    Exact for the cyclic family (affine type-A root system in closed form);
    a bounded root enumeration elsewhere.
    """
    if height_bound < 1:
        raise ValueError("height_bound must be >= 1")
    lam = np.asarray(lam, dtype=complex)
    m = len(q.vertices)
    if _is_cyclic_family(q):
        tot = lam.sum()
        if abs(tot) < 1e-12:
            return RegularityResult(False, True, witness=tuple([1] * m))
        # arc segments of the cycle; every real root is k*delta +- segment
        order = [q.vertices[0]]
        outs = {e.tail: e.head for e in q.unstarred_edges()}
        for _ in range(m - 1):
            order.append(outs[order[-1]])
        idx = [q.index(v) for v in order]
        for start in range(m):
            for length in range(1, m):
                seg = [idx[(start + t) % m] for t in range(length)]
                s = sum(lam[i] for i in seg)
                ratio = s / tot
                k = round(ratio.real)
                if abs(ratio - k) < 1e-9:
                    seg_vec = np.zeros(m, dtype=int)
                    for i in seg:
                        seg_vec[i] += 1
                    if k <= 0:
                        # lam . ((-k) delta + segment) = 0, a positive root
                        wit = (-k) * np.ones(m, dtype=int) + seg_vec
                    else:
                        # lam . (k delta - segment) = 0
                        wit = k * np.ones(m, dtype=int) - seg_vec
                    return RegularityResult(False, True, witness=tuple(wit))
        return RegularityResult(True, True)
    # bounded enumeration over the lattice box
    for alpha in positive_roots_up_to(q, height_bound):
        if abs(np.dot(lam, alpha)) < 1e-12:
            return RegularityResult(False, False, bound=height_bound, witness=tuple(alpha))
    return RegularityResult(True, False, bound=height_bound)


def positive_roots_up_to(q: Quiver, height: int):
    """All positive roots with coordinate sum <= height, by direct classification."""
    m = len(q.vertices)
    out = []
    for tot in range(1, height + 1):
        for alpha in _compositions(tot, m):
            if classify_root(q, np.array(alpha)).is_root:
                out.append(np.array(alpha))
    return out


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


# ---------------------------------------------------------------------------
# representation existence and the strict-decomposition test


@dataclass(frozen=True)
class TriState:
    status: str  # "yes" | "no" | "unknown"
    witness: Optional[tuple] = None
    bound: int = 0
    exhausted: bool = True


def _lambda_roots_below(q: Quiver, lam, alpha, tol=1e-10):
    """Positive roots beta <= alpha (componentwise) with lam . beta = 0."""
    lam = np.asarray(lam, dtype=complex)
    roots = []
    for beta in product(*[range(int(x) + 1) for x in alpha]):
        b = np.array(beta)
        if not b.any():
            continue
        if classify_root(q, b).is_root and abs(np.dot(lam, b)) < tol:
            roots.append(b)
    return roots


class _BudgetExceeded(Exception):
    pass


def _decompositions(alpha, parts, budget):
    """Multiset decompositions of alpha into vectors from `parts`.

    Indices are yielded non-increasing to avoid duplicate multisets. Raises
    _BudgetExceeded when the search-node budget runs out.
    """
    counter = [0]

    def rec(rem, max_idx, acc):
        counter[0] += 1
        if counter[0] > budget:
            raise _BudgetExceeded
        if not rem.any():
            yield list(acc)
            return
        for i in range(max_idx, -1, -1):
            if np.all(rem >= parts[i]):
                acc.append(i)
                yield from rec(rem - parts[i], i, acc)
                acc.pop()

    yield from rec(np.array(alpha), len(parts) - 1, [])


def rep_existence(q: Quiver, lam, alpha, bound: int = 200000) -> TriState:
    """Does alpha decompose into positive roots each annihilated by lam?"""
    a = _as_vec(q, alpha)
    if np.any(a < 0):
        raise ValueError("alpha must be nonnegative")
    parts = _lambda_roots_below(q, lam, a)
    if not parts:
        return TriState("no", bound=bound)
    try:
        for dec in _decompositions(a, parts, bound):
            return TriState("yes", witness=tuple(tuple(parts[i]) for i in dec), bound=bound)
    except _BudgetExceeded:
        return TriState("unknown", bound=bound, exhausted=False)
    return TriState("no", bound=bound)


def sigma_lambda_test(q: Quiver, lam, alpha, bound: int = 200000) -> TriState:
    """Strict p-superadditivity over nontrivial decompositions into lam-null roots."""
    a = _as_vec(q, alpha)
    rc = classify_root(q, a)
    if not (rc.is_root and rc.sign == 1):
        raise ValueError("alpha must be a positive root")
    lam = np.asarray(lam, dtype=complex)
    if abs(np.dot(lam, a)) > 1e-10:
        raise ValueError("lam . alpha must vanish")
    _, p_alpha = tits_forms(q, a)
    parts = _lambda_roots_below(q, lam, a)
    try:
        for dec in _decompositions(a, parts, bound):
            if len(dec) < 2:
                continue  # the trivial decomposition does not count
            p_sum = sum(tits_forms(q, parts[i])[1] for i in dec)
            if not p_alpha > p_sum:
                return TriState("no", witness=tuple(tuple(parts[i]) for i in dec), bound=bound)
    except _BudgetExceeded:
        return TriState("unknown", bound=bound, exhausted=False)
    return TriState("yes", bound=bound)


# ---------------------------------------------------------------------------
# orbit search over admissible-reflection chains


def orbit_search(fq: FramedQuiver, start, target_predicate: Callable, depth: int):
    """BFS over (lam, alpha) -> (r_k lam, s_k alpha) for admissible loop-free k.

    `start` is a (weight, dimvector) pair over the framed quiver. Returns the
    first chain of vertex indices reaching the predicate, or None.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    q = fq.quiver
    lf = q.loop_free()
    lam0, a0 = start
    lam0 = np.asarray(lam0, dtype=complex)
    a0 = np.asarray(a0, dtype=int)

    def key(lam, a):
        return tuple(np.round(lam, 9).tolist()), tuple(a.tolist())

    if target_predicate(lam0, a0):
        return []
    seen = {key(lam0, a0)}
    frontier = deque([(lam0, a0, [])])
    while frontier:
        lam, a, chain = frontier.popleft()
        if len(chain) >= depth:
            continue
        for k in lf:
            if abs(lam[k]) <= 1e-12:
                continue
            lam2 = reflect_weight(q, k, lam)
            a2 = reflect_dim(q, k, a)
            kk = key(lam2, a2)
            if kk in seen:
                continue
            seen.add(kk)
            nxt = chain + [k]
            if target_predicate(lam2, a2):
                return nxt
            frontier.append((lam2, a2, nxt))
    return None


def framed_dims(fq: FramedQuiver, alpha) -> np.ndarray:
    """The extended dimension vector (1, alpha) in the framed quiver's vertex order."""
    return np.concatenate([[1], np.asarray(alpha, dtype=int)])


def framed_weight(fq: FramedQuiver, lam, alpha) -> np.ndarray:
    """The extended weight (-lam . alpha, lam)."""
    lam = np.asarray(lam, dtype=complex)
    a = np.asarray(alpha)
    return np.concatenate([[-np.dot(lam, a)], lam])

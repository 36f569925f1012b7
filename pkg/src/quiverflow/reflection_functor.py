"""Matrix-level reflection functor at a loop-free vertex of a double quiver.

The construction splits the sum V_oplus of the spaces at the neighbours of the
reflection vertex k into the image of mu (a copy of V_k) and the kernel of pi,
then reads the new edge matrices off the block components of the splitting.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .quiver_core import Quiver, reflect_dim, reflect_weight
from .rep_variety import (
    RepPoint,
    edge_sign,
    poisson_bracket,
    relation_residual,
    trace_word,
    TraceWord,
)

INF = "inf"

__all__ = [
    "ReflectionResult",
    "ChainResult",
    "TracePullback",
    "admissible",
    "apply_reflection",
    "chain_apply",
    "enumerate_cycles",
    "framing_sizes",
    "involution_check",
    "symplectic_proxy_check",
    "trace_pullback_check",
    "transport_H0",
]


def admissible(q: Quiver, lam, k) -> bool:
    """True iff k carries no loop and the weight does not vanish there."""
    if any(e.tail == k and e.head == k for e in q.edges):
        return False
    return abs(complex(np.asarray(lam)[q.index(k)])) > 1e-12


@dataclass
class ReflectionResult:
    point: RepPoint
    weight: tuple
    kernel_basis: np.ndarray  # columns span Ker pi inside V_oplus
    conditioning: float  # smallest retained singular value of 1 - mu pi
    mode: str


def _incoming(q: Quiver, k):
    """Edges of the double with head k, in declaration order."""
    return [e for e in q.edges if e.head == k]


def apply_reflection(V: RepPoint, k, lam, mode: str = "svd") -> ReflectionResult:
    q = V.quiver
    if not q.is_double:
        raise ValueError("reflection needs a double quiver")
    if not admissible(q, lam, k):
        raise ValueError("not admissible at vertex %s" % k)
    lam = np.asarray(lam, dtype=complex)
    lk = lam[q.index(k)]

    H = _incoming(q, k)
    nk = V.dim(k)
    blocks = [(e, V.dim(e.tail)) for e in H]
    total = sum(b for _, b in blocks)
    p0 = total - nk
    if p0 < 0:
        raise ValueError("negative reflected dimension at %s" % k)

    mu = np.zeros((total, nk), dtype=complex)
    pi = np.zeros((nk, total), dtype=complex)
    off = 0
    for e, b in blocks:
        mu[off:off + b, :] = V.mats[q.star_of[e.id]]
        pi[:, off:off + b] = (edge_sign(e.id) / lk) * V.mats[e.id]
        off += b

    if nk and np.linalg.norm(pi @ mu - np.eye(nk)) > 1e-8 * max(1.0, np.linalg.norm(mu)):
        raise ValueError("pi mu != 1: point does not satisfy the relation at %s" % k)

    P = np.eye(total, dtype=complex) - mu @ pi

    if mode == "svd":
        if total:
            U, s, _ = np.linalg.svd(P)
        else:
            U, s = np.zeros((0, 0), dtype=complex), np.zeros(0)
        if p0:
            smax = s[0] if s.size else 0.0
            if s[p0 - 1] <= 1e-10 * smax:
                raise ValueError(
                    "degenerate kernel extraction at %s: rank < %d "
                    "(sigma_%d = %.3e)" % (k, p0, p0, s[p0 - 1])
                )
            if p0 < s.size and s[p0] > 1e-6 * smax:
                raise ValueError(
                    "degenerate kernel extraction at %s: rank > %d "
                    "(sigma_%d = %.3e)" % (k, p0, p0 + 1, s[p0])
                )
        mu_p = U[:, :p0]
        pi_p = mu_p.conj().T @ P
        cond = float(s[p0 - 1]) if p0 else 1.0
    elif mode == "pivot":
        if total:
            _, _, piv = scipy.linalg.qr(P, pivoting=True)
        else:
            piv = np.zeros(0, dtype=int)
        C = P[:, piv[:p0]]
        gram = C.conj().T @ C
        if p0:
            sv = np.linalg.svd(gram, compute_uv=False)
            if sv[-1] <= 1e-20 * max(sv[0], 1.0):
                raise ValueError("degenerate pivot columns at %s" % k)
            cond = float(np.sqrt(sv[-1]))
        else:
            cond = 1.0
        mu_p = C
        pi_p = np.linalg.solve(gram, C.conj().T @ P) if p0 else np.zeros((0, total), dtype=complex)
    else:
        raise ValueError("unknown mode %r" % mode)

    mats = dict(V.mats)
    off = 0
    for e, b in blocks:
        mats[e.id] = -lk * edge_sign(e.id) * pi_p[:, off:off + b]
        mats[q.star_of[e.id]] = mu_p[off:off + b, :]
        off += b

    dims = tuple(int(x) for x in reflect_dim(q, q.index(k), V.dims))
    point = RepPoint(q, dims, mats)
    new_lam = tuple(complex(x) for x in reflect_weight(q, q.index(k), lam))
    return ReflectionResult(point, new_lam, mu_p, cond, mode)


# ---------------------------------------------------------------------------
# generating trace words


def enumerate_cycles(q: Quiver, max_len: int):
    """All cyclic words in the double quiver up to the length cap, one
    representative per rotation class."""
    out_edges = {v: [e for e in q.edges if e.tail == v] for v in q.vertices}
    seen = set()
    words = []

    def canon(letters):
        n = len(letters)
        return min(tuple(letters[s:] + letters[:s]) for s in range(n))

    def walk(start, here, letters):
        if letters and here == start:
            key = canon(letters)
            if key not in seen:
                seen.add(key)
                words.append(TraceWord(key))
        if len(letters) == max_len:
            return
        for e in out_edges[here]:
            walk(start, e.head, letters + [e.id])

    for v in q.vertices:
        walk(v, v, [])
    return words


def _default_cap(q: Quiver) -> int:
    return min(8, 2 * len(q.vertices))


def involution_check(V: RepPoint, k, lam, max_len: Optional[int] = None) -> float:
    """Apply the functor twice (with the reflected weight the second time) and
    return the worst trace-word discrepancy over a generating set of cycles."""
    r1 = apply_reflection(V, k, lam)
    r2 = apply_reflection(r1.point, k, r1.weight)
    if r2.point.dims != V.dims:
        raise AssertionError("double reflection changed dimensions")
    cap = max_len if max_len is not None else _default_cap(V.quiver)
    worst = 0.0
    for w in enumerate_cycles(V.quiver, cap):
        worst = max(worst, abs(trace_word(r2.point, w) - trace_word(V, w)))
    return worst


# ---------------------------------------------------------------------------
# trace transport


@dataclass
class TracePullback:
    lhs: complex
    rhs: complex
    match: Optional[bool]  # None when only the subcycle expansion is owed
    pattern_ok: bool


def _pattern_ok(q: Quiver, w: TraceWord, k) -> bool:
    """No letter through k is immediately undone by its star."""
    if not w.letters:
        return True
    n = len(w.letters)
    for j, l in enumerate(w.letters):
        if q.edge(l).head == k and w.letters[(j + 1) % n] == q.star_of[l]:
            return False
    return True


def trace_pullback_check(V: RepPoint, k, lam, w: TraceWord, tol: float = 1e-9) -> TracePullback:
    w.validate(V.quiver)
    res = apply_reflection(V, k, lam)
    lhs = trace_word(res.point, w)
    rhs = trace_word(V, w)
    if _pattern_ok(V.quiver, w, k):
        return TracePullback(lhs, rhs, bool(abs(lhs - rhs) <= tol), True)
    return TracePullback(lhs, rhs, None, False)


def symplectic_proxy_check(V: RepPoint, k, lam, w1: TraceWord, w2: TraceWord) -> float:
    """|{w1,w2}(V) - {w1,w2}(V')| for pattern-safe words: the functor is a
    symplectomorphism, so brackets of transported functions agree."""
    Vp = apply_reflection(V, k, lam).point
    return abs(poisson_bracket(V, w1, w2) - poisson_bracket(Vp, w1, w2))


# ---------------------------------------------------------------------------
# chains and Hamiltonian transport


def framing_sizes(q: Quiver) -> dict:
    """Framing sizes read off the b-edge ids, for quivers built by framing."""
    zeta = {v: 0 for v in q.vertices if v != INF}
    for e in q.edges:
        if e.tail == INF and not e.id.endswith("*"):
            v, r = e.id[1:].rsplit("_", 1)
            zeta[v] = max(zeta[v], int(r))
    return zeta


def transport_H0(q: Quiver, dims, lam, k) -> dict:
    """Shift constants c_r with H_{0,r}(new point) = H_{0,r}(old point) + c_r."""
    lam = np.asarray(lam, dtype=complex)
    zeta = framing_sizes(q)
    if not zeta:
        return {}
    rmax = max(zeta.values())
    lk = lam[q.index(k)]
    shifts = {}
    for r in range(1, rmax + 1):
        if k == INF:
            shifts[r] = -lk * sum(
                dims[q.index(i)] for i, z in zeta.items() if r <= z
            )
        else:
            shifts[r] = lk * dims[q.index(INF)] if r <= zeta.get(k, 0) else 0.0
    return shifts


@dataclass
class ChainResult:
    point: RepPoint
    weight: tuple
    steps: list  # per-step dicts: vertex, lambda_k, h0_shifts, conditioning


def chain_apply(V: RepPoint, chain, lam, mode: str = "svd") -> ChainResult:
    lam = tuple(complex(x) for x in np.asarray(lam, dtype=complex))
    steps = []
    point = V
    for idx, k in enumerate(chain):
        if not admissible(point.quiver, lam, k):
            raise ValueError("chain step %d not admissible at %s" % (idx, k))
        shifts = transport_H0(point.quiver, point.dims, lam, k)
        res = apply_reflection(point, k, lam, mode=mode)
        steps.append(
            {
                "vertex": k,
                "lambda_k": complex(np.asarray(lam)[point.quiver.index(k)]),
                "h0_shifts": shifts,
                "conditioning": res.conditioning,
            }
        )
        point, lam = res.point, res.weight
    return ChainResult(point, tuple(lam), steps)

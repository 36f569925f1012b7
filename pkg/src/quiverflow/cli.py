"""Command-line front end: catalog queries, flow and operator checks, KP
seed I/O, and the machine-readable verification suite."""

import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import click
import numpy as np

from .cyclic_systems import (
    CyclicPoint,
    block_lift,
    from_darboux,
    random_chart,
    to_framed,
)
from .hamiltonian_dynamics import e_r_ell, flow_IA, hamiltonian_Hlr
from .kp_solutions import (
    SolutionSeed,
    build_M,
    constraint_residuals,
    dress,
    emit_u,
    evolve_seed,
    kp_pde_residual,
    lax_residual,
    op_dist,
)
from .operator_algebra import (
    ce_weight,
    ce_x,
    hbar_from_crossed,
    hbar_mul,
    hbar_y,
    rf_pole,
)
from .quiver_core import FramedQuiver, builtin, classify_root, double, is_regular
from .rep_variety import relation_residual, solve_relations
from .reflection_functor import apply_reflection

SEED_SCHEMA = "quiverflow-seed/1"
REPORT_SCHEMA = "quiverflow-report/1"


# ---------------------------------------------------------------------------
# deterministic JSON


def _render(obj, out):
    """Serialize with sorted keys and floats at 17 significant digits."""
    if isinstance(obj, np.bool_):
        obj = bool(obj)
    elif isinstance(obj, np.integer):
        obj = int(obj)
    elif isinstance(obj, np.floating):
        obj = float(obj)
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format(obj, ".17g"))
    elif isinstance(obj, complex):
        _render({"im": obj.imag, "re": obj.real}, out)
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, k in enumerate(sorted(obj)):
            if i:
                out.append(",")
            out.append(json.dumps(str(k)) + ":")
            _render(obj[k], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _render(v, out)
        out.append("]")
    else:
        raise TypeError("cannot serialize %r" % type(obj))


def render_json(obj) -> str:
    out = []
    _render(obj, out)
    return "".join(out)


def thread_count() -> int:
    raw = os.environ.get("QUIVERFLOW_THREADS", "").strip()
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


def _parse_ints(text):
    return tuple(int(s) for s in text.split(",") if s.strip() != "")


def _parse_floats(text):
    return tuple(float(s) for s in text.split(",") if s.strip() != "")


# ---------------------------------------------------------------------------
# KP seed files


def _mat_to_json(A):
    A = np.asarray(A, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in A]


def _mat_from_json(rows, shape):
    A = np.zeros(shape, dtype=complex)
    for i, row in enumerate(rows):
        for j, (re, im) in enumerate(row):
            A[i, j] = complex(re, im)
    return A


def seed_to_json(seed: SolutionSeed) -> dict:
    V = seed.point
    doc = {
        "schema": SEED_SCHEMA,
        "m": V.m,
        "alpha": list(V.alpha),
        "zeta": list(V.zeta),
        "lam": [[z.real, z.imag] for z in seed.lam],
        "window": list(seed.window),
        "X": [_mat_to_json(A) for A in V.X],
        "Y": [_mat_to_json(A) for A in V.Y],
        "v": [_mat_to_json(A) for A in V.v],
        "w": [_mat_to_json(A) for A in V.w],
    }
    if seed.a_diag is not None:
        doc["a_diag"] = [[z.real, z.imag] for z in seed.a_diag]
    return doc


def seed_from_json(doc: dict) -> SolutionSeed:
    if doc.get("schema") != SEED_SCHEMA:
        raise click.ClickException(
            "unsupported seed schema %r" % doc.get("schema")
        )
    m = int(doc["m"])
    alpha = tuple(int(a) for a in doc["alpha"])
    zeta = tuple(int(z) for z in doc["zeta"])
    X = tuple(
        _mat_from_json(doc["X"][i], (alpha[(i + 1) % m], alpha[i]))
        for i in range(m)
    )
    Y = tuple(
        _mat_from_json(doc["Y"][i], (alpha[i], alpha[(i + 1) % m]))
        for i in range(m)
    )
    v = tuple(
        _mat_from_json(doc["v"][i], (alpha[i], zeta[i])) for i in range(m)
    )
    w = tuple(
        _mat_from_json(doc["w"][i], (zeta[i], alpha[i])) for i in range(m)
    )
    point = CyclicPoint(m, alpha, zeta, X, Y, v, w)
    lam = tuple(complex(re, im) for re, im in doc["lam"])
    window = tuple(int(x) for x in doc["window"])
    a_diag = None
    if "a_diag" in doc:
        a_diag = tuple(complex(re, im) for re, im in doc["a_diag"])
    return SolutionSeed(point, lam, window=window, a_diag=a_diag)


def _load_seed(path) -> SolutionSeed:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise click.ClickException("cannot read seed file: %s" % exc)
    try:
        return seed_from_json(doc)
    except (KeyError, ValueError, IndexError) as exc:
        raise click.ClickException("malformed seed file: %s" % exc)


def _times_from_list(values):
    """Map a comma list to flow times for degrees 2, 3, ... in order."""
    return {k + 2: t for k, t in enumerate(values) if t != 0.0}


# ---------------------------------------------------------------------------
# commands


@click.group()
def main():
    """Quiver varieties, reflection functors, cyclic Hamiltonian systems and
    rational KP solutions."""


@main.group()
def roots():
    """Root-system queries."""


@roots.command("classify")
@click.option("--quiver", "name", required=True, help="builtin quiver name")
@click.option("--dim", required=True, help="comma-separated dimension vector")
def roots_classify(name, dim):
    """Classify a dimension vector as a real or imaginary root."""
    q = builtin(name)
    res = classify_root(q, _parse_ints(dim))
    if not res.is_root:
        click.echo("not_root")
    else:
        click.echo("%s(%s)" % (res.kind, "+" if res.sign > 0 else "-"))


@roots.command("regular")
@click.option("--quiver", "name", required=True)
@click.option("--weight", required=True, help="comma-separated weight")
@click.option("--height-bound", default=20, show_default=True)
def roots_regular(name, weight, height_bound):
    """Test a weight for regularity against positive roots."""
    q = builtin(name)
    res = is_regular(q, _parse_floats(weight), height_bound=height_bound)
    if res.regular:
        click.echo("regular" + ("" if res.exact else " (up to height bound)"))
    else:
        click.echo("irregular, witness root %s" % (res.witness,))


@main.group()
def rep():
    """Representation-variety operations."""


@rep.command("solve")
@click.option("--quiver", "name", required=True)
@click.option("--dim", required=True)
@click.option("--weight", required=True)
@click.option("--seed", default=0, show_default=True)
def rep_solve(name, dim, weight, seed):
    """Find an on-shell point of the doubled quiver and report its residual."""
    q = double(builtin(name))
    lam = _parse_floats(weight)
    try:
        V = solve_relations(q, _parse_ints(dim), lam, seed=seed)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    click.echo("residual %.3e" % relation_residual(V, lam))


@main.group()
def reflect():
    """Reflection-functor operations."""


@reflect.command("apply")
@click.option("--quiver", "name", required=True)
@click.option("--framing", required=True, help="framing sizes per vertex")
@click.option("--dim", required=True, help="dims, framing vertex first")
@click.option("--weight", required=True, help="weight, framing vertex first")
@click.option("--vertex", required=True)
@click.option("--seed", default=0, show_default=True)
def reflect_apply(name, framing, dim, weight, vertex, seed):
    """Reflect a random on-shell framed point and report the outcome."""
    fq = FramedQuiver(builtin(name), _parse_ints(framing))
    dq = double(fq.quiver)
    lam = _parse_floats(weight)
    try:
        V = solve_relations(dq, _parse_ints(dim), lam, seed=seed)
        res = apply_reflection(V, vertex, lam)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    click.echo("dims %s -> %s" % (V.dims, res.point.dims))
    click.echo("weight %s -> %s" % (lam, res.weight))
    click.echo(
        "residual %.3e" % relation_residual(res.point, res.weight)
    )


@main.group()
def flow():
    """Hamiltonian flows on cyclic points."""


@flow.command("conserve")
@click.option("--m", default=1, show_default=True)
@click.option("--n", default=2, show_default=True)
@click.option("--d", default=1, show_default=True)
@click.option("--kind", default="delta", show_default=True)
@click.option("--ell", default=2, show_default=True)
@click.option("--r", default=1, show_default=True)
@click.option("--t", default=0.3, show_default=True)
@click.option("--seed", default=0, show_default=True)
def flow_conserve(m, n, d, kind, ell, r, t, seed):
    """Integrate one framing-Hamiltonian flow and report drifts."""
    lam = [0.9 - 0.31 * i for i in range(m)]
    ch = random_chart(kind, m, n, d, lam, seed=seed)
    P = to_framed(from_darboux(ch, lam))
    A = e_r_ell(P.quiver, r, ell, cap=max(12, ell + 1))
    wlam = None
    H0 = hamiltonian_Hlr(P, ell, r)
    traj = flow_IA(P, A, t, lam=wlam)
    end = traj.points[-1]
    click.echo(
        "hamiltonian drift %.3e" % abs(hamiltonian_Hlr(end, ell, r) - H0)
    )


@main.group()
def cm():
    """One-vertex (Calogero-Moser) seed utilities."""


@cm.command("build")
@click.option("--n", default=2, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--collision", is_flag=True, help="use the colliding-pole point")
@click.option("--window", default="-8,4", show_default=True)
@click.option("--out", type=click.Path(), default=None)
def cm_build(n, seed, collision, window, out):
    """Build an on-shell one-vertex seed, optionally saving it as JSON."""
    lo, hi = _parse_ints(window)
    if collision:
        X = np.array([[0.3, 1.0], [0.0, 0.3]], dtype=complex)
        Y = np.array([[0.2, -0.7], [1.0, 0.2]], dtype=complex)
        v = np.array([[0.0], [2.0]], dtype=complex)
        w = np.array([[0.0, 1.0]], dtype=complex)
        V = CyclicPoint(1, (2,), (1,), (X,), (Y,), (v,), (w,))
    else:
        ch = random_chart("delta", 1, n, 1, [1.0], seed=seed)
        V = from_darboux(ch, [1.0])
    sd = SolutionSeed(V, [1.0], window=(lo, hi))
    res = V.residual(np.asarray(sd.lam))
    click.echo("on-shell residual %.3e" % res)
    if out:
        with open(out, "w") as fh:
            fh.write(render_json(seed_to_json(sd)) + "\n")
        click.echo("wrote %s" % out)


@main.group()
def op():
    """Truncated operator-algebra checks."""


@op.command("check")
@click.option("--m", default=2, show_default=True)
@click.option("--seed", default=0, show_default=True)
def op_check(m, seed):
    """Cherednik commutator and associativity spot checks."""
    lam = np.array([0.7 - 0.23 * i for i in range(m)])
    window = (-6, 4)
    y = hbar_y(lam, 1, window)
    x = hbar_from_crossed(ce_x(m), lam, window)
    c = hbar_from_crossed(ce_weight(lam), lam, window)
    cher = op_dist(hbar_mul(y, x) - hbar_mul(x, y), c)
    click.echo("cherednik residual %.3e" % cher)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        els = []
        for _ in range(3):
            pole = complex(*rng.uniform(-1, 1, 2))
            f = rf_pole(pole, 1, complex(*rng.uniform(-1, 1, 2)))
            els.append(hbar_from_crossed(
                ce_x(m) * complex(*rng.uniform(-1, 1, 2)) + f, lam, window,
                k=int(rng.integers(-1, 2)),
            ))
        a, b, cc = els
        left = hbar_mul(hbar_mul(a, b), cc)
        right = hbar_mul(a, hbar_mul(b, cc))
        scale = 1.0 + float(np.max(np.abs(left.sample())))
        worst = max(worst, op_dist(left, right) / scale)
    click.echo("associativity residual %.3e" % worst)


@main.group()
def kp():
    """Rational KP solutions."""


@kp.command("seed")
@click.option("--kind", default="delta", show_default=True)
@click.option("--m", default=1, show_default=True)
@click.option("--n", default=1, show_default=True)
@click.option("--d", default=1, show_default=True)
@click.option("--lam", default=None, help="comma-separated weight")
@click.option("--rng", default=0, show_default=True)
@click.option("--window", default=None, help="order window lo,hi")
@click.option("--out", type=click.Path(), required=True)
def kp_seed(kind, m, n, d, lam, rng, window, out):
    """Generate a random on-shell seed file."""
    weights = (
        _parse_floats(lam) if lam else [0.9 - 0.31 * i for i in range(m)]
    )
    ch = random_chart(kind, m, n, d, list(weights), seed=rng)
    V = from_darboux(ch, list(weights))
    N = sum(V.alpha)
    win = _parse_ints(window) if window else (-(N + 2), m + 1)
    sd = SolutionSeed(V, list(weights), window=win)
    with open(out, "w") as fh:
        fh.write(render_json(seed_to_json(sd)) + "\n")
    click.echo("wrote %s" % out)


@kp.command("emit")
@click.option("--seed", "seed_path", required=True, type=click.Path())
@click.option("--t", "times_text", default="", help="times for flows 2,3,...")
@click.option(
    "--format", "fmt", default="rational", show_default=True,
    type=click.Choice(["rational", "csv"]),
)
@click.option("--xs", default="-2.5,2.5,11", show_default=True,
              help="sample grid lo,hi,count for csv output")
def kp_emit(seed_path, times_text, fmt, xs):
    """Emit the rational KP field of a one-vertex seed."""
    sd = _load_seed(seed_path)
    times = _times_from_list(_parse_floats(times_text)) if times_text else {}
    try:
        out = emit_u(sd, times)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    t2 = float(times.get(2, 0.0).real) if 2 in times else 0.0
    t3 = float(times.get(3, 0.0).real) if 3 in times else 0.0
    if fmt == "rational":
        click.echo("u = %s" % out["expression"])
        for a in out["poles"]:
            click.echo("pole %s" % format(complex(a), ".12g"))
        click.echo("pole-sum residual %.3e" % out["pole_sum_residual"])
        return
    lo, hi, count = xs.split(",")
    grid = np.linspace(float(lo), float(hi), int(count))
    u = out["u"]
    poles = out["poles"]
    click.echo("x,t2,t3,Re u,Im u,residual")
    for a in grid:
        if poles.size and np.min(np.abs(a - poles)) < 1e-6:
            continue
        val = u(a)
        ref = sum(-2.0 / (a - b) ** 2 for b in poles)
        click.echo(
            "%s,%s,%s,%s,%s,%s"
            % tuple(
                format(z, ".17g")
                for z in (a, t2, t3, val.real, val.imag, abs(val - ref))
            )
        )


@kp.command("verify")
@click.option("--seed", "seed_path", required=True, type=click.Path())
@click.option("--flows", default="2,3", show_default=True)
@click.option("--h", default=1e-3, show_default=True)
@click.option("--window", default=None, help="override order window lo,hi")
@click.option("--report", "report_path", type=click.Path(), default=None)
def kp_verify(seed_path, flows, h, window, report_path):
    """Check the hierarchy equations and constraints for a seed."""
    sd = _load_seed(seed_path)
    flow_list = _parse_ints(flows)
    lo, hi = sd.window
    if window:
        lo, hi = _parse_ints(window)
    hi = max(hi, max(flow_list, default=0) + 1)
    sd = SolutionSeed(sd.point, sd.lam, window=(lo, hi), a_diag=sd.a_diag)
    checks = []
    data = dress(sd, check=False)
    checks.append(
        ("constraints", max(constraint_residuals(data).values()), 1e-8)
    )
    for k in flow_list:
        try:
            res = lax_residual(sd, k, h=h, base=data, order=4)
        except ValueError as exc:
            raise click.ClickException(str(exc))
        checks.append(("lax_%d" % k, res, 1e-6))
    if sd.m == 1 and sd.d == 1:
        checks.append((
            "kp_pde",
            kp_pde_residual(
                sd,
                xs=np.linspace(-2.0, 2.0, 5),
                t2s=np.linspace(-0.3, 0.3, 3),
                t3s=np.linspace(-0.2, 0.2, 3),
            ),
            1e-8,
        ))
    ok = True
    items = []
    for name, res, tol in checks:
        good = res <= tol
        ok = ok and good
        items.append(
            {"name": name, "residual": float(res), "tol": tol, "pass": good}
        )
        click.echo(
            "%s %s residual %.3e (tol %.0e)"
            % ("PASS" if good else "FAIL", name, res, tol)
        )
    if report_path:
        doc = {"schema": REPORT_SCHEMA, "suite": "kp-verify", "checks": items}
        with open(report_path, "w") as fh:
            fh.write(render_json(doc) + "\n")
    if not ok:
        sys.exit(1)


# ---------------------------------------------------------------------------
# verification suite


def _suite_items(rng_seed):
    def cm_residual():
        ch = random_chart("delta", 1, 3, 1, [1.0], seed=rng_seed)
        V = from_darboux(ch, [1.0])
        return V.residual(np.array([1.0]))

    def roots_spot():
        c3 = classify_root(builtin("cyclic:3"), (1, 1, 1))
        a2 = classify_root(builtin("A:2"), (1, 1))
        good = (
            c3.kind == "imaginary" and c3.sign > 0
            and a2.kind == "real" and a2.sign > 0
            and not classify_root(builtin("A:2"), (2, 1)).is_root
        )
        return 0.0 if good else 1.0

    def reflection():
        fq = FramedQuiver(builtin("jordan"), (1,))
        dq = double(fq.quiver)
        lam = (-2.0, 1.0)
        V = solve_relations(dq, (1, 2), lam, seed=rng_seed)
        res = apply_reflection(V, "inf", lam)
        return relation_residual(res.point, res.weight)

    def conservation():
        lam = [1.0]
        ch = random_chart("delta", 1, 2, 1, lam, seed=rng_seed)
        P = to_framed(from_darboux(ch, lam))
        H0 = hamiltonian_Hlr(P, 2, 1)
        traj = flow_IA(P, e_r_ell(P.quiver, 1, 2), 0.3)
        return abs(hamiltonian_Hlr(traj.points[-1], 2, 1) - H0)

    def cherednik():
        lam = np.array([0.7, 0.47])
        y = hbar_y(lam, 1, (-6, 4))
        x = hbar_from_crossed(ce_x(2), lam, (-6, 4))
        c = hbar_from_crossed(ce_weight(lam), lam, (-6, 4))
        return op_dist(hbar_mul(y, x) - hbar_mul(x, y), c)

    def kp_lax():
        ch = random_chart("delta", 1, 1, 1, [1.0], seed=rng_seed)
        sd = SolutionSeed(from_darboux(ch, [1.0]), [1.0], window=(-4, 4))
        return lax_residual(sd, 2, h=1e-3, order=4)

    def kp_pde():
        ch = random_chart("delta", 1, 1, 1, [1.0], seed=rng_seed)
        sd = SolutionSeed(from_darboux(ch, [1.0]), [1.0], window=(-4, 4))
        return kp_pde_residual(
            sd,
            xs=np.linspace(-2.0, 2.0, 5),
            t2s=np.linspace(-0.3, 0.3, 3),
            t3s=np.linspace(-0.2, 0.2, 3),
        )

    def reducible():
        lam = (1.0, 0.0)
        big = CyclicPoint(
            2, (1, 1), (1, 0),
            (np.zeros((1, 1)), np.ones((1, 1))),
            (2 * np.ones((1, 1)), np.zeros((1, 1))),
            (np.ones((1, 1)), np.zeros((1, 0))),
            (np.ones((1, 1)), np.zeros((0, 1))),
        )
        small = CyclicPoint(
            2, (1, 0), (1, 0),
            (np.zeros((0, 1)), np.zeros((1, 0))),
            (np.zeros((1, 0)), np.zeros((0, 1))),
            (np.ones((1, 1)), np.zeros((0, 0))),
            (np.ones((1, 1)), np.zeros((0, 0))),
        )
        return op_dist(
            build_M(SolutionSeed(big, lam, window=(-6, 3))),
            build_M(SolutionSeed(small, lam, window=(-6, 3))),
        )

    return [
        ("cm-moment-map", cm_residual, 1e-11),
        ("root-classification", roots_spot, 0.5),
        ("reflection-functor", reflection, 1e-9),
        ("flow-conservation", conservation, 1e-8),
        ("cherednik-relation", cherednik, 1e-12),
        ("kp-lax", kp_lax, 1e-6),
        ("kp-pde", kp_pde, 1e-8),
        ("kp-reducible-seed", reducible, 1e-10),
    ]


@main.group()
def verify():
    """Verification suites."""


@verify.command("all")
@click.option("--seed", default=0, show_default=True, help="RNG seed")
@click.option("--report", "report_path", type=click.Path(), default=None)
def verify_all(seed, report_path):
    """Run the complete quick verification suite."""
    items = _suite_items(seed)
    workers = thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [(name, pool.submit(fn), tol) for name, fn, tol in items]
            results = [(name, f.result(), tol) for name, f, tol in futures]
    else:
        results = [(name, fn(), tol) for name, fn, tol in items]
    ok = True
    checks = []
    for name, res, tol in results:
        good = res <= tol
        ok = ok and good
        checks.append(
            {"name": name, "residual": float(res), "tol": tol, "pass": good}
        )
        click.echo(
            "%s %s residual %.3e (tol %.0e)"
            % ("PASS" if good else "FAIL", name, res, tol)
        )
    if report_path:
        doc = {
            "schema": REPORT_SCHEMA,
            "suite": "verify-all",
            "rng_seed": seed,
            "threads": workers,
            "checks": checks,
        }
        with open(report_path, "w") as fh:
            fh.write(render_json(doc) + "\n")
    if not ok:
        sys.exit(1)


if __name__ == "__main__":
    main()

"""Command-line front end and the plan document format."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import sys

import click

from . import __version__
from .coverage import asn, exact_complement
from .rules import (ErrorSpec, Plan, Schedule, StageBoundary, _freeze, build_plan, law_of,
                    rebuild_boundaries)
from .sim import simulate
from .tuning import (TuningError, amca_check, bisection_tune, default_range, lattice_sweep)

__all__ = ["SCHEMA_VERSION", "PlanMismatch", "plan_to_doc", "doc_to_plan", "dumps", "loads",
           "save_plan", "load_plan", "certificate_digest", "main"]

SCHEMA_VERSION = 1

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3


class PlanMismatch(RuntimeError):
    """Stored boundaries disagree with a rebuild from the document's inputs."""


# ---------------------------------------------------------------------------
# serialization

def _fmt_float(x):
    if math.isnan(x) or math.isinf(x):
        raise ValueError("non-finite number in plan document")
    return format(x, ".17g") if x != int(x) or abs(x) >= 1e17 else format(x, ".1f")


def dumps(obj, indent=0):
    """JSON text with floats written to 17 significant digits."""
    pad = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (list, tuple, dict)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        inner = ",\n".join("  " * (indent + 1) + dumps(v, indent + 1) for v in obj)
        return "[\n" + inner + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        inner = ",\n".join("  " * (indent + 1) + json.dumps(str(k)) + ": " + dumps(v, indent + 1)
                           for k, v in obj.items())
        return "{\n" + inner + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def certificate_digest(cert):
    if not cert:
        return None
    text = "\n".join(",".join(format(float(v), ".17g") for v in row) for row in cert)
    return hashlib.sha256(text.encode()).hexdigest()


def plan_to_doc(plan, certificate=None):
    sch = plan.schedule
    return {
        "schema_version": SCHEMA_VERSION,
        "family": plan.family,
        "rule": plan.rule,
        "spec": plan.spec.to_dict(),
        "zeta": float(plan.zeta),
        "N": plan.N,
        "options": {k: (list(v) if isinstance(v, tuple) else v) for k, v in plan.options},
        "status": "tuned" if plan.tuned else "untuned",
        "schedule": {
            "kind": sch.kind,
            "values": list(sch.values),
            "deltas": [float(v) for v in sch.deltas],
            "tau": sch.tau,
            "rho": float(sch.rho),
            "C": [float(sch.C(l)) for l in range(1, sch.s + 1)],
            "infinite": sch.infinite,
            "single_stage": sch.single_stage,
        },
        "boundaries": [
            {"stage": b.stage, "size": b.size,
             "continue": [[int(lo), None if hi is None else int(hi)] for lo, hi in b.cont],
             "flags": list(b.flags)}
            for b in plan.boundaries
        ],
        "provenance": {"tool_version": __version__,
                       "certificate_digest": certificate_digest(certificate)},
    }


def _diff(stored, rebuilt):
    lines = []
    if len(stored) != len(rebuilt):
        lines.append(f"stage count: stored {len(stored)}, rebuilt {len(rebuilt)}")
    for a, b in zip(stored, rebuilt):
        if a != b:
            lines.append(f"stage {a.stage} (n={a.size}): stored continue {list(a.cont)} flags {list(a.flags)}; "
                         f"rebuilt continue {list(b.cont)} flags {list(b.flags)}")
    return "\n".join(lines)


def doc_to_plan(doc, verify=True):
    ver = doc.get("schema_version")
    if ver != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {ver!r}")
    spec = ErrorSpec(**doc["spec"])
    sd = doc["schedule"]
    sched = Schedule(sd["kind"], tuple(int(v) for v in sd["values"]),
                     tuple(float(v) for v in sd["deltas"]), int(sd["tau"]), float(sd["rho"]),
                     bool(sd["infinite"]), bool(sd["single_stage"]))
    bnds = tuple(StageBoundary(int(b["stage"]), int(b["size"]),
                               tuple((int(lo), None if hi is None else int(hi)) for lo, hi in b["continue"]),
                               tuple(b["flags"]))
                 for b in doc["boundaries"])
    N = doc.get("N")
    opts = _freeze(doc.get("options", {}))
    plan = Plan(doc["family"], doc["rule"], spec, float(doc["zeta"]), sched, bnds,
                None if N is None else int(N), opts, doc.get("status") == "tuned")
    if verify:
        rebuilt = rebuild_boundaries(plan.family, plan.rule, spec, plan.zeta, sched, plan.N, opts)
        if rebuilt != bnds:
            raise PlanMismatch("stored boundaries differ from a rebuild:\n" + _diff(bnds, rebuilt))
    return plan


def loads(text, verify=True):
    return doc_to_plan(json.loads(text), verify)


def save_plan(plan, path, certificate=None):
    with open(path, "w") as fh:
        fh.write(dumps(plan_to_doc(plan, certificate)) + "\n")


def load_plan(path, verify=True):
    with open(path) as fh:
        return loads(fh.read(), verify)


# ---------------------------------------------------------------------------
# helpers

_KIND = {"abs": "absolute", "rel": "relative", "mix": "mixed"}


def spec_for(family, delta, eps=None, eps_a=None, eps_r=None):
    if family.startswith("bw-ci"):
        kind = "fixed-width"
    else:
        kind = _KIND.get(family.rsplit("-", 1)[-1])
        if family == "binomial-rel-inverse":
            kind = "relative"
    if kind is None:
        raise ValueError(f"cannot infer the error kind of family {family!r}")
    return ErrorSpec(kind, delta, eps, eps_a, eps_r)


def _parse_range(text):
    if text is None:
        return None, None
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise click.BadParameter("expected LO,HI", param_hint="--range")
    if lo > hi:
        raise click.BadParameter("need LO <= HI", param_hint="--range")
    return lo, hi


def _parse_options(items):
    out = {}
    for it in items:
        if "=" not in it:
            raise click.BadParameter(f"expected KEY=VALUE, got {it!r}", param_hint="--option")
        k, v = it.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _check(plan, delta, lo, hi):
    if law_of(plan) == "hyper":
        return lattice_sweep(plan, delta, 0.0 if lo is None else lo, 1.0 if hi is None else hi)
    return amca_check(plan, delta, lo, hi)


def _default_eta(plan):
    return 0.0 if law_of(plan) in ("binomial", "hyper") and not plan.schedule.infinite else 1e-10


def _grid(plan, spec_text, lo, hi):
    dlo, dhi = default_range(plan)
    lo = dlo if lo is None else lo
    hi = dhi if hi is None else hi
    n = int(spec_text)
    if n < 1:
        raise click.BadParameter("grid needs at least one point", param_hint="--grid")
    if n == 1:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _fail(msg, code):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _load(path):
    try:
        return load_plan(path)
    except PlanMismatch as e:
        _fail(str(e), EXIT_INTERNAL)
    except (OSError, ValueError, KeyError, TypeError) as e:
        _fail(f"cannot read plan {path}: {e}", EXIT_USAGE)


# ---------------------------------------------------------------------------
# commands

@click.group()
@click.version_option(__version__)
def main():
    """Design, check and simulate multistage sampling plans."""


@main.command()
@click.option("--family", required=True, help="Plan family, e.g. binomial-abs.")
@click.option("--rule", default=None, help="Stopping rule (family default if omitted).")
@click.option("--eps", type=float, default=None)
@click.option("--eps-a", type=float, default=None)
@click.option("--eps-r", type=float, default=None)
@click.option("--delta", type=float, required=True)
@click.option("--range", "range_", default=None, help="Parameter range LO,HI for tuning.")
@click.option("--rho", type=float, default=2.0, show_default=True)
@click.option("--zeta", type=float, default=None, help="Use this zeta and skip tuning.")
@click.option("--N", "N", type=int, default=None, help="Population size (finite-pop).")
@click.option("--sizes", default=None, help="Comma-separated stage sizes overriding the schedule.")
@click.option("--option", "options", multiple=True, help="Design option KEY=VALUE.")
@click.option("--no-check", is_flag=True, help="Skip the coverage check of an untuned plan.")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def design(family, rule, eps, eps_a, eps_r, delta, range_, rho, zeta, N, sizes, options, no_check, out):
    """Build a schedule, tune zeta (unless given) and write the plan document."""
    lo, hi = _parse_range(range_)
    opts = _parse_options(options)
    size_list = None if sizes is None else [int(v) for v in sizes.split(",")]
    try:
        spec = spec_for(family, delta, eps, eps_a, eps_r)
        if zeta is None:
            if size_list is not None:
                raise ValueError("--sizes needs an explicit --zeta")
            res = bisection_tune(family, spec, rule, lo, hi, rho=rho, N=N, **opts)
            plan, cert = res.plan, res.certificate
        else:
            plan = build_plan(family, spec, zeta, rule, rho, N, sizes=size_list, **opts)
            cert = None
            if not no_check:
                chk = _check(plan, delta, lo, hi)
                cert = chk.certificate if chk.passed else None
    except TuningError as e:
        _fail(str(e), EXIT_INTERNAL)
    except ValueError as e:
        _fail(str(e), EXIT_USAGE)
    if out:
        save_plan(plan, out, cert)
    sizes_out = [b.size for b in plan.boundaries]
    click.echo(f"family      {plan.family} ({plan.rule})")
    click.echo(f"tau         {plan.schedule.tau}")
    click.echo(f"stages      {len(sizes_out)}")
    click.echo(f"{plan.schedule.kind:<11} {', '.join(map(str, sizes_out[:12]))}"
               + (" ..." if len(sizes_out) > 12 else ""))
    click.echo(f"zeta        {plan.zeta:.17g} ({'tuned' if plan.tuned else 'untuned'})")
    if cert:
        worst = max(u for _, _, u in cert)
        click.echo(f"min coverage >= {1 - worst:.10f} (certified)")
    else:
        click.echo("min coverage not certified")
    if out:
        click.echo(f"wrote {out}")


@main.command()
@click.argument("plan_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--range", "range_", default=None, help="Parameter range LO,HI.")
@click.option("--delta", type=float, default=None, help="Target (defaults to the plan's delta).")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
def check(plan_file, range_, delta, fmt):
    """Certify complement < delta over the range; exit 0 iff it passes."""
    plan = _load(plan_file)
    lo, hi = _parse_range(range_)
    delta = plan.spec.delta if delta is None else delta
    if not 0 < delta < 1:
        _fail("need 0 < delta < 1", EXIT_USAGE)
    try:
        res = _check(plan, delta, lo, hi)
    except ValueError as e:
        _fail(str(e), EXIT_USAGE)
    if fmt == "json":
        click.echo(dumps({"passed": res.passed, "delta": float(delta),
                          "failed_at": None if res.failed_at is None else [float(v) for v in res.failed_at],
                          "certificate": [[float(a), float(b), float(u)] for a, b, u in res.certificate]}))
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["a", "b", "upper"])
        for a, b, u in res.certificate:
            w.writerow([format(a, ".17g"), format(b, ".17g"), format(u, ".17g")])
        click.echo(buf.getvalue(), nl=False)
        click.echo(("PASS" if res.passed else f"FAIL at {res.failed_at}"), err=True)
    sys.exit(EXIT_OK if res.passed else EXIT_FAIL)


@main.command()
@click.argument("plan_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", default="101", show_default=True, help="Number of evenly spaced points.")
@click.option("--range", "range_", default=None, help="Parameter range LO,HI.")
@click.option("--what", type=click.Choice(["coverage", "asn", "complement"]), default="coverage",
              show_default=True)
@click.option("--eta", type=float, default=None, help="Truncation budget (0 = exact where possible).")
def curve(plan_file, grid, range_, what, eta):
    """Exact coverage, complement or ASN on a grid, as CSV."""
    plan = _load(plan_file)
    lo, hi = _parse_range(range_)
    eta = _default_eta(plan) if eta is None else eta
    try:
        pts = _grid(plan, grid, lo, hi)
    except ValueError:
        raise click.BadParameter("expected an integer", param_hint="--grid")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theta", "value", "bound_kind", "eta"])
    try:
        for th in pts:
            if law_of(plan) == "hyper":
                th = round(th * plan.N) / plan.N
            if what == "asn":
                rep = exact_complement(plan, th, eta)
                val, kind = asn(plan, th, eta).upper, rep.bound_kind
            else:
                rep = exact_complement(plan, th, eta)
                val = rep.upper if what == "complement" else 1.0 - rep.upper
                kind = rep.bound_kind
            w.writerow([format(th, ".17g"), format(val, ".17g"), kind, format(eta, ".17g")])
    except ValueError as e:
        _fail(str(e), EXIT_USAGE)
    click.echo(buf.getvalue(), nl=False)


@main.command(name="simulate")
@click.argument("plan_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--theta", type=float, required=True)
@click.option("--trials", type=int, default=100000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--dist", type=click.Choice(["bernoulli", "uniform-mix"]), default="bernoulli",
              show_default=True)
def simulate_cmd(plan_file, theta, trials, seed, dist):
    """Monte Carlo run of the plan; prints a JSON report."""
    plan = _load(plan_file)
    if not 0 <= seed < 2 ** 64:
        _fail("seed must be a 64-bit unsigned integer", EXIT_USAGE)
    try:
        rep = simulate(plan, theta, trials, seed, dist=dist)
    except ValueError as e:
        _fail(str(e), EXIT_USAGE)
    click.echo(dumps(rep.to_dict()))


if __name__ == "__main__":
    main()

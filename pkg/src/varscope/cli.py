"""Command-line entry point: ``varscope <command> ...``.

Every command prints one JSON document (default) or a CSV table on stdout.
The JSON document carries ``command``, ``version``, ``seed`` (stochastic
commands only) and ``warnings`` next to the command's own fields.

Exit status is 0 on success, 2 on a usage error and 1 when an engine rejects
the input; in the last case the engine's message goes to stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .anova import SWEEP_COLUMNS, AnovaParams, anova_decompose, anova_sweep
from .bma import decompose_labeled_draws, read_draws_csv
from .conjugate import (
    BetaBinomialParams,
    BPGParams,
    NNGParams,
    NormalKnownVarParams,
    PoissonConjugateParams,
    ThreeLevelNormalParams,
    beta_binomial_decompose,
    bpg_decompose,
    nng_decompose,
    normal_known_var_decompose,
    poisson_conjugate_decompose,
    three_level_normal_decompose,
)
from .independence import implication_graph, load_ci_json, parse_term, propagate_zero_terms
from .mc import AdapterError, McBudget, default_workers, estimate_decomposition
from .model import DomainError, ExpansionPlan, PlanError, TermReport, spec_from_json, validate_plan
from .scope import count_expansions, enumerate_plans

REPORT_COLUMNS = ("report", "k", "block", "value")


class _UsageError(Exception):
    pass


# -- output helpers --------------------------------------------------------------

def _report_obj(r: TermReport) -> dict:
    obj = r.to_json_obj()
    obj["ordered_terms"] = list(r.ordered())
    obj["labels"] = r.plan.label() if hasattr(r.plan, "label") else None
    return obj


def _report_rows(name: str, r: TermReport):
    blocks = ["|".join(",".join(b) for b in r.plan.blocks[:k]) or "-" for k in range(r.plan.u + 1)]
    for k, v in enumerate(r.terms):
        yield [name, str(k), blocks[k], repr(float(v))]
    yield [name, "total", "", repr(float(r.total))]


def _write_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _envelope(args, payload: dict, caught, seed=None) -> str:
    doc = {"command": args.command_echo, "version": __version__}
    if seed is not None:
        doc["seed"] = seed
    doc.update(payload)
    doc["warnings"] = list(payload.get("warnings", [])) + [str(w.message) for w in caught]
    return json.dumps(doc, indent=2) + "\n"


def _threads(args) -> int:
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            raise DomainError("--threads must be >= 1")
        return args.threads
    return default_workers()


# -- commands ----------------------------------------------------------------------

def _cmd_conjugate(args):
    fam = args.family
    if fam == "normal-known-var":
        r = normal_known_var_decompose(NormalKnownVarParams(args.mu0, args.t2, args.s2e, args.n, args.ybar))
    elif fam == "beta-binomial":
        r = beta_binomial_decompose(BetaBinomialParams(args.alpha, args.beta, args.successes, args.trials, args.m))
    elif fam == "poisson-gamma":
        r = poisson_conjugate_decompose(PoissonConjugateParams(args.alpha, args.beta, args.s, args.n))
    elif fam == "nng":
        if args.y is not None:
            y = [float(v) for v in args.y.split(",") if v.strip()]
            p = NNGParams.from_data(y, args.mu0, args.kappa0, args.alpha0, args.beta0)
        else:
            p = NNGParams(args.mu0, args.kappa0, args.alpha0, args.beta0, args.n, args.ybar, args.sum_sq)
        r = nng_decompose(p, args.order)
    elif fam == "bpg":
        r = bpg_decompose(BPGParams(args.p, args.a, args.b, args.s, args.n), args.order, reduce=not args.no_reduce)
    else:  # normal-3level
        r = three_level_normal_decompose(ThreeLevelNormalParams(args.s2e, args.t2, args.a, args.b2, args.n, args.ybar))
    return {"family": fam, "report": _report_obj(r)}, [("conjugate", r)], None


def _cmd_anova(args):
    p = AnovaParams(args.T, args.B, args.s2e, args.s2t, args.s2b)
    order = f"{args.order}_outer"
    if args.sweep:
        axis, grid = _parse_sweep(args.sweep)
        rows = anova_sweep(p, axis, grid, order)
        return {"order": args.order, "sweep_axis": axis, "rows": rows}, rows, None
    b = anova_decompose(p, order)
    row = {"axis": "", "term1": b.term1, "term2": b.term2, "term3": b.term3, "total": b.total,
           "prop1": b.proportions[0], "prop2": b.proportions[1], "prop3": b.proportions[2]}
    payload = {
        "order": args.order,
        "terms": list(b.terms),
        "total": b.total,
        "proportions": list(b.proportions),
        "a": b.a,
        "b": b.b,
    }
    return payload, [row], None


def _parse_sweep(text: str):
    try:
        axis, rng = text.split("=")
        start, stop, step = (float(x) for x in rng.split(":"))
    except ValueError:
        raise _UsageError(f"--sweep expects axis=start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise _UsageError("--sweep needs step > 0 and stop >= start")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    grid = [start + i * step for i in range(n)]
    axis = _SWEEP_ALIASES.get(axis.strip(), axis.strip())
    return axis, grid


_SWEEP_ALIASES = {"s2b": "sigma_beta_sq", "s2t": "sigma_tau_sq"}


def _cmd_mc(args):
    doc = json.loads(Path(args.model).read_text())
    spec, plan = spec_from_json(doc)
    if args.plan is not None:
        plan = validate_plan(spec, ExpansionPlan.parse(args.plan, spec.names))
    if plan is None:
        raise PlanError("no plan: pass --plan or put one in the model file")
    from .adapters import adapter_for

    lik = spec.likelihood or {}
    if "dist" not in lik:
        raise DomainError("spec likelihood needs a 'dist' naming a built-in model")
    adapter = adapter_for(lik["dist"], lik.get("params", {}))
    if set(adapter.variables) != set(spec.names):
        raise DomainError(
            f"spec levels {sorted(spec.names)} do not match model variables {sorted(adapter.variables)}"
        )
    budget = McBudget(args.outer, args.inner, args.seed)
    r = estimate_decomposition(adapter, plan, budget, workers=_threads(args))
    return {"model": lik["dist"], "report": _report_obj(r)}, [("mc", r)], args.seed


def _cmd_enumerate(args):
    n = count_expansions(args.K, args.M, args.u)
    payload = {"count": n}
    rows = []
    if args.list:
        plans = [p.to_json_obj() for p in enumerate_plans(args.K, M=args.M, u=args.u)]
        payload["plans"] = plans
        rows = [[str(i), "|".join(",".join(b) for b in p["blocks"]), ",".join(p["latent"])]
                for i, p in enumerate(plans)]
    return payload, rows, None


def _cmd_implications(args):
    cis = load_ci_json(Path(args.ci).read_text()) if args.ci else []
    if args.zero:
        g = propagate_zero_terms([parse_term(z) for z in args.zero], cis, args.K)
    else:
        g = implication_graph(args.K, cis)
    return g.to_json_obj(), g, None


def _cmd_bma(args):
    d = read_draws_csv(args.draws)
    parts = [s.strip() for s in args.order.split(",")]
    if parts == ["v1", "v2"]:
        order = "v1_then_v2"
    elif parts == ["v2", "v1"]:
        order = "v2_then_v1"
    else:
        raise _UsageError(f"--order must be 'v1,v2' or 'v2,v1', got {args.order!r}")
    r = decompose_labeled_draws(d, order, args.target)
    return {"order": order, "report": _report_obj(r)}, [("bma", r)], None


def _cmd_challenger(args):
    from .challenger import ChallengerConfig, run_challenger

    kw = dict(seed=args.seed, draws_per_model=args.draws_per_model, workers=_threads(args))
    if args.data:
        kw["data_path"] = args.data
    if args.burn_in is not None:
        kw["burn_in"] = args.burn_in
    res = run_challenger(ChallengerConfig(**kw))
    payload = res.summary()
    payload["reports"] = {k: _report_obj(r) for k, r in res.reports.items()}
    return payload, list(res.reports.items()), args.seed


# -- parser --------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", choices=("json", "csv"), default="json")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $VARSCOPE_THREADS or 1)")

    ap = argparse.ArgumentParser(prog="varscope", description="Variance expansions of posterior predictive variance.")
    ap.add_argument("--version", action="version", version=f"varscope {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    conj = sub.add_parser("conjugate", help="closed-form decomposition for a conjugate family")
    fams = conj.add_subparsers(dest="family", required=True)

    f = fams.add_parser("normal-known-var", parents=[common])
    f.add_argument("--mu0", type=float, default=0.0)
    f.add_argument("--t2", type=float, default=1.0, help="prior variance of the mean")
    f.add_argument("--s2e", type=float, default=1.0, help="observation variance")
    f.add_argument("--n", type=int, default=0)
    f.add_argument("--ybar", type=float, default=0.0)

    f = fams.add_parser("beta-binomial", parents=[common])
    f.add_argument("--alpha", type=float, default=1.0)
    f.add_argument("--beta", type=float, default=1.0)
    f.add_argument("--successes", type=int, default=0)
    f.add_argument("--trials", type=int, default=0)
    f.add_argument("--m", type=int, default=1, help="trials in the future observation")

    f = fams.add_parser("poisson-gamma", parents=[common])
    f.add_argument("--alpha", type=float, default=1.0)
    f.add_argument("--beta", type=float, default=1.0)
    f.add_argument("--s", type=float, default=0.0, help="sum of observed counts")
    f.add_argument("--n", type=int, default=0)

    f = fams.add_parser("nng", parents=[common])
    f.add_argument("--mu0", type=float, default=0.0)
    f.add_argument("--kappa0", type=float, default=1.0)
    f.add_argument("--alpha0", type=float, default=2.0)
    f.add_argument("--beta0", type=float, default=1.0)
    f.add_argument("--y", default=None, help="comma-separated observations")
    f.add_argument("--n", type=int, default=0)
    f.add_argument("--ybar", type=float, default=0.0)
    f.add_argument("--sum-sq", type=float, default=0.0)
    f.add_argument("--order", choices=("mu_first", "lambda_first"), default="mu_first")

    f = fams.add_parser("bpg", parents=[common])
    f.add_argument("--p", type=float, default=0.5)
    f.add_argument("--a", type=float, default=1.0)
    f.add_argument("--b", type=float, default=1.0)
    f.add_argument("--s", type=float, default=0.0)
    f.add_argument("--n", type=int, default=0)
    f.add_argument("--order", choices=("N_first", "lambda_first"), default="N_first")
    f.add_argument("--no-reduce", action="store_true", help="keep the structurally zero term")

    f = fams.add_parser("normal-3level", parents=[common])
    f.add_argument("--s2e", type=float, default=1.0)
    f.add_argument("--t2", type=float, default=1.0)
    f.add_argument("--a", type=float, default=0.0)
    f.add_argument("--b2", type=float, default=1.0)
    f.add_argument("--n", type=int, default=1)
    f.add_argument("--ybar", type=float, default=0.0)

    p = sub.add_parser("anova", parents=[common], help="two-way random-effects decomposition")
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--B", type=int, required=True)
    p.add_argument("--s2e", type=float, required=True)
    p.add_argument("--s2t", type=float, required=True)
    p.add_argument("--s2b", type=float, required=True)
    p.add_argument("--order", choices=("tau", "beta"), default="tau")
    p.add_argument("--sweep", default=None, help="axis=start:stop:step")

    p = sub.add_parser("mc", parents=[common], help="nested Monte Carlo estimate")
    p.add_argument("--model", required=True, help="JSON spec document")
    p.add_argument("--plan", default=None, help='e.g. "mu|lambda2"')
    p.add_argument("--outer", type=int, default=10_000)
    p.add_argument("--inner", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("enumerate", parents=[common], help="count or list expansion plans")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--M", type=int, default=None)
    p.add_argument("--u", type=int, default=None)
    p.add_argument("--list", action="store_true")

    p = sub.add_parser("implications", help="zero-term implication graph")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--zero", action="append", default=[], help='asserted zero term, e.g. "123:3"')
    p.add_argument("--ci", default=None, help="JSON file of independence statements")
    p.add_argument("--out", choices=("json", "dot"), default="json")

    p = sub.add_parser("bma", parents=[common], help="decompose labeled predictive draws")
    p.add_argument("--draws", required=True)
    p.add_argument("--order", default="v1,v2")
    p.add_argument("--target", choices=("pred", "y"), default="pred")

    p = sub.add_parser("challenger", parents=[common], help="O-ring model-averaging study")
    p.add_argument("--data", default=None)
    p.add_argument("--seed", type=int, default=20240531)
    p.add_argument("--draws-per-model", type=int, default=20_000)
    p.add_argument("--burn-in", type=int, default=None)
    return ap


_COMMANDS = {
    "conjugate": _cmd_conjugate,
    "anova": _cmd_anova,
    "mc": _cmd_mc,
    "enumerate": _cmd_enumerate,
    "implications": _cmd_implications,
    "bma": _cmd_bma,
    "challenger": _cmd_challenger,
}

_DOMAIN_ERRORS = (DomainError, PlanError, AdapterError, ValueError, KeyError, TypeError,
                  OSError, np.linalg.LinAlgError)


def run(argv=None, stdout=None, stderr=None) -> int:
    """Run one command; return the exit status."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    args.command_echo = " ".join(["varscope", *argv])
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            payload, table, seed = _COMMANDS[args.command](args)
    except _UsageError as e:
        print(f"varscope: usage error: {e}", file=stderr)
        return 2
    except _DOMAIN_ERRORS as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"varscope: error: {msg}", file=stderr)
        return 1

    out = args.out
    if out == "json":
        stdout.write(_envelope(args, payload, caught, seed))
    elif out == "dot":
        stdout.write(table.to_dot() + "\n")
    elif args.command == "anova":
        stdout.write(_write_csv(SWEEP_COLUMNS, [[r[c] if isinstance(r[c], str) else repr(float(r[c]))
                                                 for c in SWEEP_COLUMNS] for r in table]))
    elif args.command == "enumerate":
        if args.list:
            stdout.write(_write_csv(("index", "blocks", "latent"), table))
        else:
            stdout.write(_write_csv(("count",), [[payload["count"]]]))
    else:
        stdout.write(_write_csv(REPORT_COLUMNS, [row for name, r in table for row in _report_rows(name, r)]))
    return 0


def main(argv=None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())

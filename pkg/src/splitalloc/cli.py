"""Command-line interface.

One executable, one subcommand per analysis:

    env           exposure law, opportunity rate, drift constant (JSON)
    simulate      one branch, per-depth records (CSV)
    drift         conditional-drift table and contraction estimate (CSV)
    expmoment     E[exp(eta W_n)] along a grid of n (CSV)
    allocation    empirical vs limiting split shares (CSV)
    poisson       kernel functionals and identity checks (JSON)
    risk          Monte Carlo functionals plus bound factors (CSV)
    bellman       law | objective | certify | counterexample | search (JSON)
    forest        heatmap: the (gamma, w) sweep (CSV)

Every stochastic output is a deterministic function of (configuration,
--seed); exact rationals are rendered as "p/q" strings in JSON.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from fractions import Fraction

import numpy as np

from . import bellman as bl
from . import dynamics as dyn
from . import forest as fr
from . import poisson as pk
from . import risk as rk
from .environment import ModelConfig, check_eta_requirement, drift_constant, opportunity_rate
from .policies import PolicySpec

__all__ = ["parse_and_dispatch", "main"]


class UsageError(Exception):
    """Bad invocation discovered after argparse (e.g. config-level errors)."""


def _jsonify(obj):
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}"
    if isinstance(obj, dict):
        return {str(_jsonify(k)): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _write_output(text: str, out: str | None):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _add_model_args(p: argparse.ArgumentParser):
    p.add_argument("--d", type=int, help="ambient dimension")
    p.add_argument("--s", type=int, help="number of informative coordinates")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--m", type=int, help="candidate-set size")
    group.add_argument("--gamma", type=float, help="subsampling rate; m = ceil(gamma d)")
    p.add_argument("--beta", default="1", help="comma list of coefficients, or one value for all")
    p.add_argument("--sigma0", type=float, default=0.0, help="noise standard deviation")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", default=None, help="JSON file of flag values; explicit flags win")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-", help="output path ('-' for stdout)")
    p.add_argument("--threads", type=int, default=None, help="worker count; results do not depend on it")


def _parse_beta(text: str, s: int):
    parts = [p for p in text.split(",") if p]
    vals = [Fraction(p) for p in parts]
    if len(vals) == 1:
        vals = vals * s
    if len(vals) != s:
        raise ValueError(f"expected {s} coefficients, got {len(vals)}")
    return tuple(int(v) if v.denominator == 1 else v for v in vals)


def _model_from(args) -> ModelConfig:
    if args.d is None or args.s is None:
        raise UsageError("--d and --s are required (as flags or config entries)")
    if args.m is None and args.gamma is None:
        raise UsageError("one of --m or --gamma is required")
    if args.m is not None and args.gamma is not None:
        raise UsageError("--m and --gamma are mutually exclusive")
    beta = _parse_beta(str(args.beta), args.s)
    sigma_sq = args.sigma0 * args.sigma0
    if args.m is not None:
        return ModelConfig(d=args.d, s=args.s, m=args.m, beta=beta, sigma0_sq=sigma_sq)
    return ModelConfig.from_gamma(args.d, args.s, args.gamma, beta=beta, sigma0_sq=sigma_sq)


def _policy_from(args) -> PolicySpec:
    return PolicySpec.parse(args.policy)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_env(args) -> int:
    model = _model_from(args)
    rep = None
    if model.s >= 2:
        rep = check_eta_requirement(model.d, model.s, model.m)
    dc = drift_constant(model.d, model.s, model.m)
    doc = {
        "q": opportunity_rate(model.d, model.s, model.m),
        "cstar": dc.value,
        "cstar_kernel": dc.kernel,
        "eta_req": rep.eta_req if rep else None,
        "threshold": rep.threshold if rep else None,
        "passes": rep.passes if rep else None,
    }
    _write_output(json.dumps(_jsonify(doc), indent=2) + "\n", args.out)
    return 0


def _cmd_simulate(args) -> int:
    model = _model_from(args)
    policy = _policy_from(args)
    rng = np.random.default_rng(args.seed)
    traj = dyn.run_branch(model, policy, args.ell, rng)
    hist = traj.counts_history()
    clock = traj.clock()
    header = ["t", "action", "informative", "M"] + [f"count_{j}" for j in range(model.d)]
    rows = []
    for t in range(traj.ell):
        rows.append(
            [t + 1, int(traj.actions[t]), int(traj.informative[t]), int(clock[t + 1])]
            + hist[t + 1].tolist()
        )
    _write_output(_csv_text(header, rows), args.out)
    return 0


def _cmd_drift(args) -> int:
    model = _model_from(args)
    report = dyn.estimate_drift(model, _policy_from(args), args.horizon, args.reps, args.seed)
    header = ["w_bucket", "mean", "se", "count", "flagged", "kappa_hat"]
    rows = [
        [b.w, b.mean, b.se, b.count, int(b.flagged), report.kappa_hat] for b in report.buckets
    ]
    _write_output(_csv_text(header, rows), args.out)
    return 0


def _cmd_expmoment(args) -> int:
    model = _model_from(args)
    grid = [int(v) for v in args.n_grid.split(",")]
    pts = dyn.exp_moment_series(model, _policy_from(args), args.eta, grid, args.reps, args.seed)
    _write_output(_csv_text(["n", "estimate", "se"], [[p.n, p.estimate, p.se] for p in pts]), args.out)
    return 0


def _cmd_allocation(args) -> int:
    model = _model_from(args)
    policy = _policy_from(args)
    trajs = [
        dyn.run_branch(model, policy, args.t, np.random.default_rng([args.seed, i]))
        for i in range(args.runs)
    ]
    summary = dyn.summarize_allocation(trajs)
    rows = [
        [j, summary.empirical[j], summary.target[j]] for j in range(model.d)
    ]
    _write_output(_csv_text(["coordinate", "empirical", "target"], rows), args.out)
    return 0


def _cmd_poisson(args) -> int:
    doc: dict = {}
    if args.F:
        ell, r, alpha = args.F.split(",")
        doc["F"] = pk.F_functional(int(ell), float(r), float(alpha))
    if args.L:
        parts = args.L.split(",")
        ell, d, r = int(parts[0]), int(parts[1]), float(parts[2])
        p = [float(v) for v in parts[3:]]
        if not p:
            p = [1.0 / d] * d
        res = pk.L_functional(ell, d, r, p)
        doc["L"] = {"value": res.value, "se": res.se, "method": res.method}
    if args.check_identities:
        worst_max = 0.0
        for ell in range(1, 7):
            for p in (0.2, 0.5, 0.8):
                mb = pk.max_binomial_exact(ell, p, 0.25)
                worst_max = max(worst_max, abs(mb.enumeration - mb.closed_form))
        worst_pair = 0.0
        for ell in range(1, 5):
            for d in (2, 3):
                uniform = (1.0 / d,) * d
                mx = pk.max_multinomial_exact(ell, d, uniform, 0.5)
                L = pk.L_functional(ell, d, 0.5, uniform)
                worst_pair = max(worst_pair, abs(mx - 0.5**ell * L.value))
        doc["identities"] = {"max_binomial_worst": worst_max, "pair_agreement_worst": worst_pair}
    if not doc:
        raise ValueError("nothing to compute: pass --F, --L, or --check-identities")
    _write_output(json.dumps(_jsonify(doc), indent=2) + "\n", args.out)
    return 0


def _cmd_risk(args) -> int:
    model = _model_from(args)
    header = [
        "policy",
        "ell",
        "single_tree_bias",
        "se_single",
        "cross_tree_bias",
        "se_cross",
        "overlap",
        "se_overlap",
        "bias1",
        "bias2",
        "varterm",
        "remainder",
    ]
    rows = []
    for label in args.policies.split(","):
        policy = PolicySpec.parse(label)
        for ell in [int(v) for v in args.ell.split(",")]:
            fn = rk.estimate_functionals(model, policy, ell, args.reps, args.seed)
            if policy.kind == "exploratory":
                terms = rk.benchmark_bound_terms(model, ell, args.B, args.n0)
            else:
                terms = rk.cart_bound_terms(model, ell, args.B, args.n0)
            rows.append(
                [
                    label,
                    ell,
                    fn.single_tree_bias,
                    fn.se_single,
                    fn.cross_tree_bias,
                    fn.se_cross,
                    fn.overlap,
                    fn.se_overlap,
                    terms.bias1,
                    terms.bias2,
                    terms.varterm,
                    terms.remainder,
                ]
            )
    _write_output(_csv_text(header, rows), args.out)
    return 0


def _cmd_bellman(args) -> int:
    if args.mode == "counterexample":
        rep = bl.reproduce_counterexample(args.B, Fraction(args.epsilon))
        doc = {
            "B": rep.B,
            "epsilon": rep.epsilon,
            "law": {str(k): v for k, v in sorted(rep.law.mass.items())},
            "gamma_gap": rep.gamma_gap,
            "p_event": rep.p_event,
            "theta": rep.theta,
            "quadratic_coeff": rep.quadratic_coeff,
            "delta_j": rep.delta_j_expansion,
            "delta_j_direct": rep.delta_j_direct,
            "improves": rep.improves,
            "epsilon_critical": rep.epsilon_critical,
            "violations": [
                {
                    "depth": v.depth,
                    "state": list(v.state),
                    "exposure": list(v.exposure),
                    "action": v.action,
                    "better_action": v.better_action,
                    "margin": v.margin,
                }
                for v in rep.violations
            ],
        }
        _write_output(json.dumps(_jsonify(doc), indent=2) + "\n", args.out)
        return 0

    if args.m is None and args.gamma is None:
        args.m = 4
    model = _model_from(args)
    policy = _policy_from(args)
    objective = bl.default_objective(model, args.ell, args.B, n0=args.n0)
    if args.mode == "law":
        law = bl.terminal_law_exact(model, policy, args.ell)
        doc = {
            "depth": law.depth,
            "reduced": law.reduced,
            "exact": law.exact,
            "mass": {str(k): v for k, v in sorted(law.mass.items())},
        }
    elif args.mode == "objective":
        law = bl.terminal_law_exact(model, policy, args.ell)
        doc = {"J": bl.objective_value(law, objective), "B": args.B}
    elif args.mode == "certify":
        violations = bl.certificate_scan(model, policy, objective, args.ell)
        doc = {
            "violations": [
                {
                    "depth": v.depth,
                    "state": list(v.state),
                    "exposure": list(v.exposure),
                    "action": v.action,
                    "better_action": v.better_action,
                    "margin": v.margin,
                }
                for v in violations
            ]
        }
    elif args.mode == "search":
        res = bl.brute_force_policy_search(model, objective, args.ell)
        doc = {
            "best_value": res.best_value,
            "greedy_value": res.greedy_value,
            "policies_searched": res.policies_searched,
            "heuristic": res.heuristic,
            "best_policy": {
                f"t={t} state={z} exposure={A}": j for (t, z, A), j in sorted(res.best_policy.items())
            },
        }
    else:  # pragma: no cover
        raise ValueError(f"unknown bellman mode {args.mode}")
    _write_output(json.dumps(_jsonify(doc), indent=2) + "\n", args.out)
    return 0


_FOREST_CONFIG_KEYS = {
    "d",
    "s",
    "beta",
    "sigma0",
    "snr",
    "gamma_grid",
    "w_grid",
    "reps",
    "n0",
    "ell",
    "min_leaf",
    "B",
    "n_test",
    "seed",
}


def _load_forest_config(path: str) -> dict:
    with open(path) as fh:
        text = fh.read()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError:
        cfg = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            cfg[key.strip()] = json.loads(value.strip())
    unknown = set(cfg) - _FOREST_CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _cmd_forest(args) -> int:
    cfg = _load_forest_config(args.config)
    d = int(cfg.get("d", 100))
    s = int(cfg.get("s", 5))
    beta = tuple(cfg.get("beta", [1.0] * s))
    if len(beta) != s:
        raise ValueError(f"beta must have length s={s}")
    if "snr" in cfg and "sigma0" in cfg:
        raise ValueError("give either snr or sigma0, not both")
    if "snr" in cfg:
        sigma0 = float(np.linalg.norm([float(b) for b in beta])) / float(cfg["snr"])
    else:
        sigma0 = float(cfg.get("sigma0", 0.5))
    # the per-node candidate size is set cell by cell from gamma_grid; the
    # model's own m is not consulted by the experiment
    model = ModelConfig(d=d, s=s, m=d, beta=beta, sigma0_sq=sigma0**2)
    w_grid = tuple(math.inf if w in ("inf", None) else float(w) for w in cfg.get("w_grid", [0, 0.5, 1, 2, 4, 8, "inf"]))
    grid = fr.ExperimentGrid(
        gamma_grid=tuple(float(g) for g in cfg.get("gamma_grid", [0.02, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0])),
        w_grid=w_grid,
        reps=int(cfg.get("reps", 20)),
    )
    params = fr.ForestParams(
        n0=int(cfg.get("n0", 500)),
        ell=int(cfg.get("ell", 5)),
        min_leaf=int(cfg.get("min_leaf", 5)),
        B=int(cfg.get("B", 200)),
        n_test=int(cfg.get("n_test", 100)),
    )
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    rows = fr.heatmap_experiment(grid, model, params, seed)
    csv_rows = [[r[c] for c in fr.HEATMAP_COLUMNS] for r in rows]
    _write_output(_csv_text(list(fr.HEATMAP_COLUMNS), csv_rows), args.out)
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splitalloc", description=__doc__, allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("env", help="exposure law and drift constants")
    _add_model_args(p)
    _add_common(p)
    p.set_defaults(handler=_cmd_env)

    p = sub.add_parser("simulate", help="grow one branch")
    _add_model_args(p)
    p.add_argument("--policy", default="greedy")
    p.add_argument("--ell", type=int, required=True)
    _add_common(p)
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("drift", help="conditional drift table and contraction estimate")
    _add_model_args(p)
    p.add_argument("--policy", default="greedy")
    p.add_argument("--horizon", type=int, default=50)
    p.add_argument("--reps", type=int, default=2000)
    _add_common(p)
    p.set_defaults(handler=_cmd_drift)

    p = sub.add_parser("expmoment", help="exponential moment series of the imbalance")
    _add_model_args(p)
    p.add_argument("--policy", default="greedy")
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--n-grid", default="500,1000,2000")
    p.add_argument("--reps", type=int, default=10000)
    _add_common(p)
    p.set_defaults(handler=_cmd_expmoment)

    p = sub.add_parser("allocation", help="empirical vs limiting split shares")
    _add_model_args(p)
    p.add_argument("--policy", default="greedy")
    p.add_argument("--t", type=int, default=100000)
    p.add_argument("--runs", type=int, default=1)
    _add_common(p)
    p.set_defaults(handler=_cmd_allocation)

    p = sub.add_parser("poisson", help="kernel functionals")
    p.add_argument("--F", help="ell,r,alpha")
    p.add_argument("--L", help="ell,d,r[,p1,p2,...]")
    p.add_argument("--check-identities", action="store_true")
    _add_common(p)
    p.set_defaults(handler=_cmd_poisson)

    p = sub.add_parser("risk", help="Monte Carlo risk functionals and bound factors")
    _add_model_args(p)
    p.add_argument("--policies", default="greedy,exploratory")
    p.add_argument("--ell", default="6", help="comma list of depths")
    p.add_argument("--reps", type=int, default=20000)
    p.add_argument("--B", type=int, default=100)
    p.add_argument("--n0", type=int, default=500)
    _add_common(p)
    p.set_defaults(handler=_cmd_risk)

    p = sub.add_parser("bellman", help="exact laws, objectives, certificates")
    p.add_argument("mode", choices=["law", "objective", "certify", "counterexample", "search"])
    p.add_argument("--d", type=int, default=6)
    p.add_argument("--s", type=int, default=2)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--m", type=int, default=None)
    group.add_argument("--gamma", type=float)
    p.add_argument("--beta", default="1")
    p.add_argument("--sigma0", type=float, default=0.0)
    p.add_argument("--policy", default="greedy")
    p.add_argument("--ell", type=int, default=2)
    p.add_argument("--B", type=int, default=15)
    p.add_argument("--n0", type=int, default=500)
    p.add_argument("--epsilon", default="1/100")
    _add_common(p)
    p.set_defaults(handler=_cmd_bellman)

    p = sub.add_parser("forest", help="honest-forest experiments")
    p.add_argument("mode", choices=["heatmap"])
    p.add_argument("--config", required=True, help="JSON or key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="-")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(handler=_cmd_forest)

    return parser


def _apply_config(args, argv) -> None:
    """Merge a JSON config file under explicitly supplied flags."""
    with open(args.config) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    valid = set(vars(args)) - {"handler", "command", "config"}
    unknown = set(cfg) - valid
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    explicit = {
        tok[2:].split("=", 1)[0].replace("-", "_")
        for tok in (argv if argv is not None else sys.argv[1:])
        if tok.startswith("--")
    }
    for key, value in cfg.items():
        if key in explicit:
            continue
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        setattr(args, key, value)


def parse_and_dispatch(argv=None) -> int:
    """Run one CLI invocation; returns the process exit code.

    Usage errors exit 2 (argparse convention), runtime failures 1.
    """
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if getattr(args, "config", None) and args.command != "forest":
            _apply_config(args, argv)
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(parse_and_dispatch())

"""Command-line entry point: ``faqtor <subcommand> ...``.

Exit codes: 0 success, 1 verification failure (or "not guaranteed"), 2 usage
or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    p = Path(args.out_dir)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {p}: {exc}") from None
    return p


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {what} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path} is not valid JSON: {exc}") from None


# ------------------------------------------------------------------ commands


def cmd_gallery(args) -> int:
    from .gallery import run_gallery

    try:
        report = run_gallery(args.fixture or None, tol=args.tol)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    width = max(len(n) for n in report)
    for name, errors in report.items():
        print(f"{name:<{width}}  {'PASS' if not errors else 'FAIL'}")
        for e in errors:
            print(f"{'':<{width}}    {e}")
    failed = [n for n, e in report.items() if e]
    print(f"{len(report) - len(failed)}/{len(report)} fixtures pass")
    return EXIT_FAIL if failed else EXIT_OK


def _policy_arg(path, mdp):
    from .mdp_core import MdpError, policy_from_dict

    try:
        return policy_from_dict(_load_json(path, "policy"), mdp.n_actions)
    except (MdpError, ValueError) as exc:
        raise UsageError(f"bad policy document: {exc}") from None


def _mdp_arg(path):
    from .mdp_core import MdpError, mdp_from_dict

    try:
        return mdp_from_dict(_load_json(path, "MDP"))
    except (MdpError, ValueError, TypeError) as exc:
        raise UsageError(f"bad MDP document: {exc}") from None


def cmd_check(args) -> int:
    from .conditions import (AbstractionError, AbstractionSet, check_policy_condition, check_reward_condition,
                             check_theorem1, check_transition_condition)

    mdp = _mdp_arg(args.mdp)
    doc = _load_json(args.abstraction, "abstraction")
    try:
        phi = AbstractionSet(tuple(doc["maps"]), tuple(doc.get("cardinalities", ())))
    except (KeyError, AbstractionError, ValueError) as exc:
        raise UsageError(f"bad abstraction document: {exc}") from None
    if phi.n_states != mdp.n_states or phi.n_dims != mdp.actions.n_dims:
        raise UsageError("abstraction must cover every state and have one map per action dimension")
    if args.policy:
        pi = _policy_arg(args.policy, mdp)
        report = check_theorem1(mdp, pi, phi, tol=args.tol, horizon=args.horizon)
        out = report.to_dict()
        ok = report.guaranteed
    else:
        reports = [check_transition_condition(mdp, phi, args.tol), check_reward_condition(mdp, phi, args.tol)]
        out = {"conditions": [r.to_dict() for r in reports], "policy": "not checked (no --policy given)"}
        ok = all(r.satisfied for r in reports)
        out["verdict"] = "conditions hold" if ok else "conditions violated"
    print(json.dumps(out, indent=1, default=float))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_decompose(args) -> int:
    from .conditions import evaluate_q
    from .factorization import check_decomposability

    mdp = _mdp_arg(args.mdp)
    pi = _policy_arg(args.policy, mdp)
    q = evaluate_q(mdp, pi, args.horizon)
    report = check_decomposability(q, mdp.actions, args.tol)
    text = report.to_csv()
    if args.out_dir:
        path = _out_dir(args) / "decomposition.csv"
        path.write_text(text)
        print(f"wrote {path}")
    else:
        sys.stdout.write(text)
    print(f"verdict: {'decomposable' if report.verdict else 'not decomposable'} (max residual {report.max_residual:.3e})", file=sys.stderr)
    return EXIT_OK if report.decomposable.all() else EXIT_FAIL


def cmd_bandit_heatmap(args) -> int:
    from .bandit import heatmap_sweep
    from .svg import write_heatmap_svg

    if args.steps < 2:
        raise UsageError("--steps must be at least 2")
    grid = heatmap_sweep((args.alpha_min, args.alpha_max), (args.beta_min, args.beta_max), args.steps)
    out = _out_dir(args)
    csv_path = Path(args.out_csv) if args.out_csv else out / "bandit_heatmap.csv"
    svg_stem = str(args.out_svg).removesuffix(".svg") if args.out_svg else str(out / "bandit")
    svg_paths = {"rmse": Path(svg_stem + "_rmse.svg"), "suboptimality": Path(svg_stem + "_suboptimality.svg")}
    for p in (csv_path, *svg_paths.values()):
        p.parent.mkdir(parents=True, exist_ok=True)
    grid.to_csv(csv_path)
    labels = dict(x_labels=grid.alphas, y_labels=grid.betas)
    write_heatmap_svg(svg_paths["rmse"], grid.rmse, title="RMSE of additive fit (x: alpha, y: beta)", **labels)
    write_heatmap_svg(svg_paths["suboptimality"], grid.suboptimality,
                      title="Suboptimality of additive fit (x: alpha, y: beta)", **labels)
    print(f"wrote {csv_path}, {svg_paths['rmse']}, {svg_paths['suboptimality']}")
    return EXIT_OK


def cmd_sepsis_enumerate(args) -> int:
    from .mdp_core import save_mdp
    from .sepsis_sim import enumerate_mdp, load_config, optimal_policy

    config = load_config(args.config)
    mdp = enumerate_mdp(config, args.gamma)
    pi, value = optimal_policy(config, mdp=mdp)
    mdp_path = Path(args.out) if args.out else _out_dir(args) / "sepsis_mdp.json"
    mdp_path.parent.mkdir(parents=True, exist_ok=True)
    policy_path = mdp_path.with_name(mdp_path.stem + "_optimal_policy.json")
    save_mdp(mdp, mdp_path)
    with open(policy_path, "w") as fh:
        json.dump({"actions": pi.greedy_actions().tolist(), "value": value}, fh)
    print(f"states={mdp.n_states} actions={mdp.n_actions} gamma={mdp.gamma} optimal_value={value!r}")
    print(f"wrote {mdp_path} and {policy_path}")
    return EXIT_OK


def cmd_sepsis_experiment(args) -> int:
    from .experiment import ExperimentManifest, run_sepsis_experiment

    base = _load_json(args.manifest, "manifest") if args.manifest else {}
    if not isinstance(base, dict):
        raise UsageError("manifest must be a JSON object")
    overrides = {
        "seeds": tuple(range(args.seed, args.seed + args.n_seeds)) if args.seed is not None else None,
        "rhos": tuple(args.rhos) if args.rhos else None,
        "sample_sizes": tuple(args.sample_sizes) if args.sample_sizes else None,
        "modes": tuple(args.modes) if args.modes else None,
        "iterations": args.iterations,
        "ridge": args.ridge,
        "state_features": args.state_features,
        "config": args.config,
        "jobs": args.jobs,
        "out_dir": args.out_dir,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        manifest = ExperimentManifest.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad manifest: {exc}") from None
    result = run_sepsis_experiment(manifest)
    print(f"optimal value (computed) {result.optimal_value!r}; reference 0.736")
    for name, path in result.paths.items():
        print(f"wrote {path}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=None, help="directory for output files")
    common.add_argument("--config", default=None, help="sepsis dynamics config (falls back to $FAQTOR_CONFIG)")
    common.add_argument("--jobs", type=int, default=None, help="worker processes")
    common.add_argument("--seed", type=int, default=None, help="base random seed")

    p = argparse.ArgumentParser(prog="faqtor", description="Factored-action Q decomposition toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gallery", parents=[common], help="verify the built-in MDP fixtures")
    g.add_argument("--fixture", action="append", help="run only this fixture (repeatable)")
    g.add_argument("--tol", type=float, default=1e-9)
    g.set_defaults(func=cmd_gallery)

    c = sub.add_parser("check", parents=[common], help="check the sufficient conditions on an MDP")
    c.add_argument("mdp", help="MDP JSON document")
    c.add_argument("abstraction", help='abstraction JSON: {"maps": [[...], ...], "cardinalities": [...]}')
    c.add_argument("--policy", help='policy JSON: {"table": [[...]]} or {"actions": [...]}')
    c.add_argument("--tol", type=float, default=1e-9)
    c.add_argument("--horizon", type=int, default=None, help="finite-horizon evaluation (needed for gamma = 1)")
    c.set_defaults(func=cmd_check)

    d = sub.add_parser("decompose", parents=[common], help="per-state decomposability of Q^pi")
    d.add_argument("mdp")
    d.add_argument("policy")
    d.add_argument("--tol", type=float, default=1e-8)
    d.add_argument("--horizon", type=int, default=None)
    d.set_defaults(func=cmd_decompose)

    b = sub.add_parser("bandit-heatmap", parents=[common], help="rmse / suboptimality sweep over (alpha, beta)")
    b.add_argument("--alpha-min", type=float, default=-4.0)
    b.add_argument("--alpha-max", type=float, default=4.0)
    b.add_argument("--beta-min", type=float, default=-4.0)
    b.add_argument("--beta-max", type=float, default=4.0)
    b.add_argument("--steps", type=int, default=161, help="grid points per axis")
    b.add_argument("--out-csv", help="CSV path (default OUT_DIR/bandit_heatmap.csv)")
    b.add_argument("--out-svg", help="SVG path stem; writes STEM_rmse.svg and STEM_suboptimality.svg")
    b.set_defaults(func=cmd_bandit_heatmap, default_out="out/bandit")

    e = sub.add_parser("sepsis-enumerate", parents=[common], help="write the enumerated sepsis MDP as JSON")
    e.add_argument("--gamma", type=float, default=None)
    e.add_argument("--out", help="MDP JSON path (default OUT_DIR/sepsis_mdp.json)")
    e.set_defaults(func=cmd_sepsis_enumerate, default_out="out/sepsis")

    x = sub.add_parser("sepsis-experiment", parents=[common], help="offline RL sweep on the sepsis simulator")
    x.add_argument("--manifest", help="manifest JSON (fields of ExperimentManifest)")
    x.add_argument("--n-seeds", type=int, default=10, help="seeds run are --seed .. --seed + n - 1")
    x.add_argument("--rhos", type=float, nargs="+")
    x.add_argument("--sample-sizes", type=int, nargs="+")
    x.add_argument("--modes", nargs="+", choices=("baseline", "factored"))
    x.add_argument("--iterations", type=int)
    x.add_argument("--ridge", type=float)
    x.add_argument("--state-features", choices=("bits21", "tabular"))
    x.set_defaults(func=cmd_sepsis_experiment)
    return p


def main(argv=None) -> int:
    from .sepsis_sim import ConfigError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.out_dir is None and getattr(args, "default_out", None):
        args.out_dir = args.default_out
    if args.jobs is not None and args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line entry point: ``ilid <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from .datasets import (
    empirical_marginals,
    generate_expert_data,
    generate_imperfect_data,
    load_dataset,
    save_dataset,
    union_dataset,
)
from .discriminators import exact_state_discriminator, fit_state_discriminator
from .harness import (
    ExperimentConfig,
    default_output_dir,
    evaluate,
    fourrooms_demo,
    load_environment,
    run_ablation,
    run_bound_suite,
)
from .mdp import TabularPolicy, evaluate_policy_exact, save_mdp, value_iteration
from .selection import build_complementary_dataset, read_pairs_csv, selection_report, write_pairs_csv
from .weighted_bc import DataBundle, SchemeConfig, SCHEMES, load_policy, normalized_score, save_policy, train_policy

logger = logging.getLogger("ilid")


def _config(args) -> ExperimentConfig:
    """Config file first, then any explicitly given flags on top."""
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    over = {}
    for key in ("env", "n_e", "n_b", "epsilon", "expert_start", "eval_start", "backend",
                "trainer", "eval_episodes", "workers"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    if getattr(args, "seeds", None):
        over["seeds"] = args.seeds
    if getattr(args, "schemes", None):
        over["schemes"] = [SchemeConfig(s) for s in args.schemes]
    sel = {}
    if getattr(args, "sigma", None) is not None:
        sel["sigma"] = args.sigma
    if getattr(args, "rollback_k", None) is not None:
        sel["rollback_k"] = args.rollback_k
    if sel:
        over["selection"] = replace(cfg.selection, **sel)
    if getattr(args, "out", None):
        over["output_dir"] = args.out
    return replace(cfg, **over)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override its keys")
    p.add_argument("--env", help="'four_rooms' or path to an MDP JSON file")


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    env = load_environment(cfg.env)
    _, expert_policy = value_iteration(env.mdp)
    seed = cfg.seeds[0]
    out = Path(args.out or default_output_dir())
    out.mkdir(parents=True, exist_ok=True)
    expert = generate_expert_data(env.mdp, expert_policy, cfg.n_e, seed, start=env.resolve_start(cfg.expert_start))
    imperfect = generate_imperfect_data(env.mdp, expert_policy, cfg.n_b, seed + 10_000, epsilon=cfg.epsilon)
    save_dataset(expert, out / "expert.jsonl")
    save_dataset(imperfect, out / "imperfect.jsonl")
    save_mdp(env.mdp, out / "mdp.json", env.grid.spec.layout() if env.grid else None)
    print(json.dumps({"expert": expert.digest(), "imperfect": imperfect.digest(), "dir": str(out)}))
    return 0


def _num_states_actions(cfg):
    mdp = load_environment(cfg.env).mdp
    return mdp.num_states, mdp.num_actions


def cmd_select(args) -> int:
    cfg = _config(args)
    S, A = _num_states_actions(cfg)
    expert = load_dataset(args.expert, "expert")
    imperfect = load_dataset(args.imperfect, "imperfect")
    union = union_dataset(expert, imperfect)
    if cfg.backend == "exact":
        d = exact_state_discriminator(empirical_marginals(expert, S, A), empirical_marginals(union, S, A))
    else:
        d = fit_state_discriminator(expert, union, replace(cfg.train, seed=cfg.seeds[0]), S, A)
    pairs = build_complementary_dataset(imperfect, d, cfg.selection)
    write_pairs_csv(pairs, args.output)
    rep = selection_report(pairs, imperfect)
    print(json.dumps({"anchors": rep.anchors, "selected": rep.selected, "coverage": rep.coverage}))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    S, A = _num_states_actions(cfg)
    expert = load_dataset(args.expert, "expert")
    imperfect = load_dataset(args.imperfect, "imperfect")
    selected = read_pairs_csv(args.selected) if args.selected else None
    scheme = SchemeConfig(args.scheme, disable_alpha=args.disable_alpha, disable_beta=args.disable_beta,
                          use_full_Db_as_Ds=args.full_db)
    if scheme.scheme == "ILID" and selected is None and not scheme.use_full_Db_as_Ds:
        selected = build_complementary_dataset(
            imperfect,
            exact_state_discriminator(empirical_marginals(expert, S, A),
                                      empirical_marginals(union_dataset(expert, imperfect), S, A)),
            cfg.selection,
        )
    bundle = DataBundle(expert, imperfect, S, A, selected)
    policy = train_policy(scheme, bundle, cfg.trainer, sigma=cfg.selection.sigma)
    save_policy(policy, args.output, {"scheme": scheme.label})
    print(json.dumps({"scheme": scheme.label, "policy": args.output}))
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    env = load_environment(cfg.env)
    policy = load_policy(args.policy)
    start = env.resolve_start(cfg.eval_start)
    res = evaluate(policy, env.mdp, cfg.eval_episodes, cfg.seeds[0], start)
    _, expert_policy = value_iteration(env.mdp)
    rand = evaluate_policy_exact(env.mdp, TabularPolicy.uniform(env.mdp.num_states, env.mdp.num_actions), start)
    expert = evaluate_policy_exact(env.mdp, expert_policy, start)
    score = normalized_score(res.mean_return, rand, expert) if expert != rand else math.nan
    print(json.dumps({"mean_return": res.mean_return, "sd_return": res.sd_return,
                      "success_rate": res.success_rate, "normalized_score": score}))
    return 0


def cmd_fourrooms_demo(args) -> int:
    cfg = _config(args)
    out = args.out or default_output_dir()
    summary = fourrooms_demo(cfg, out)
    for scheme, stats in summary.items():
        print(f"{scheme:10s} success={stats['success_rate']:.3f} score={stats['normalized_score']:.1f}")
    return 1 if any(s["failures"] for s in summary.values()) else 0


def cmd_verify_bounds(args) -> int:
    out = Path(args.out or default_output_dir()) / "bounds.csv"
    rows = run_bound_suite(args.num_mdps, tuple(args.n_e), tuple(args.n_s), args.trials, args.seed, out)
    failed = [r for r in rows if not r["holds"]]
    print(f"{len(rows) - len(failed)}/{len(rows)} cells hold; results in {out}")
    return 1 if failed else 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    if cfg.output_dir is None:
        cfg = replace(cfg, output_dir=default_output_dir())
    rows = run_ablation(cfg, args.k_values)
    by_variant = {}
    failed = 0
    for r in rows:
        failed += r["status"] != "ok"
        by_variant.setdefault(r["variant"], []).append(r["success_rate"])
    for name, vals in by_variant.items():
        print(f"{name:28s} success={sum(vals) / len(vals):.3f}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ilid", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate expert and imperfect datasets")
    _common(p)
    p.add_argument("--n-e", dest="n_e", type=int)
    p.add_argument("--n-b", dest="n_b", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--expert-start", dest="expert_start")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--out", help="output directory (default $ILID_OUTPUT_DIR or ./ilid_runs)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("select", help="build the complementary dataset D_s")
    _common(p)
    p.add_argument("--expert", required=True)
    p.add_argument("--imperfect", required=True)
    p.add_argument("--sigma", type=float)
    p.add_argument("--rollback-k", dest="rollback_k", type=int)
    p.add_argument("--backend", choices=("exact", "trained"))
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--output", required=True, help="CSV of selected pairs")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="fit a tabular policy with one weighting scheme")
    _common(p)
    p.add_argument("--scheme", choices=SCHEMES, default="ILID")
    p.add_argument("--expert", required=True)
    p.add_argument("--imperfect", required=True)
    p.add_argument("--selected", help="CSV from 'select' (ILID only)")
    p.add_argument("--sigma", type=float)
    p.add_argument("--rollback-k", dest="rollback_k", type=int)
    p.add_argument("--trainer", choices=("closed_form", "gradient"))
    p.add_argument("--disable-alpha", action="store_true")
    p.add_argument("--disable-beta", action="store_true")
    p.add_argument("--full-db", action="store_true", help="use all of D_b as D_s")
    p.add_argument("--output", required=True, help="policy JSON path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="roll out a saved policy")
    _common(p)
    p.add_argument("--policy", required=True)
    p.add_argument("--episodes", dest="eval_episodes", type=int)
    p.add_argument("--eval-start", dest="eval_start")
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fourrooms-demo", help="run all schemes on Four Rooms and dump figure data")
    _common(p)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--schemes", choices=SCHEMES, nargs="+")
    p.add_argument("--backend", choices=("exact", "trained"))
    p.add_argument("--episodes", dest="eval_episodes", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fourrooms_demo)

    p = sub.add_parser("verify-bounds", help="Monte Carlo check of the suboptimality bounds")
    p.add_argument("--num-mdps", type=int, default=10)
    p.add_argument("--n-e", type=int, nargs="+", default=[1, 2, 4, 8])
    p.add_argument("--n-s", type=int, nargs="+", default=[0, 4, 16])
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_bounds)

    p = sub.add_parser("ablate", help="ILID component toggles and a rollback-K sweep")
    _common(p)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--k-values", type=int, nargs="+", default=[1, 2, 5, 10, 20, 50])
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"ilid {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

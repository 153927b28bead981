"""Experiment orchestration: the full ILID pipeline, evaluation and bound sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .datasets import (
    Dataset,
    empirical_marginals,
    generate_expert_data,
    generate_imperfect_data,
    load_dataset,
    save_dataset,
    union_dataset,
)
from .discriminators import (
    TrainConfig,
    exact_state_action_discriminator,
    exact_state_discriminator,
    fit_dwbc_discriminator,
    fit_state_action_discriminator,
    fit_state_discriminator,
)
from .mdp import (
    ACTION_ARROWS,
    GridWorld,
    TabularMdp,
    TabularPolicy,
    _rollout,
    build_four_rooms,
    evaluate_policy_exact,
    load_mdp,
    make_rng,
    random_deterministic_mdp,
    trajectory_return,
    value_iteration,
)
from .selection import SelectionConfig, build_complementary_dataset, selection_report, write_pairs_csv
from .theory import bound_report
from .weighted_bc import DataBundle, SchemeConfig, load_policy, normalized_score, save_policy, train_policy

logger = logging.getLogger(__name__)

OUTPUT_ENV_VAR = "ILID_OUTPUT_DIR"


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_ENV_VAR, "ilid_runs")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    env: str = "four_rooms"  # "four_rooms" or a path to an MDP JSON file
    n_e: int = 1
    n_b: int = 500
    epsilon: float = 1.0
    expert_start: Optional[str] = "right"  # start name/index, or None for mu
    eval_start: Optional[str] = "left"
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    schemes: List[SchemeConfig] = field(
        default_factory=lambda: [SchemeConfig(s) for s in ("ILID", "BCE", "BCU", "DWBC", "ISWBC")]
    )
    train: TrainConfig = field(default_factory=TrainConfig)
    backend: str = "exact"  # discriminator backend: "exact" or "trained"
    trainer: str = "closed_form"  # policy trainer: "closed_form" or "gradient"
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    eval_episodes: int = 100
    output_dir: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be >= 1")
        if self.n_e < 1 or self.n_b < 1:
            raise ValueError("n_e and n_b must be >= 1")
        if self.backend not in ("exact", "trained"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.trainer not in ("closed_form", "gradient"):
            raise ValueError(f"unknown trainer {self.trainer!r}")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["selection"] = asdict(self.selection)
        doc["train"] = asdict(self.train)
        doc["schemes"] = [asdict(s) for s in self.schemes]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "selection" in doc:
            doc["selection"] = SelectionConfig(**doc["selection"])
        if "train" in doc:
            doc["train"] = TrainConfig(**doc["train"])
        if "schemes" in doc:
            doc["schemes"] = [SchemeConfig(s) if isinstance(s, str) else SchemeConfig(**s) for s in doc["schemes"]]
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Environment:
    mdp: TabularMdp
    grid: Optional[GridWorld] = None

    def resolve_start(self, name) -> Optional[int]:
        """Map ``"left"``/``"right"`` (Four Rooms) or an integer string to a state."""
        if name is None:
            return None
        if isinstance(name, (int, np.integer)) or str(name).lstrip("-").isdigit():
            return int(name)
        if self.grid is None:
            raise ValueError(f"named start {name!r} needs the Four Rooms environment")
        starts = self.grid.starts
        lookup = {"left": starts[0], "right": starts[-1]}
        if name not in lookup:
            raise ValueError(f"unknown start {name!r}; use 'left', 'right' or a state index")
        return lookup[name]


def load_environment(env: str) -> Environment:
    if env == "four_rooms":
        grid = build_four_rooms()
        return Environment(grid.mdp, grid)
    return Environment(load_mdp(env))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalResult:
    mean_return: float
    sd_return: float
    success_rate: float


def _reached_terminal(mdp: TabularMdp, traj) -> bool:
    if not len(traj):
        return False
    return int(mdp.next_state[traj.states[-1], traj.actions[-1]]) in mdp.terminal_states


def evaluate(policy: TabularPolicy, mdp: TabularMdp, episodes: int, seed: int,
             start: Optional[int] = None) -> EvalResult:
    """Monte Carlo returns over ``episodes`` rollouts.

    Success means entering a terminal (goal) state within the horizon; it is
    NaN for MDPs without terminal states.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = make_rng(seed)
    returns, successes = np.zeros(episodes), np.zeros(episodes)
    for i in range(episodes):
        traj = _rollout(mdp, policy, rng, start)
        returns[i] = trajectory_return(mdp, traj)
        successes[i] = _reached_terminal(mdp, traj)
    success = float(successes.mean()) if mdp.terminal_states else math.nan
    return EvalResult(float(returns.mean()), float(returns.std()), success)


# ---------------------------------------------------------------------------
# ILID pipeline
# ---------------------------------------------------------------------------

@dataclass
class ResultRow:
    scheme: str
    seed: int
    return_mean: float
    return_sd: float
    normalized_score: float
    success_rate: float
    random_ref: float
    expert_ref: float
    selected_pairs: int
    expert_hash: str
    imperfect_hash: str
    status: str = "ok"
    seconds: Dict[str, float] = field(default_factory=dict)

    # timings vary run to run, so they are kept out of the results CSV
    CSV_FIELDS = (
        "scheme", "seed", "return_mean", "return_sd", "normalized_score", "success_rate",
        "random_ref", "expert_ref", "selected_pairs", "expert_hash", "imperfect_hash", "status",
    )

    def csv_row(self) -> dict:
        return {k: getattr(self, k) for k in self.CSV_FIELDS}


def _discriminators(cfg: ExperimentConfig, expert: Dataset, union: Dataset, S: int, A: int, seed: int):
    if cfg.backend == "exact":
        ce, cu = empirical_marginals(expert, S, A), empirical_marginals(union, S, A)
        return exact_state_discriminator(ce, cu), exact_state_action_discriminator(ce, cu)
    tcfg = replace(cfg.train, seed=seed)
    d = fit_state_discriminator(expert, union, tcfg, S, A)
    D = fit_state_action_discriminator(expert, union, replace(tcfg, seed=seed + 1), S, A)
    return d, D


def _seed_run(cfg: ExperimentConfig, seed: int, out: Optional[Path]) -> List[ResultRow]:
    clock = {}
    t0 = time.perf_counter()
    env = load_environment(cfg.env)
    mdp = env.mdp
    S, A = mdp.num_states, mdp.num_actions
    _, expert_policy = value_iteration(mdp)
    expert_start = env.resolve_start(cfg.expert_start)
    eval_start = env.resolve_start(cfg.eval_start)
    expert = generate_expert_data(mdp, expert_policy, cfg.n_e, seed, start=expert_start)
    imperfect = generate_imperfect_data(mdp, expert_policy, cfg.n_b, seed + 10_000, epsilon=cfg.epsilon)
    union = union_dataset(expert, imperfect)
    clock["data"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    d, D = _discriminators(cfg, expert, union, S, A, seed)
    clock["discriminators"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    selected = build_complementary_dataset(imperfect, d, cfg.selection)
    clock["selection"] = time.perf_counter() - t0
    summary = selection_report(selected, imperfect)
    logger.info("seed %d: %d anchors, %d selected pairs, coverage %.3f",
                seed, summary.anchors, summary.selected, summary.coverage)

    random_ref = evaluate_policy_exact(mdp, TabularPolicy.uniform(S, A), eval_start)
    expert_ref = evaluate_policy_exact(mdp, expert_policy, eval_start)
    hashes = (expert.digest(), imperfect.digest())
    if out is not None:
        seed_dir = out / f"seed_{seed}"
        save_dataset(expert, seed_dir / "expert.jsonl")
        save_dataset(imperfect, seed_dir / "imperfect.jsonl")
        write_pairs_csv(selected, seed_dir / "selected.csv")
        for name, disc in (("state", d), ("state_action", D)):
            if hasattr(disc, "save"):
                disc.save(seed_dir / f"discriminator_{name}.json")

    bundle = DataBundle(expert, imperfect, S, A, selected)
    rows = []
    for scheme in cfg.schemes:
        t0 = time.perf_counter()
        try:
            D_s = D
            if scheme.scheme == "DWBC" and cfg.backend == "trained":
                D_s = fit_dwbc_discriminator(expert, imperfect, replace(cfg.train, seed=seed + 2), S, A, scheme.dwbc_eta)
            elif scheme.scheme == "DWBC":
                D_s = None  # exact DWBC discriminator is built from counts
            policy = train_policy(scheme, bundle, cfg.trainer, d=d, D=D_s, sigma=cfg.selection.sigma)
            res = evaluate(policy, mdp, cfg.eval_episodes, seed + 20_000, eval_start)
            score = normalized_score(res.mean_return, random_ref, expert_ref) if expert_ref != random_ref else math.nan
            row = ResultRow(scheme.label, seed, res.mean_return, res.sd_return, score, res.success_rate,
                            random_ref, expert_ref, len(selected), *hashes)
            if out is not None:
                save_policy(policy, out / f"seed_{seed}" / f"policy_{scheme.label}.json",
                            {"scheme": asdict(scheme), "seed": seed})
        except Exception as exc:  # a failed scheme yields a diagnostic row, not a crash
            logger.exception("scheme %s failed on seed %d", scheme.label, seed)
            row = ResultRow(scheme.label, seed, math.nan, math.nan, math.nan, math.nan,
                            random_ref, expert_ref, len(selected), *hashes, status=f"error: {exc}")
        row.seconds = {**clock, "train_eval": time.perf_counter() - t0}
        rows.append(row)
    return rows


def run_ilid_pipeline(cfg: ExperimentConfig) -> List[ResultRow]:
    """Data generation, discriminators, selection, policy learning and
    evaluation for every (scheme, seed). Writes artifacts if ``output_dir`` is set."""
    out = Path(cfg.output_dir) if cfg.output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    # jobs are whole seeds: the schemes of one seed share its datasets and discriminators
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            per_seed = list(pool.map(_seed_run, [cfg] * len(cfg.seeds), cfg.seeds, [out] * len(cfg.seeds)))
    else:
        per_seed = [_seed_run(cfg, s, out) for s in cfg.seeds]
    rows = sorted((r for rs in per_seed for r in rs), key=lambda r: (r.scheme, r.seed))
    if out is not None:
        write_results_csv(rows, out / "results.csv")
        write_timings_csv(rows, out / "timings.csv")
    return rows


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_results_csv(rows: Sequence[ResultRow], path) -> None:
    with Path(path).open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=ResultRow.CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.csv_row().items()})


def write_timings_csv(rows: Sequence[ResultRow], path) -> None:
    stages = sorted({k for r in rows for k in r.seconds})
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["scheme", "seed", *stages])
        for r in rows:
            w.writerow([r.scheme, r.seed, *(f"{r.seconds.get(k, math.nan):.4f}" for k in stages)])


def read_results_csv(path) -> List[dict]:
    with Path(path).open(newline="") as f:
        return list(csv.DictReader(f))


def summarize(rows: Sequence[ResultRow]) -> Dict[str, dict]:
    out = {}
    for scheme in sorted({r.scheme for r in rows}):
        rs = [r for r in rows if r.scheme == scheme]
        out[scheme] = {
            "success_rate": float(np.mean([r.success_rate for r in rs])),
            "return_mean": float(np.mean([r.return_mean for r in rs])),
            "normalized_score": float(np.mean([r.normalized_score for r in rs])),
            "seeds": len(rs),
            "failures": sum(r.status != "ok" for r in rs),
        }
    return out


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------

ABLATIONS = (
    SchemeConfig("ILID"),
    SchemeConfig("ILID", disable_alpha=True),
    SchemeConfig("ILID", disable_beta=True),
    SchemeConfig("ILID", use_full_Db_as_Ds=True),
)


def run_ablation(cfg: ExperimentConfig, rollback_values: Sequence[int] = (1, 2, 5, 10, 20, 50)) -> List[dict]:
    """ILID component toggles plus a sweep over the rollback step K."""
    out = []
    base = replace(cfg, schemes=list(ABLATIONS), output_dir=None)
    for row in run_ilid_pipeline(base):
        out.append({"variant": row.scheme, "rollback_k": cfg.selection.rollback_k, **row.csv_row()})
    for k in rollback_values:
        swept = replace(cfg, schemes=[SchemeConfig("ILID")], output_dir=None,
                        selection=replace(cfg.selection, rollback_k=int(k)))
        for row in run_ilid_pipeline(swept):
            out.append({"variant": f"ILID@K={k}", "rollback_k": int(k), **row.csv_row()})
    if cfg.output_dir:
        path = Path(cfg.output_dir)
        path.mkdir(parents=True, exist_ok=True)
        with (path / "ablation.csv").open("w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(out[0]), lineterminator="\n")
            w.writeheader()
            for r in out:
                w.writerow({k: _fmt(v) for k, v in r.items()})
    return out


# ---------------------------------------------------------------------------
# Bound suite
# ---------------------------------------------------------------------------

BOUND_FIELDS = ("mdp", "num_states", "num_actions", "horizon", "n_e", "n_s", "gap", "se",
                "thm1_rhs", "thm1_se", "cor1_rhs", "eps_o", "eps_e", "eps_s", "delta", "holds")


def random_bound_mdps(count: int, seed: int, max_states: int = 30, max_actions: int = 4,
                      max_horizon: int = 15) -> List[TabularMdp]:
    rng = make_rng(seed)
    mdps = []
    for i in range(count):
        S = int(rng.integers(5, max_states + 1))
        A = int(rng.integers(2, max_actions + 1))
        H = int(rng.integers(3, max_horizon + 1))
        mdps.append(random_deterministic_mdp(S, A, H, seed=int(rng.integers(2**63))))
    return mdps


def run_bound_suite(num_mdps: int = 10, n_e_grid: Sequence[int] = (1, 2, 4, 8),
                    n_s_grid: Sequence[int] = (0, 4, 16), trials: int = 200, seed: int = 0,
                    out_csv=None, mdps: Optional[Sequence[TabularMdp]] = None) -> List[dict]:
    """Sweep the (n_e, n_s) grid over random deterministic MDPs."""
    if mdps is None:
        mdps = random_bound_mdps(num_mdps, seed)
    rows = []
    for i, mdp in enumerate(mdps):
        for n_e in n_e_grid:
            for n_s in n_s_grid:
                rep = bound_report(mdp, n_e, n_s, trials, seed=seed * 1_000_003 + i * 1009 + n_e * 31 + n_s)
                rows.append({"mdp": i, "num_states": mdp.num_states, "num_actions": mdp.num_actions,
                             "horizon": mdp.horizon, **rep.row()})
    if out_csv is not None:
        write_bound_csv(rows, out_csv)
    return rows


def write_bound_csv(rows: Sequence[dict], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with Path(path).open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=BOUND_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in BOUND_FIELDS})


def read_bound_csv(path) -> List[dict]:
    ints = {"mdp", "num_states", "num_actions", "horizon", "n_e", "n_s"}
    rows = []
    with Path(path).open(newline="") as f:
        for r in csv.DictReader(f):
            rows.append({
                k: (int(v) if k in ints else (v == "True") if k == "holds" else float(v))
                for k, v in r.items()
            })
    return rows


# ---------------------------------------------------------------------------
# Four Rooms figure data
# ---------------------------------------------------------------------------

def _grid_counts(grid: GridWorld, trajs) -> np.ndarray:
    rows, cols = grid.spec.shape
    counts = np.zeros((rows, cols), dtype=np.int64)
    for traj in trajs:
        for s in traj.states:
            r, c = grid.cell_of(s)
            counts[r, c] += 1
        if len(traj) and _reached_terminal(grid.mdp, traj):
            r, c = grid.spec.goal_state
            counts[r, c] += 1
    return counts


def _write_grid(path: Path, table) -> None:
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for row in table:
            w.writerow(row)


def _arrow_table(grid: GridWorld, policy: TabularPolicy, visited=None) -> List[List[str]]:
    layout = grid.spec.layout()
    table = []
    for r, line in enumerate(layout):
        row = []
        for c, ch in enumerate(line):
            if ch == "#":
                row.append("#")
            elif ch == "G":
                row.append("G")
            else:
                s = grid.state_of((r, c))
                if visited is not None and s not in visited:
                    row.append(".")
                else:
                    row.append(ACTION_ARROWS[int(np.argmax(policy.probs[s]))])
        table.append(row)
    return table


def fourrooms_demo(cfg: ExperimentConfig, out_dir) -> Dict[str, dict]:
    """Write per-cell visitation counts and argmax-arrow tables for the expert
    data, the imperfect data, and rollouts of each scheme from ``eval_start``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = replace(cfg, env="four_rooms", output_dir=str(out / "runs"))
    rows = run_ilid_pipeline(cfg)
    env = load_environment("four_rooms")
    grid, mdp = env.grid, env.mdp
    S, A = mdp.num_states, mdp.num_actions
    seed = cfg.seeds[0]
    run_dir = out / "runs" / f"seed_{seed}"
    expert = load_dataset(run_dir / "expert.jsonl", "expert")
    imperfect = load_dataset(run_dir / "imperfect.jsonl", "imperfect")
    _write_grid(out / "expert_visits.csv", _grid_counts(grid, expert))
    _write_grid(out / "imperfect_visits.csv", _grid_counts(grid, imperfect))
    counts = empirical_marginals(imperfect, S, A).state_action_counts
    with (out / "imperfect_action_density.csv").open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["row", "col", *(f"p_{n}" for n in ("up", "down", "left", "right"))])
        for s in range(S):
            tot = counts[s].sum()
            if tot:
                r, c = grid.cell_of(s)
                w.writerow([r, c, *(repr(float(x)) for x in counts[s] / tot)])
    eval_start = env.resolve_start(cfg.eval_start)
    for scheme in cfg.schemes:
        policy = load_policy(run_dir / f"policy_{scheme.label}.json")
        rng = make_rng(seed + 30_000)
        trajs = [_rollout(mdp, policy, rng, eval_start) for _ in range(cfg.eval_episodes)]
        visits = _grid_counts(grid, trajs)
        _write_grid(out / f"rollouts_{scheme.label}_visits.csv", visits)
        visited = {s for t in trajs for s in t.states}
        _write_grid(out / f"rollouts_{scheme.label}_arrows.csv", _arrow_table(grid, policy, visited))
    _write_grid(out / "layout.csv", [list(line) for line in grid.spec.layout()])
    return summarize(rows)

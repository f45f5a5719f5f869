"""Command line interface.

Sub-commands cover the full pipeline:

    generate    write the RSRP grid cache for the configured scenario
    synthesize  draw calls, aggregate pixels, write the measurement dataset
    train       train one agent per seed, write checkpoints + training CSV
    eval        greedy rollouts of a checkpoint (or the random policy)
    bfs         best-first search over the evaluation seeds
    oracle      exhaustive optimum over the evaluation seeds
    stress      greedy rollouts under widening traffic perturbations
    tables      print the CQI table, the eta schedule, and the compliance
                probability for a given cell count

Metric files are CSV in long format (run_id, phase, episode, step, metric,
value) with the resolved-config hash on a leading comment line; identical
configs reproduce byte-identical files.  Exit codes: 0 success, 1 config
error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import agent as agent_mod
from . import baselines, mdt, nn
from .config import RunConfig, load_run_config
from .env import TiltEnv
from .scenario import generate_grids, save_grids

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2

CSV_HEADER = ("run_id", "phase", "episode", "step", "metric", "value")


# -- pipeline assembly --------------------------------------------------------

def baseline_tilts(cfg: RunConfig) -> dict[int, int]:
    scen = cfg.scenario
    return {c: (scen.boundary_tilt_index if c in scen.boundary_cells
                else cfg.dataset.baseline_tilt_index)
            for c in scen.modelled_cells}


def build_dataset(cfg: RunConfig, grids) -> mdt.MdtDataset:
    ds_p = cfg.dataset
    reports = mdt.synthesize_reports(
        grids, baseline_tilts(cfg), ds_p.traffic_seed, ds_p.n_calls,
        mean_reports=ds_p.mean_reports, sigma_meas_db=ds_p.sigma_meas_db,
        hotspots=ds_p.hotspots, pixel_size_m=cfg.scenario.pixel_size_m,
        load_rho=ds_p.load_rho)
    dataset = mdt.pixelize(reports, ds_p.min_samples, ds_p.min_interferers,
                           baseline=baseline_tilts(cfg),
                           act_ue_factor=ds_p.act_ue_factor,
                           load_rho_default=ds_p.load_rho)
    return mdt.compute_deltas(dataset, grids)


def build_env(cfg: RunConfig, d_range: float | None = None) -> TiltEnv:
    grids = generate_grids(cfg.scenario)
    dataset = build_dataset(cfg, grids)
    return TiltEnv(grids, dataset, cfg.scenario.target_cells,
                   cfg.reward.env_config(d_range), seed=0)


# -- metric emission ----------------------------------------------------------

def write_metrics(path: Path, rows: Iterable[tuple], config_hash: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash: {config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for run_id, phase, episode, step, metric, value in rows:
            writer.writerow([run_id, phase, int(episode), int(step), metric,
                             repr(float(value))])


def write_resolved_config(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    blob = json.dumps({"config_hash": cfg.config_hash(), "config": cfg.resolved()},
                      sort_keys=True, indent=2)
    (out_dir / "resolved_config.json").write_text(blob + "\n")


def _run_id(algo: str, cfg: RunConfig, seed: int) -> str:
    return f"{algo}/{cfg.reward.mode}/{seed}"


# -- seed distribution --------------------------------------------------------

def _chunks(items: Sequence, n: int) -> list[list]:
    n = max(1, min(n, len(items)))
    return [list(items[i::n]) for i in range(n)]


def _pool_map(worker, arg_sets: list[tuple], workers: int) -> list:
    """Run worker over argument tuples, order-preserving."""
    if workers <= 1 or len(arg_sets) <= 1:
        return [worker(*args) for args in arg_sets]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, *zip(*arg_sets)))


def _eval_chunk(resolved: dict, ckpt: str | None, algo: str,
                seeds: list[int], d_range: float | None) -> list[tuple]:
    """One worker's share of greedy/random rollouts; returns plain tuples."""
    cfg = load_run_config(overrides=resolved, environ={})
    env = build_env(cfg, d_range)
    out = []
    if algo == "random":
        for s in seeds:
            rng = np.random.default_rng(np.random.SeedSequence([0xBAD, s]))
            res = baselines.random_policy(env, seed=s, action_rng=rng)
            out.append((s, res.total_reward, tuple(res.step_rewards)))
        return out
    params, spec, _ = nn.load_checkpoint(ckpt)
    for s in seeds:
        total, steps = agent_mod.greedy_episode(env, spec, params, s)
        out.append((s, total, tuple(steps)))
    return out


def _search_chunk(resolved: dict, kind: str, seeds: list[int]) -> list[tuple]:
    cfg = load_run_config(overrides=resolved, environ={})
    env = build_env(cfg)
    out = []
    for s in seeds:
        if kind == "bfs":
            res = baselines.best_first_search(env, seed=s)
        else:
            res = baselines.brute_force_optimum(env, seed=s)
        out.append((s, res.total_reward, tuple(res.step_rewards),
                    res.nodes_expanded, tuple(sorted(res.tilt_assignment.items()))))
    return out


# -- commands -----------------------------------------------------------------

def cmd_generate(cfg: RunConfig, args) -> int:
    grids = generate_grids(cfg.scenario)
    out = Path(args.out or cfg.experiment.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "grids.tlgr"
    save_grids(grids, path)
    write_resolved_config(cfg, out)
    print(f"wrote {path} cells={grids.cell_ids} tilts={len(grids.tilt_set_deg)} "
          f"grid={grids.shape} clamped={grids.clamped_pixels}")
    return EXIT_OK


def cmd_synthesize(cfg: RunConfig, args) -> int:
    grids = generate_grids(cfg.scenario)
    dataset = build_dataset(cfg, grids)
    out = Path(args.out or cfg.experiment.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dataset.jsonl"
    mdt.save_dataset(dataset, path)
    write_resolved_config(cfg, out)
    print(f"wrote {path} pixels={len(dataset.pixels)} "
          f"discarded_fraction={dataset.discarded_fraction:.4f}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    out = Path(args.out or cfg.experiment.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out)
    algo = args.algo or cfg.agent.algo
    env = build_env(cfg)
    rows: list[tuple] = []
    summary = {}
    for seed in cfg.experiment.seeds:
        acfg = agent_mod.AgentConfig(**{**cfg.agent.__dict__, "algo": algo, "seed": seed})
        try:
            result = agent_mod.train(env, acfg)
        except agent_mod.TrainingDiverged as exc:
            crash = out / f"crash_{algo}_seed{seed}.ckpt"
            nn.save_checkpoint(exc.params, exc.spec, crash,
                               extra={"algo": algo, "env_step": exc.env_step})
            print(f"training diverged at env step {exc.env_step}; "
                  f"checkpoint dumped to {crash}", file=sys.stderr)
            return EXIT_NUMERIC
        run = _run_id(algo, cfg, seed)
        ckpt = out / f"{algo}_seed{seed}.ckpt"
        nn.save_checkpoint(result.params, result.spec, ckpt,
                           extra={"algo": algo, "train_seed": seed,
                                  "config_hash": cfg.config_hash(),
                                  "case": cfg.reward.mode})
        for ep, r in enumerate(result.episode_rewards):
            rows.append((run, "train", ep + 1, 0, "episode_reward", r))
        for env_step, loss in result.losses:
            rows.append((run, "train", 0, env_step, "loss", loss))
        sched = agent_mod.EpsSchedule(acfg.train_episodes, acfg.eps_max, acfg.eps_min,
                                      acfg.tau0_fraction,
                                      acfg.kappa if algo == "dw_eta" else 0.0)
        for point in result.evals:
            rows.append((run, "eval", point.episode, point.env_steps,
                         "eval_mean_reward", point.mean_reward))
            for d in range(1, env.episode_len + 1):
                rows.append((run, "train", point.episode, d, f"eps[d={d}]",
                             sched.value(d, point.episode)))
        summary[str(seed)] = {"final_eval_mean": result.evals[-1].mean_reward,
                              "gradient_steps": result.gradient_steps,
                              "checkpoint": ckpt.name}
        print(f"trained {run}: final eval mean "
              f"{result.evals[-1].mean_reward:.4f} -> {ckpt}")
    write_metrics(out / f"train_{algo}.csv", rows, cfg.config_hash())
    (out / f"train_{algo}.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def _eval_rows(cfg: RunConfig, algo: str, ckpt: str | None, run_seed: int,
               eval_seeds: Sequence[int], phase: str,
               d_range: float | None = None) -> list[tuple]:
    workers = cfg.experiment.effective_workers()
    chunks = _chunks(list(eval_seeds), workers)
    arg_sets = [(cfg.resolved(), ckpt, algo, chunk, d_range) for chunk in chunks]
    results = [t for chunk in _pool_map(_eval_chunk, arg_sets, workers) for t in chunk]
    results.sort(key=lambda t: t[0])
    run = _run_id(algo, cfg, run_seed)
    suffix = "" if d_range is None else f"[d_range={d_range!r}]"
    rows: list[tuple] = []
    for s, total, steps in results:
        rows.append((run, phase, s, 0, f"episode_reward{suffix}", total))
        for k, r in enumerate(steps, start=1):
            rows.append((run, phase, s, k, f"step_reward{suffix}", r))
    return rows


def cmd_eval(cfg: RunConfig, args) -> int:
    out = Path(args.out or cfg.experiment.out_dir)
    algo = args.algo or cfg.agent.algo
    run_seed = cfg.experiment.seeds[0]
    ckpt = args.ckpt or (None if algo == "random"
                         else str(out / f"{algo}_seed{run_seed}.ckpt"))
    if ckpt is not None and not Path(ckpt).exists():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    rows = _eval_rows(cfg, algo, ckpt, run_seed, cfg.experiment.eval_seeds, "eval")
    write_resolved_config(cfg, out)
    write_metrics(out / f"eval_{algo}.csv", rows, cfg.config_hash())
    totals = [v for _, _, _, step, m, v in rows if m == "episode_reward" and step == 0]
    print(f"eval {algo}: n={len(totals)} mean={np.mean(totals):.4f} "
          f"median={np.median(totals):.4f}")
    return EXIT_OK


def cmd_search(cfg: RunConfig, args, kind: str) -> int:
    out = Path(args.out or cfg.experiment.out_dir)
    workers = cfg.experiment.effective_workers()
    seeds = list(cfg.experiment.eval_seeds)
    chunks = _chunks(seeds, workers)
    arg_sets = [(cfg.resolved(), kind, chunk) for chunk in chunks]
    results = [t for chunk in _pool_map(_search_chunk, arg_sets, workers) for t in chunk]
    results.sort(key=lambda t: t[0])
    rows: list[tuple] = []
    for s, total, steps, nodes, assignment in results:
        run = _run_id(kind, cfg, s)
        rows.append((run, kind, s, 0, "episode_reward", total))
        for k, r in enumerate(steps, start=1):
            rows.append((run, kind, s, k, "step_reward", r))
        rows.append((run, kind, s, 0, "nodes_expanded", nodes))
        for cell, tilt in assignment:
            rows.append((run, kind, s, 0, f"tilt[cell={cell}]", tilt))
    write_resolved_config(cfg, out)
    write_metrics(out / f"{kind}.csv", rows, cfg.config_hash())
    totals = [t for _, t, _, _, _ in results]
    print(f"{kind}: n={len(totals)} mean={np.mean(totals):.4f} "
          f"min={min(totals):.4f} max={max(totals):.4f}")
    return EXIT_OK


def cmd_stress(cfg: RunConfig, args) -> int:
    out = Path(args.out or cfg.experiment.out_dir)
    algo = args.algo or cfg.agent.algo
    run_seed = cfg.experiment.seeds[0]
    ckpt = args.ckpt or str(out / f"{algo}_seed{run_seed}.ckpt")
    if not Path(ckpt).exists():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    rows: list[tuple] = []
    run = _run_id(algo, cfg, run_seed)
    variances = []
    for d in cfg.experiment.d_ranges:
        d_rows = _eval_rows(cfg, algo, ckpt, run_seed,
                            cfg.experiment.eval_seeds, "stress", d_range=d)
        rows.extend(d_rows)
        totals = [v for _, _, _, step, m, v in d_rows if step == 0]
        var = float(np.var(totals))
        variances.append((d, var))
        rows.append((run, "stress", 0, 0, f"reward_variance[d_range={d!r}]", var))
    write_resolved_config(cfg, out)
    write_metrics(out / f"stress_{algo}.csv", rows, cfg.config_hash())
    for d, var in variances:
        print(f"stress {algo} d_range={d:g}: reward variance {var:.6f}")
    return EXIT_OK


def cmd_tables(cfg: RunConfig, args) -> int:
    c = args.cells
    p = args.p_target
    prob = agent_mod.episode_success_probability(c)
    print(f"cells C={c}: compliant-episode probability {prob:.6e} "
          f"(1 in {1.0 / prob:.2f})")
    print(f"eta schedule (p_target={p}):")
    for step, eta in enumerate(agent_mod.eta_schedule(c, p), start=1):
        print(f"  step {step:2d}: eta = {eta:.6f}")
    table = cfg.reward.cqi_table()
    print("cqi | sinr_min_db | modulation | code_rate | efficiency")
    for cqi, thr, mod, rate, eff in zip(table.cqis, table.thresholds,
                                        table.modulations, table.code_rates,
                                        table.efficiencies):
        print(f" {cqi:2d} | {thr:11.1f} | {mod:10s} | {rate:9.2f} | {eff:10.4f}")
    return EXIT_OK


# -- argument handling --------------------------------------------------------

class ConfigError(ValueError):
    pass


def _parse_seeds(text: str) -> list[int]:
    """'3' | '0,4,7' | '0..49' (inclusive)."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(tok) for tok in text.split(",") if tok]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tiltlab",
        description="Downtilt optimization over synthetic measurement maps.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON run config")
    common.add_argument("--seed", type=int, help="single experiment seed")
    common.add_argument("--seeds", help="seed list: '0,1,2' or '0..49'")
    common.add_argument("--out", help="output directory (default from config)")
    common.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[common], help="write RSRP grids")
    sub.add_parser("synthesize", parents=[common], help="write pixel dataset")
    p_train = sub.add_parser("train", parents=[common], help="train agents")
    p_train.add_argument("--algo", choices=["dw_eta", "eps_greedy"])
    p_eval = sub.add_parser("eval", parents=[common], help="greedy evaluation")
    p_eval.add_argument("--algo", choices=["dw_eta", "eps_greedy", "random"])
    p_eval.add_argument("--ckpt", help="checkpoint path")
    sub.add_parser("bfs", parents=[common], help="best-first search baseline")
    sub.add_parser("oracle", parents=[common], help="exhaustive optimum")
    p_stress = sub.add_parser("stress", parents=[common],
                              help="evaluation under traffic perturbation")
    p_stress.add_argument("--algo", choices=["dw_eta", "eps_greedy"])
    p_stress.add_argument("--ckpt", help="checkpoint path")
    p_tab = sub.add_parser("tables", parents=[common], help="print lookup tables")
    p_tab.add_argument("--cells", type=int, default=9)
    p_tab.add_argument("--p-target", type=float, default=0.5, dest="p_target")
    return parser


def _config_overrides(args) -> dict:
    over: dict = {}
    if args.seed is not None and args.seeds:
        raise ConfigError("--seed and --seeds are mutually exclusive")
    if args.seed is not None:
        over.setdefault("experiment", {})["seeds"] = [args.seed]
        if args.command in ("eval", "bfs", "oracle", "stress"):
            over["experiment"]["eval_seeds"] = [args.seed]
    if args.seeds:
        seeds = _parse_seeds(args.seeds)
        over.setdefault("experiment", {})
        if args.command in ("eval", "bfs", "oracle", "stress"):
            over["experiment"]["eval_seeds"] = seeds
        else:
            over["experiment"]["seeds"] = seeds
    if args.out:
        over.setdefault("experiment", {})["out_dir"] = args.out
    return over


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_run_config(args.config, overrides=_config_overrides(args))
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "generate":
            return cmd_generate(cfg, args)
        if args.command == "synthesize":
            return cmd_synthesize(cfg, args)
        if args.command == "train":
            return cmd_train(cfg, args)
        if args.command == "eval":
            return cmd_eval(cfg, args)
        if args.command in ("bfs", "oracle"):
            return cmd_search(cfg, args, args.command)
        if args.command == "stress":
            return cmd_stress(cfg, args)
        if args.command == "tables":
            return cmd_tables(cfg, args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

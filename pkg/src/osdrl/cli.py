"""Command-line front end: reproduces the tabular experiments (instability,
atom-growth histograms, Frozen Lake learning curves) and runs the property
suites. Canonical outputs are CSV; SVG charts accompany them.

Exit codes: 0 success, 1 property/runtime failure, 2 config error,
3 instability search exhausted (inconclusive).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .distributions import DistributionCollection, dirac
from .dp import (
    AtomBudgetExceeded,
    detect_oscillation,
    iterate,
    one_step_fixed_point_opt,
    projected_fixed_points,
    solve_q_star,
    trace_atoms_to_csv,
    trace_distances_to_csv,
)
from .learning import DEFAULT_EPS_RATE, ExplorationSchedule, StepSizeSchedule, run_learning
from .mdp import Policy, TabularMdp, make_frozen_lake, make_toy_mdp
from .operators import distr_bellman_eval, distr_bellman_opt, os_distr_eval, os_distr_opt, projected
from .svgplot import histogram_chart, line_chart
from .verify import run_properties

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INCONCLUSIVE = 3


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "instability": {
        "seed": 0,
        "steps": 200,
        "one_step_iterations": 60,
        "search_candidates": 1000,
        "grid": [0.0, 1.9, 2.1, 10.0],
        "out": "out",
    },
    "histograms": {
        "seed": 0,
        "steps": 4,
        "bins": 30,
        "atom_cap": 1_000_000,
        "out": "out",
    },
    "frozenlake": {
        "seed": 0,
        "steps": 100_000,
        "seeds": 100,
        "grid": [0.0, 10.0, 20.0],
        "alpha": 0.6,
        "eps_start": 1.0,
        "eps_end": 0.25,
        "eps_rate": DEFAULT_EPS_RATE,
        "goal_reward": 20.0,
        "slippery": True,
        "record_every": 1000,
        "track": [[4, 2], [10, 0]],
        "out": "out",
    },
    "verify": {
        "seed": 0,
        "fast": False,
        "out": "out",
    },
}


def load_config(command: str, config_path, overrides: dict) -> dict:
    """Defaults < config file < command-line flags; unknown keys rejected."""
    config = dict(DEFAULTS[command])
    if config_path is not None:
        try:
            with open(config_path) as fh:
                file_config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        if not isinstance(file_config, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in file_config.items():
            if key not in config:
                raise ConfigError(f"unknown config key {key!r} for command {command!r}")
            config[key] = value
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in config:
            raise ConfigError(f"option {key!r} does not apply to command {command!r}")
        config[key] = value
    _validate_config(command, config)
    return config


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def _validate_config(command: str, config: dict) -> None:
    _require(isinstance(config["seed"], int) and config["seed"] >= 0, "seed must be >= 0")
    if "steps" in config:
        _require(isinstance(config["steps"], int) and config["steps"] >= 0, "steps must be >= 0")
    if "grid" in config:
        grid = np.asarray(config["grid"], dtype=float)
        _require(grid.ndim == 1 and grid.size >= 2, "grid needs at least 2 points")
        _require(bool(np.all(np.diff(grid) > 0)), "grid must be strictly increasing")
    if command == "instability":
        _require(config["one_step_iterations"] >= 1, "one_step_iterations must be >= 1")
        _require(config["search_candidates"] >= 0, "search_candidates must be >= 0")
    if command == "histograms":
        _require(config["bins"] >= 1, "bins must be >= 1")
    if command == "frozenlake":
        _require(config["seeds"] >= 1, "seeds must be >= 1")
        _require(config["steps"] >= 1, "steps must be >= 1")
        _require(0.0 < config["alpha"] <= 1.0, "alpha must lie in (0, 1]")
        _require(config["goal_reward"] > 0, "goal_reward must be positive")
        _require(config["record_every"] >= 1, "record_every must be >= 1")
        for pair in config["track"]:
            _require(len(pair) == 2, "track entries must be [state, action] pairs")


def _out_dir(config: dict, experiment: str) -> Path:
    path = Path(config["out"]) / experiment
    path.mkdir(parents=True, exist_ok=True)
    return path


def _json_default(obj):
    if hasattr(obj, "item"):
        return obj.item()
    if hasattr(obj, "tolist"):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _perturbed_toy(r_a: float) -> TabularMdp:
    # tie-preserving family: rewards on the stochastic action sum to 3
    r_b = 3.0 - r_a
    kernel = np.zeros((2, 2, 2))
    reward = np.zeros((2, 2, 2))
    kernel[0, 0, 1] = 1.0
    reward[0, 0, 1] = 2.0
    kernel[0, 1, 1] = 0.5
    reward[0, 1, 1] = r_a
    kernel[0, 1, 0] = 0.5
    reward[0, 1, 0] = r_b
    kernel[1, :, 1] = 1.0
    return TabularMdp(kernel=kernel, reward=reward, discount=0.5)


def _start_collection(mdp: TabularMdp) -> DistributionCollection:
    return DistributionCollection.constant(mdp.n_states, mdp.n_actions, dirac(0.0))


def _categorical_start(mdp: TabularMdp, grid) -> DistributionCollection:
    from .distributions import cramer_project

    return DistributionCollection.constant(
        mdp.n_states, mdp.n_actions, cramer_project(dirac(grid[0]), grid)
    )


def _prob_stack(op, start: DistributionCollection, grid, n_steps: int) -> np.ndarray:
    """Iterate op and return the categorical probabilities of every iterate
    as an array of shape (n_steps + 1, S, A, K)."""
    s_n, a_n = start.n_states, start.n_actions
    stack = np.empty((n_steps + 1, s_n, a_n, len(grid)))
    current = start
    for n in range(n_steps + 1):
        for (x, a), dist in current:
            stack[n, x, a] = dist.probs
        if n < n_steps:
            current = op(current)
    return stack


def _stack_cycle_scan(stack: np.ndarray, grid, tol: float = 1e-6, max_period: int = 4):
    """Same periodicity scan as detect_oscillation, specialized to categorical
    prob stacks on a shared grid (sup-W1 via cumulative differences)."""
    gaps = np.diff(grid)
    cums = np.cumsum(stack, axis=3)[..., :-1]
    n = stack.shape[0]
    burn = n // 2
    recurrence = {}
    for q in range(1, max_period + 1):
        if n - q <= burn:
            recurrence[q] = math.nan
            continue
        diffs = np.abs(cums[burn : n - q] - cums[burn + q : n]) @ gaps
        recurrence[q] = float(diffs.max())
    if recurrence[1] < tol:
        return {"converged": True, "oscillating": False, "period": None, "recurrence": recurrence}
    period = next(
        (q for q in range(2, max_period + 1) if not math.isnan(recurrence[q]) and recurrence[q] < tol),
        None,
    )
    return {
        "converged": False,
        "oscillating": period is not None,
        "period": period,
        "recurrence": recurrence,
    }


def _stack_probs_csv(stack: np.ndarray, grid, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "entry_id", "k", "z_k", "prob"])
        for n in range(stack.shape[0]):
            for x in range(stack.shape[1]):
                for a in range(stack.shape[2]):
                    for k, z in enumerate(grid):
                        writer.writerow([n, f"x{x}_a{a}", k, repr(float(z)), repr(float(stack[n, x, a, k]))])


def _probs_csv(trace, grid, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "entry_id", "k", "z_k", "prob"])
        for n, mu in enumerate(trace.iterates):
            for (x, a), dist in mu:
                for k, (z, p) in enumerate(zip(grid, dist.probs)):
                    writer.writerow([n, f"x{x}_a{a}", k, repr(float(z)), repr(float(p))])


def _qfunc_csv(traces: dict, path) -> None:
    names = sorted(traces)
    length = max(len(traces[n].iterates) for n in names)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "entry_id"] + [f"q_{n}" for n in names])
        example = traces[names[0]].iterates[0]
        for it in range(length):
            for (x, a), _ in example:
                row = [it, f"x{x}_a{a}"]
                for n in names:
                    iters = traces[n].iterates
                    mu = iters[min(it, len(iters) - 1)]
                    row.append(repr(float(mu[x, a].mean())))
                writer.writerow(row)


def _plot_prob_lines(trace, grid, entry, path, title) -> None:
    xs = list(range(len(trace.iterates)))
    series = []
    for k, z in enumerate(grid):
        ys = [mu[entry].probs[k] for mu in trace.iterates]
        series.append((f"p(z={z:g})", xs, ys))
    line_chart(series, path, title=title, x_label="iteration", y_label="probability")


def cmd_instability(config: dict) -> int:
    grid = np.asarray(config["grid"], dtype=float)
    mdp = make_toy_mdp()
    q_star = solve_q_star(mdp, tol=1e-12)
    if abs(q_star[0, 0] - q_star[0, 1]) > 1e-9:
        raise ConfigError("instability experiment needs tied optimal actions")
    out = _out_dir(config, "instability")

    eta_star = projected_fixed_points(mdp, grid, tol=1e-10)
    os_op = projected(lambda m: os_distr_opt(m, mdp), grid)
    os_trace = iterate(os_op, _categorical_start(mdp, grid), config["one_step_iterations"], reference=eta_star)
    os_residual = os_trace.ref_distances[-1]
    os_converged = os_residual < 1e-8

    cdrl_op = projected(lambda m: distr_bellman_opt(m, mdp, tie_break="lowest"), grid)
    cdrl_trace = iterate(cdrl_op, _categorical_start(mdp, grid), config["steps"])
    cdrl_report = detect_oscillation(cdrl_trace)

    search = {"triggered": False, "candidates_tried": 0}
    perturbed_stack = None
    if not cdrl_report.oscillating and config["search_candidates"] > 0:
        rng = np.random.default_rng(config["seed"])
        search_steps = min(config["steps"], 140)
        for index in range(config["search_candidates"]):
            # proposals mix the full reward range with the near-gridpoint
            # window where tied means dither under rounding
            if rng.random() < 0.5:
                r_a = float(rng.uniform(0.0, 3.0))
            else:
                r_a = float(rng.uniform(grid[1] - 0.1, grid[-2] + 0.1))
            candidate = _perturbed_toy(r_a)
            q_cand = solve_q_star(candidate, tol=1e-12)
            search["candidates_tried"] = index + 1
            if abs(q_cand[0, 0] - q_cand[0, 1]) > 1e-9:
                continue  # tie broken by rounding; not a valid candidate
            op = projected(lambda m, _c=candidate: distr_bellman_opt(m, _c, tie_break="lowest"), grid)
            stack = _prob_stack(op, _categorical_start(candidate, grid), grid, search_steps)
            scan = _stack_cycle_scan(stack, grid)
            if scan["oscillating"]:
                search.update(
                    triggered=True,
                    candidate_index=index,
                    r_a=r_a,
                    r_b=3.0 - r_a,
                    period=scan["period"],
                    recurrence=scan["recurrence"][1],
                )
                perturbed_stack = stack
                break

    _probs_csv(os_trace, grid, out / "probs_onestep.csv")
    _probs_csv(cdrl_trace, grid, out / "probs_cdrl.csv")
    _qfunc_csv({"onestep": os_trace, "cdrl": cdrl_trace}, out / "qfunc.csv")
    trace_distances_to_csv(os_trace, out / "distances_onestep.csv")
    for x, a in ((0, 0), (0, 1)):
        _plot_prob_lines(
            cdrl_trace, grid, (x, a), out / f"cdrl_probs_x{x}_a{a}.svg",
            f"projected full control at (x{x + 1}, a{a + 1})",
        )
        _plot_prob_lines(
            os_trace, grid, (x, a), out / f"onestep_probs_x{x}_a{a}.svg",
            f"projected one-step control at (x{x + 1}, a{a + 1})",
        )
        xs_full = list(range(len(cdrl_trace.iterates)))
        xs_os = list(range(len(os_trace.iterates)))
        line_chart(
            [
                ("cdrl", xs_full, [mu[x, a].mean() for mu in cdrl_trace.iterates]),
                ("one-step", xs_os, [mu[x, a].mean() for mu in os_trace.iterates]),
            ],
            out / f"qfunc_x{x}_a{a}.svg",
            title=f"Q at (x{x + 1}, a{a + 1})",
            x_label="iteration",
            y_label="Q",
        )
    if perturbed_stack is not None:
        _stack_probs_csv(perturbed_stack, grid, out / "probs_cdrl_perturbed.csv")
        xs = list(range(perturbed_stack.shape[0]))
        for x, a in ((0, 0), (0, 1)):
            line_chart(
                [
                    (f"p(z={z:g})", xs, perturbed_stack[:, x, a, k].tolist())
                    for k, z in enumerate(grid)
                ],
                out / f"cdrl_perturbed_probs_x{x}_a{a}.svg",
                title=f"perturbed instance at (x{x + 1}, a{a + 1})",
                x_label="iteration",
                y_label="probability",
            )

    oscillation_shown = bool(cdrl_report.oscillating or search["triggered"])
    report = {
        "one_step": {
            "converged": bool(os_converged),
            "residual": float(os_residual),
            "iterations": config["one_step_iterations"],
        },
        "cdrl_default": {
            "oscillating": bool(cdrl_report.oscillating),
            "converged": bool(cdrl_report.converged),
            "period": cdrl_report.period,
            "max_step_tail": float(cdrl_report.max_step_tail),
        },
        "search": search,
        "conclusive": oscillation_shown,
    }
    _write_json(out / "report.json", report)
    print(f"one-step branch: converged={os_converged} residual={os_residual:.3e}")
    print(
        "cdrl branch: default "
        + ("oscillates" if cdrl_report.oscillating else "converged")
        + (
            f"; search triggered at candidate {search.get('candidate_index')} "
            f"(r_a={search.get('r_a'):.6f}, period={search.get('period')})"
            if search["triggered"]
            else f"; search tried {search['candidates_tried']} candidates"
        )
    )
    if not os_converged:
        return EXIT_FAILURE
    return EXIT_OK if oscillation_shown else EXIT_INCONCLUSIVE


def cmd_histograms(config: dict) -> int:
    mdp = make_toy_mdp()
    pi = Policy.uniform(2, 2)
    out = _out_dir(config, "histograms")
    n_steps = config["steps"]
    try:
        full_trace = iterate(
            lambda m: distr_bellman_eval(m, mdp, pi),
            _start_collection(mdp),
            n_steps,
            atom_cap=config["atom_cap"],
        )
    except AtomBudgetExceeded as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    os_trace = iterate(lambda m: os_distr_eval(m, mdp, pi), _start_collection(mdp), n_steps)

    trace_atoms_to_csv(full_trace, out / "atoms_full.csv")
    trace_atoms_to_csv(os_trace, out / "atoms_onestep.csv")

    with open(out / "atom_counts.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["operator", "iteration", "entry_id", "n_atoms"])
        for name, trace in (("full", full_trace), ("onestep", os_trace)):
            for n, mu in enumerate(trace.iterates):
                for (x, a), dist in mu:
                    writer.writerow([name, n, f"x{x}_a{a}", dist.atoms.size])

    bins = config["bins"]
    snapshots = [j for j in (0, 2, 4) if j <= n_steps]
    with open(out / "histograms.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["operator", "iteration", "entry_id", "bin_left", "bin_right", "mass"])
        for j in snapshots:
            for (x, a) in ((0, 0), (0, 1), (1, 0), (1, 1)):
                full_d = full_trace.iterates[j][x, a]
                os_d = os_trace.iterates[j][x, a]
                lo = min(full_d.atoms[0], os_d.atoms[0])
                hi = max(full_d.atoms[-1], os_d.atoms[-1])
                if hi == lo:
                    hi = lo + 1.0
                edges = np.linspace(lo, hi, bins + 1)
                series = []
                for name, dist in (("full", full_d), ("onestep", os_d)):
                    masses, _ = np.histogram(dist.atoms, bins=edges, weights=dist.weights)
                    for left, right, mass in zip(edges[:-1], edges[1:], masses):
                        writer.writerow(
                            [name, j, f"x{x}_a{a}", repr(float(left)), repr(float(right)), repr(float(mass))]
                        )
                    series.append((name, edges, masses))
                histogram_chart(
                    series,
                    out / f"hist_x{x}_a{a}_iter{j}.svg",
                    title=f"return distribution at (x{x + 1}, a{a + 1}), iteration {j}",
                    x_label="return",
                )
    counts = {
        name: [trace.iterates[j].max_atoms_per_entry() for j in snapshots]
        for name, trace in (("full", full_trace), ("onestep", os_trace))
    }
    _write_json(out / "report.json", {"snapshots": snapshots, "max_atoms_per_entry": counts})
    print(f"atom counts per entry (max) at iterations {snapshots}: {counts}")
    return EXIT_OK


def cmd_frozenlake(config: dict) -> int:
    env = make_frozen_lake(slippery=config["slippery"], goal_reward=config["goal_reward"])
    grid = np.asarray(config["grid"], dtype=float)
    out = _out_dir(config, "frozenlake")
    q_star = solve_q_star(env.mdp, tol=1e-10)
    try:
        reference = projected_fixed_points(env.mdp, grid, tol=1e-10)
    except Exception:
        reference = None  # grid does not cover the targets; W1 column stays nan
    schedule = StepSizeSchedule.constant(config["alpha"])
    exploration = ExplorationSchedule(
        eps_start=config["eps_start"], eps_end=config["eps_end"], rate=config["eps_rate"]
    )
    track = [tuple(pair) for pair in config["track"]]
    seeds = list(range(config["seed"], config["seed"] + config["seeds"]))
    records = []
    for seed in seeds:
        records.append(
            run_learning(
                env,
                schedule,
                exploration,
                grid,
                "control",
                config["steps"],
                seed=seed,
                reference=reference,
                reference_q=q_star,
                record_every=config["record_every"],
                track=track,
                record_q=True,
            )
        )

    with open(out / "learning.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step", "seed", "w1_to_reference", "q_error_sup", "range_violations", "epsilon", "mean_alpha"]
        )
        for rec in records:
            for i, step in enumerate(rec.steps):
                w1 = rec.w1_to_reference[i] if rec.w1_to_reference is not None else math.nan
                writer.writerow(
                    [
                        int(step),
                        rec.seed,
                        repr(float(w1)),
                        repr(float(rec.q_error_sup[i])),
                        int(rec.range_violations[i]),
                        repr(float(rec.epsilon[i])),
                        repr(float(rec.mean_alpha[i])),
                    ]
                )

    steps = records[0].steps
    for x, a in track:
        rows = np.stack([rec.tracked[(x, a)] for rec in records])  # (seeds, records, K)
        averaged = rows.mean(axis=0)
        with open(out / f"probs_x{x}_a{a}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "seed", "k", "z_k", "prob"])
            for rec in records:
                for i, step in enumerate(steps):
                    for k, z in enumerate(grid):
                        writer.writerow(
                            [int(step), rec.seed, k, repr(float(z)), repr(float(rec.tracked[(x, a)][i, k]))]
                        )
        line_chart(
            [(f"p(z={z:g})", steps.tolist(), averaged[:, k].tolist()) for k, z in enumerate(grid)],
            out / f"probs_x{x}_a{a}.svg",
            title=f"seed-averaged probabilities at (x{x + 1}, a{a + 1})",
            x_label="step",
            y_label="probability",
        )

    # Q-error of the seed-averaged Q-function (one curve per run set)
    q_mean = np.mean([rec.q_means for rec in records], axis=0)  # (records, S, A)
    err_sq = np.sum((q_mean - q_star[None]) ** 2, axis=(1, 2))
    mean_err_sq = np.mean([rec.q_error_sq for rec in records], axis=0)
    with open(out / "q_error.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "q_error_sq_of_mean", "mean_q_error_sq"])
        for i, step in enumerate(steps):
            writer.writerow([int(step), repr(float(err_sq[i])), repr(float(mean_err_sq[i]))])
    line_chart(
        [("||Q_avg - Q*||^2", steps.tolist(), err_sq.tolist())],
        out / "q_error.svg",
        title="squared error of the seed-averaged Q",
        x_label="step",
        y_label="error",
    )

    nonzero = steps > 0
    first_idx = int(np.argmax(nonzero))
    report = {
        "seeds": len(seeds),
        "steps": config["steps"],
        "q_error_sq_of_mean_first": float(err_sq[first_idx]),
        "q_error_sq_of_mean_last": float(err_sq[-1]),
        "normalized": bool(
            max(
                float(np.max(np.abs(rec.tracked[pair].sum(axis=1) - 1.0)))
                for rec in records
                for pair in track
            )
            <= 1e-9
        ),
    }
    _write_json(out / "report.json", report)
    print(
        f"frozenlake: {len(seeds)} seeds x {config['steps']} steps; "
        f"||Q_avg - Q*||^2 {err_sq[first_idx]:.3f} -> {err_sq[-1]:.3f}"
    )
    return EXIT_OK


def cmd_verify(config: dict) -> int:
    out = _out_dir(config, "verify")
    results, bench = run_properties(seed=config["seed"], fast=config["fast"])
    passed = all(r.passed for r in results)
    report = {
        "seed": config["seed"],
        "fast": config["fast"],
        "passed": passed,
        "properties": [r.to_json() for r in results],
        "microbenchmark": bench.to_json(),
    }
    _write_json(out / "report.json", report)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  cases={r.cases}  max_violation={r.max_violation:.3e}")
    print(("all properties passed" if passed else "PROPERTY FAILURES (see report.json)"))
    return EXIT_OK if passed else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="osdrl",
        description="Tabular distributional dynamic programming and learning experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("instability", "projected control: full-operator instability vs one-step convergence"),
        ("histograms", "atom growth of the full operator vs the one-step operator"),
        ("frozenlake", "tabular learning curves on Frozen Lake"),
        ("verify", "run all property suites and the target microbenchmark"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", type=str, default=None, help="JSON config file")
        cmd.add_argument("--seed", type=int, default=None, help="base random seed")
        cmd.add_argument("--steps", type=int, default=None, help="iterations / learning steps")
        cmd.add_argument("--out", type=str, default=None, help="output directory")
    return parser


COMMANDS = {
    "instability": cmd_instability,
    "histograms": cmd_histograms,
    "frozenlake": cmd_frozenlake,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "steps": args.steps, "out": args.out}
    if args.command == "verify":
        overrides.pop("steps")
    try:
        config = load_config(args.command, args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

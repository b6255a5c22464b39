"""Command-line scenario runner.

    ceic run SCENARIO [--out DIR] [--dt STEP] [--seed N]
    ceic compare SCENARIO_A SCENARIO_B [--out DIR] [--dt STEP] [--seed N]

``run`` exits 0 when the simulation completes, 2 when it diverges and 1 on
a configuration error (no artifacts are written in that case).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .cascade import build_chain, verify_conditions
from .config import ConfigError, load_scenario, serialize_scenario
from .controllers import eic_rank_diagnostic
from .dynamics import StateVector
from .sim import DivergenceEvent, ErrorMetrics, TrajectoryLog, run_simulation, steady_state_errors

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


def _condition_states(scenario, model, seed, count=8):
    """Initial state plus ``count`` seeded perturbations of it."""
    s0 = scenario.initial_state()
    rng = np.random.default_rng(seed)
    states = [s0]
    for _ in range(count):
        dq = rng.uniform(-0.05, 0.05, model.dim)
        states.append(StateVector(s0.q + dq, s0.qdot, 0.0))
    return states


def _status_line(log_end, events, duration):
    for ev in events:
        if ev.reason.startswith("divergence"):
            return f"diverged at t={ev.t:.3f} ({ev.reason.split(': ', 1)[1]})"
    return f"completed (t_end={duration:.3f})"


def build_summary(scenario, name, columns, events, metrics, rank):
    """Summary text from run artifacts (shared by ``run`` and regeneration)."""
    ctl = scenario.controller.type.upper()
    t = columns["t"]
    lemma = columns.get("lemma1")
    lemma_txt = "n/a"
    if lemma is not None and np.any(np.isfinite(lemma)):
        lemma_txt = f"{np.nanmax(lemma):.3e}"
    bem_fail = sum(1 for ev in events if ev.reason.startswith("bem"))
    lines = [
        f"scenario: {name}",
        f"model: {scenario.system.model}   controller: {ctl}",
        f"{ctl}: {_status_line(t[-1] if len(t) else 0.0, events, scenario.simulation.duration)}",
        f"logged samples: {len(t)}",
        f"BEM non-convergence steps: {bem_fail}",
        f"max Lemma-1 residual (logged samples): {lemma_txt}",
        f"EIC rank(D_ua D_ua^+) at initial state: {rank.rank} (deficiency {rank.deficiency})",
        f"steady window: [{scenario.simulation.steady_start:g}, {scenario.simulation.steady_end:g}] s",
    ]
    if metrics is None:
        lines.append("steady-state errors: window not reached")
    else:
        lines.append("steady-state errors (mean ± std of |e|):")
        lines.append(metrics.table())
    return "\n".join(lines) + "\n"


def plot_script(labels, unact_labels):
    """gnuplot script plotting the cart against its reference and links against their BEMs."""
    rows = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set multiplot layout 3,1",
        "set ylabel 'cart'",
        f"plot 'trajectory.csv' using 't':'q_{labels[0]}' with lines, "
        "'' using 't':'qe0_0' with lines dt 2",
        "set ylabel 'links (rad)'",
        "plot " + ", ".join(f"'trajectory.csv' using 't':'q_{lab}' with lines"
                            for lab in unact_labels),
        "set ylabel 'input'",
        "set xlabel 't (s)'",
        "plot 'trajectory.csv' using 't':'u0' with lines",
        "unset multiplot",
    ]
    return "\n".join(rows) + "\n"


def _write_events(path, events):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "reason"])
        for ev in events:
            w.writerow([repr(float(ev.t)), ev.reason])


def _read_events(path):
    with open(path, newline="") as fh:
        return [DivergenceEvent(float(r["t"]), r["reason"]) for r in csv.DictReader(fh)]


def execute(scenario, outdir, name="scenario", seed=0):
    """Run ``scenario`` and write its artifacts into ``outdir``.

    Returns ``(exit_code, log, metrics)``.
    """
    model = scenario.model()
    controller = scenario.controller_instance(model)
    cfg = scenario.sim_config()
    chain = controller.chain
    report = verify_conditions(chain, _condition_states(scenario, model, seed))
    rank = eic_rank_diagnostic(model, scenario.initial_state())
    log = run_simulation(model, controller, cfg, scenario.initial_state())
    metrics = None
    if not log.diverged and np.any(log.window(*cfg.steady_window)):
        metrics = steady_state_errors(log, cfg)

    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "scenario.cfg"), "w") as fh:
        fh.write(serialize_scenario(scenario))
    log.to_csv(os.path.join(outdir, "trajectory.csv"))
    _write_events(os.path.join(outdir, "events.csv"), log.events)
    if metrics is not None:
        metrics.to_csv(os.path.join(outdir, "metrics.csv"))
    else:
        with open(os.path.join(outdir, "metrics.csv"), "w") as fh:
            fh.write("coordinate,mean_abs,std_abs,amplitude,relative_mean_pct,relative_std_pct\n")
    with open(os.path.join(outdir, "conditions.txt"), "w") as fh:
        fh.write(report.summary() + "\n\n" + report.to_csv())
    labels = log.meta["labels"]
    unact = [labels[i] for i in model.partition.unactuated]
    with open(os.path.join(outdir, "plot.gp"), "w") as fh:
        fh.write(plot_script(labels, unact))
    summary = build_summary(scenario, name, log.columns, log.events, metrics, rank)
    with open(os.path.join(outdir, "summary.txt"), "w") as fh:
        fh.write(summary)
    return (EXIT_DIVERGED if log.diverged else EXIT_OK), log, metrics


def regenerate_summary(outdir, name="scenario"):
    """Rebuild ``summary.txt`` text from the artifacts alone (no simulation)."""
    scenario = load_scenario(os.path.join(outdir, "scenario.cfg"))
    log = TrajectoryLog.from_csv(os.path.join(outdir, "trajectory.csv"))
    events = _read_events(os.path.join(outdir, "events.csv"))
    with open(os.path.join(outdir, "metrics.csv")) as fh:
        has_rows = len(fh.read().strip().splitlines()) > 1
    metrics = ErrorMetrics.from_csv(os.path.join(outdir, "metrics.csv")) if has_rows else None
    rank = eic_rank_diagnostic(scenario.model(), scenario.initial_state())
    return build_summary(scenario, name, log.columns, events, metrics, rank)


def _load(path, dt):
    scenario = load_scenario(path).validate()
    if dt is not None:
        scenario = scenario.with_dt(dt).validate()
    return scenario


def cmd_run(args):
    try:
        scenario = _load(args.scenario, args.dt)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = args.out or scenario.output.directory
    name = os.path.splitext(os.path.basename(args.scenario))[0]
    code, log, _ = execute(scenario, outdir, name=name, seed=args.seed)
    with open(os.path.join(outdir, "summary.txt")) as fh:
        print(fh.read(), end="")
    return code


def compare_summary(name_a, sc_a, res_a, name_b, sc_b, res_b):
    (code_a, log_a, met_a), (code_b, log_b, met_b) = res_a, res_b
    ctl_a, ctl_b = sc_a.controller.type.upper(), sc_b.controller.type.upper()
    dur_a, dur_b = sc_a.simulation.duration, sc_b.simulation.duration
    lines = [
        f"A = {name_a} ({ctl_a}), B = {name_b} ({ctl_b})",
        f"{ctl_a}: {_status_line(None, log_a.events, dur_a)} / "
        f"{ctl_b}: {_status_line(None, log_b.events, dur_b)}",
    ]
    if met_a is not None and met_b is not None and met_a.names == met_b.names:
        lines.append(f"{'coordinate':>12}{'mean|e| A':>16}{'mean|e| B':>16}{'B - A':>16}"
                     f"{'rel% A':>10}{'rel% B':>10}")
        for k, n in enumerate(met_a.names):
            lines.append(f"{n:>12}{met_a.mean[k]:>16.6g}{met_b.mean[k]:>16.6g}"
                         f"{met_b.mean[k] - met_a.mean[k]:>16.6g}"
                         f"{met_a.relative_mean[k]:>10.2f}{met_b.relative_mean[k]:>10.2f}")
    else:
        lines.append("steady-state comparison unavailable (a run did not reach the window)")
    return "\n".join(lines) + "\n"


def cmd_compare(args):
    try:
        sc_a = _load(args.scenario_a, args.dt)
        sc_b = _load(args.scenario_b, args.dt)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if sc_a.system != sc_b.system or sc_a.reference != sc_b.reference:
        print("config error: scenarios must share [system] and [reference]", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or sc_a.output.directory
    name_a = os.path.splitext(os.path.basename(args.scenario_a))[0]
    name_b = os.path.splitext(os.path.basename(args.scenario_b))[0]
    if name_a == name_b:
        name_a, name_b = name_a + "_A", name_b + "_B"
    res_a = execute(sc_a, os.path.join(out, name_a), name=name_a, seed=args.seed)
    res_b = execute(sc_b, os.path.join(out, name_b), name=name_b, seed=args.seed)
    text = compare_summary(name_a, sc_a, res_a, name_b, sc_b, res_b)
    with open(os.path.join(out, "compare_summary.txt"), "w") as fh:
        fh.write(text)
    model = sc_a.model()
    labels = res_a[1].meta["labels"]
    with open(os.path.join(out, "compare.gp"), "w") as fh:
        fh.write("set datafile separator ','\nset key autotitle columnhead\n"
                 f"set multiplot layout {model.dim},1\n")
        for lab in labels:
            fh.write(f"plot '{name_a}/trajectory.csv' using 't':'q_{lab}' with lines title "
                     f"'{name_a}', '{name_b}/trajectory.csv' using 't':'q_{lab}' with lines "
                     f"title '{name_b}'\n")
        fh.write("unset multiplot\n")
    print(text, end="")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="ceic", description="Cascaded EIC balance-control scenarios")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help="output directory (overrides [output] directory)")
        sp.add_argument("--dt", type=float, help="override the integration step")
        sp.add_argument("--seed", type=int, default=0,
                        help="seed for the randomized condition checks")

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("scenario")
    common(r)
    r.set_defaults(func=cmd_run)
    c = sub.add_parser("compare", help="simulate two scenarios side by side")
    c.add_argument("scenario_a")
    c.add_argument("scenario_b")
    common(c)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command line front end.

    sim run       --config C [--out DIR] [--seed N] [--run-index I]
    sim ensemble  --config C [--out DIR] [--seed N] [--runs R] [--jobs J]
    sim analyze   --config C [--ensemble PATH] [--out DIR]
    sim privacy   --config C [--out DIR] [--seed N]
    sim plot      --config C [--ensemble PATH] [--out DIR] [--kinds ...]

Exit codes: 0 success, 2 configuration or input-file problem, 3 engine
failure (exhausted centerpoint search, infeasible schedule policy),
4 an analysis or privacy check did not pass.

Every failure prints a one-line JSON error record to stderr so callers
can tell what went wrong without scraping human text.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import analysis, config, engine, geometry, privacy, records
from .errors import (ConfigError, DomainError, InfeasiblePolicy, PpvcError,
                     RecordError, SearchExhausted)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ENGINE = 3
EXIT_CHECK = 4

TRANSMITTED_GAP_TOL = 1e-9


def _error_record(kind: str, exc: Exception) -> None:
    rec = {"error": kind, "message": str(exc)}
    fld = getattr(exc, "field", None)
    if fld:
        rec["field"] = fld
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)


def _prepare(args):
    exp = config.load_config(args.config)
    sim = exp.sim
    if getattr(args, "seed", None) is not None:
        sim = dataclasses.replace(sim, seed=args.seed)
        exp = dataclasses.replace(exp, sim=sim)
    if getattr(args, "runs", None) is not None:
        exp = dataclasses.replace(exp, runs=args.runs)
    out = args.out or "%s_out" % exp.name
    os.makedirs(out, exist_ok=True)
    return exp, out


def cmd_run(args) -> int:
    exp, out = _prepare(args)
    sim = exp.sim
    result = engine.run(
        sim, run_index=args.run_index,
        keep_trajectory="trajectories" in exp.keep,
        keep_transmitted="transmitted" in exp.keep)
    records.write_run(os.path.join(out, "run.ndrec"), result,
                      config_digest=engine.config_digest(sim))
    if result.trajectory is not None:
        records.write_trajectory(os.path.join(out, "traj.ndrec"), result)
    if result.transmitted is not None:
        records.write_transmitted(os.path.join(out, "transmitted.ndrec"),
                                  result)
    print("run %d finished: %d normal agents, %d iterations -> %s"
          % (args.run_index, sim.n_normal, sim.T, out))
    return EXIT_OK


def cmd_ensemble(args) -> int:
    exp, out = _prepare(args)
    ens = analysis.run_ensemble(exp.sim, exp.runs, jobs=args.jobs)
    records.write_ensemble(os.path.join(out, "ensemble.ndrec"), ens,
                           exp.sim.seed)
    mean = ens.finals.mean(axis=0)
    hull = geometry.convex_hull(engine.resolve_initials(exp.sim))
    inside = hull.contains(mean, tol=1e-6)
    lines = [
        "ensemble summary",
        "runs %d" % ens.n_runs,
        "mean %s" % " ".join(records.fmt(v) for v in mean),
        "mean_in_initial_hull %s" % ("yes" if inside else "no"),
    ]
    if ens.n_runs < 2:
        lines.append("covariance refused: need at least 2 runs")
    records.write_lines(os.path.join(out, "summary.txt"), lines)
    for ln in lines[1:]:
        print(ln)
    return EXIT_OK


def _render_plots(exp, ens, out) -> None:
    from . import plots  # matplotlib import deferred to first use

    initials = engine.resolve_initials(exp.sim)
    if "initials" in exp.plots:
        plots.plot_initials(initials,
                            os.path.join(out, "fig_initials.svg"))
    if "finals_hulls" in exp.plots:
        hulls = [("initial hull", geometry.convex_hull(initials))]
        if exp.margins is not None:
            _, widened = geometry.build_swept_hulls(
                initials, sorted(exp.margins), exp.margins)
            hulls.append(("widened hull", widened))
        plots.plot_finals(ens.finals, hulls,
                          os.path.join(out, "fig_finals_hulls.svg"))
    if "mahalanobis" in exp.plots:
        plots.plot_mahalanobis(ens.finals, exp.chis or (2.0, 3.0, 4.0, 5.0),
                               os.path.join(out, "fig_mahalanobis.svg"))


def cmd_analyze(args) -> int:
    exp, out = _prepare(args)
    sim = exp.sim
    path = args.ensemble or os.path.join(out, "ensemble.ndrec")
    ens, _seed = records.read_ensemble(path)
    if ens.config_digest and ens.config_digest != engine.config_digest(sim):
        raise ConfigError(
            "ensemble %s was produced by a different configuration" % path,
            field="ensemble")

    wants = bool(exp.chis) or exp.margins is not None
    if not wants:
        notice = "no analyses requested in %s; nothing to do" % args.config
        records.write_lines(os.path.join(out, "report.txt"), [notice])
        print(notice)
        return EXIT_OK

    lines = []
    blob = {"runs": ens.n_runs, "digest": ens.config_digest}
    ok = True

    mean = ens.finals.mean(axis=0)
    initials = engine.resolve_initials(sim)
    hull = geometry.convex_hull(initials)
    mean_inside = bool(hull.contains(mean, tol=1e-6))
    lines.append("mean %s" % " ".join(records.fmt(v) for v in mean))
    lines.append("mean_in_initial_hull %s" % ("yes" if mean_inside else "no"))
    blob["mean"] = [float(v) for v in mean]
    blob["mean_in_initial_hull"] = mean_inside

    if exp.chis:
        cov_rep = analysis.mahalanobis_coverage(ens, exp.chis,
                                                slack=exp.coverage_slack)
        lines += cov_rep.lines()
        ok = ok and cov_rep.all_passed
        blob["coverage"] = {
            "chis": list(cov_rep.chis), "empirical": list(cov_rep.empirical),
            "floors": list(cov_rep.floors), "passes": list(cov_rep.passes),
            "d_eff": cov_rep.d_eff}

    if ens.n_runs >= 2 and sim.noise.scale > 0:
        var_rep = analysis.variance_bound_check(ens, sim.noise.scale,
                                                sim.noise.decay,
                                                slack=exp.variance_slack)
        lines += var_rep.lines()
        ok = ok and var_rep.all_passed
        blob["variance"] = {"variances": list(var_rep.variances),
                            "bound": var_rep.bound,
                            "passes": list(var_rep.passes)}

    if exp.margins is not None:
        mem_rep = analysis.hull_membership_report(
            initials, sorted(exp.margins), exp.margins, sim.noise.scale,
            sim.noise.decay, ens, slack=exp.membership_slack)
        lines += mem_rep.lines()
        ok = ok and mem_rep.passed
        blob["membership"] = {
            "noisy_dims": list(mem_rep.noisy_dims),
            "margins": list(mem_rep.margins),
            "l_values": list(mem_rep.l_values),
            "factors": list(mem_rep.factors),
            "floor": mem_rep.floor, "membership": mem_rep.membership,
            "hausdorff": mem_rep.dh_initial_widened,
            "hausdorff_bound": mem_rep.dh_bound,
            "passed": mem_rep.passed}

    blob["all_passed"] = bool(ok)
    records.write_lines(os.path.join(out, "report.txt"), lines)
    records.write_json(os.path.join(out, "report.json"), blob)
    if exp.plots:
        _render_plots(exp, ens, out)
    for ln in lines:
        print(ln)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_privacy(args) -> int:
    exp, out = _prepare(args)
    sim = exp.sim
    if not exp.wants_privacy:
        raise ConfigError("config requests no privacy audit "
                          "(set privacy.alphas and shifts)", field="privacy")
    params = privacy.CgpParams(n_agents=sim.n, scale=sim.noise.scale,
                               decay=sim.noise.decay,
                               gamma_low=sim.gamma.low)
    shifts = config.privacy_shifts(exp)
    worst = {a: None for a in exp.alphas}
    max_gap = 0.0
    defect = False
    for idx in range(shifts.shape[0]):
        base, shifted, trace = engine.run_coupled(sim, shifts[idx],
                                                  run_index=idx)
        gap = float(np.max(np.abs(base.transmitted - shifted.transmitted)))
        max_gap = max(max_gap, gap)
        if gap > TRANSMITTED_GAP_TOL:
            defect = True
        for alpha in exp.alphas:
            audit = privacy.audit_divergence(alpha, shifts[idx], trace,
                                             params)
            prev = worst[alpha]
            if prev is None or audit.value * prev.bound > prev.value * audit.bound:
                worst[alpha] = audit
    report = privacy.privacy_report(
        params, audits=[worst[a] for a in exp.alphas],
        dp_horizons=exp.dp_horizons, dp_ell=exp.max_shift,
        dp_delta=exp.dp_delta, transmitted_gap=max_gap)
    lines = report.lines()
    lines.insert(1, "shift_matrices %d" % shifts.shape[0])
    if defect:
        lines.append("DEFECT: transmitted sequences diverged beyond %g; "
                     "the audit does not describe this implementation"
                     % TRANSMITTED_GAP_TOL)
    records.write_lines(os.path.join(out, "report_privacy.txt"), lines)
    records.write_json(os.path.join(out, "privacy.json"), {
        "rho": report.rho, "dist": report.dist,
        "transmitted_gap": max_gap, "defect": defect,
        "audits": [{"alpha": a.alpha, "value": a.value, "bound": a.bound,
                    "passed": a.passed} for a in report.audits],
        "dp": {"horizons": list(report.dp_horizons),
               "epsilons": list(report.dp_epsilons),
               "ell": report.dp_ell, "delta": report.dp_delta},
        "all_passed": report.all_passed and not defect})
    for ln in lines:
        print(ln)
    return EXIT_OK if report.all_passed and not defect else EXIT_CHECK


def cmd_plot(args) -> int:
    exp, out = _prepare(args)
    kinds = tuple(args.kinds) if args.kinds else exp.plots
    if not kinds:
        raise ConfigError("no plot kinds requested", field="plots")
    exp = dataclasses.replace(exp, plots=kinds)
    path = args.ensemble or os.path.join(out, "ensemble.ndrec")
    ens, _seed = records.read_ensemble(path)
    if ens.n_runs < 1:
        raise RecordError("%s holds an empty ensemble" % path)
    _render_plots(exp, ens, out)
    print("wrote %s" % ", ".join(sorted("fig_%s.svg" % k for k in kinds)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sim",
        description="Simulate and analyze noisy resilient vector consensus.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", required=True, help="YAML experiment file")
        p.add_argument("--out", default=None, help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=None,
                           help="override the config seed")

    p = sub.add_parser("run", help="execute one seeded run")
    common(p)
    p.add_argument("--run-index", type=int, default=0)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("ensemble", help="execute a Monte Carlo ensemble")
    common(p)
    p.add_argument("--runs", type=int, default=None,
                   help="override the config run count")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes (1 = in-process)")
    p.set_defaults(fn=cmd_ensemble)

    p = sub.add_parser("analyze", help="evaluate accuracy reports")
    common(p, seed=False)
    p.add_argument("--ensemble", default=None,
                   help="ensemble record (default: <out>/ensemble.ndrec)")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("privacy", help="audit the privacy guarantees")
    common(p)
    p.set_defaults(fn=cmd_privacy)

    p = sub.add_parser("plot", help="render figures from records")
    common(p, seed=False)
    p.add_argument("--ensemble", default=None)
    p.add_argument("--kinds", nargs="*", default=None,
                   choices=list(config.PLOT_CHOICES))
    p.set_defaults(fn=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, RecordError) as exc:
        _error_record(type(exc).__name__, exc)
        return EXIT_CONFIG
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        _error_record("IOError", exc)
        return EXIT_CONFIG
    except DomainError as exc:
        _error_record("DomainError", exc)
        return EXIT_CONFIG
    except (SearchExhausted, InfeasiblePolicy) as exc:
        _error_record(type(exc).__name__, exc)
        return EXIT_ENGINE
    except PpvcError as exc:
        _error_record(type(exc).__name__, exc)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())

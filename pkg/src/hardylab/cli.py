"""Command line front end: ``hardylab <subcommand> [--config PATH] [--set k=v] ...``.

Exit status: 0 all verdicts pass, 1 a verdict failed, 2 configuration or
precondition error, 3 inconclusive.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import qmc

from . import config as config_mod
from .errors import ConfigError, InconclusiveError, PreconditionError, SolverError
from .evolution import blowup_indicator
from .functions import family_extent, regression_family
from .geometry import build_partition, compute_k0, eval_profile, k0_integrand, verify_partition
from .hardy import (audit_constants, beta_star, default_epsilon, hardy_constant, run_family,
                    vector_field_constants)
from .quadrature import build_rule
from .report import (EXIT_CONFIG, FAIL, INCONCLUSIVE, PASS, build_report, section, write_csv,
                     write_json)
from .spectrum import MeshSchedule, lambda1_levels, optimality_sweep, refinement_stability
from .weights import (check_density_condition, estimate_critical_exponent, admissibility_constants,
                      with_constants)

SUBCOMMANDS = ("weight-check", "partition-check", "verify-hardy", "constants", "lambda1",
               "optimality-sweep", "evolve", "full-audit")


class Context:
    """Parsed configuration plus the output directory and written files."""

    def __init__(self, cfg, out_dir, quiet=False):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.quiet = quiet
        self.files = []
        self.poles = cfg.pole_configuration()

    def log(self, msg):
        if not self.quiet:
            print(msg, file=sys.stderr, flush=True)

    def csv(self, name, header, rows):
        path = self.out / name
        write_csv(path, header, rows)
        self.files.append(str(path))

    @property
    def k2(self):
        spec = self.cfg.weight_spec(self.poles)
        return 0.0 if spec.k2 is None else spec.k2

    @property
    def c_o(self):
        return hardy_constant(self.poles.dimension, self.k2)

    def spec(self):
        """Weight spec, None for Lebesgue measure (the fast unweighted path)."""
        spec = self.cfg.weight_spec(self.poles, k1=0.0)
        return None if spec.is_lebesgue and spec.k1 == 0 else spec


def _guard(fn):
    """Turn solver and inconclusive errors into an inconclusive section."""
    try:
        return fn()
    except (InconclusiveError, SolverError) as exc:
        return section(INCONCLUSIVE, {"error": str(exc)}, {"none": 0.0})


# --- pipelines ---------------------------------------------------------------------


def run_weight_check(ctx):
    cfg = ctx.cfg
    spec = cfg.weight_spec(ctx.poles, k1=0.0)
    N = ctx.poles.dimension
    out = {}

    def exponent():
        est = estimate_critical_exponent(spec, 0)
        expected = N - spec.gamma
        ok = abs(est - expected) <= 0.1
        return section(PASS if ok else FAIL, {"estimate": est, "expected": expected},
                       {"absolute": 0.1, "bisection": 1e-3})

    def density():
        p = cfg.hypotheses.density_p
        rep = check_density_condition(spec, p)
        analytic = "satisfied" if N - spec.gamma - p > 0 else "violated"
        verdict = INCONCLUSIVE if rep.verdict == "inconclusive" else (
            PASS if rep.verdict == analytic else FAIL)
        return section(verdict, {"report": rep, "analytic": analytic},
                       {"exponent": rep.tolerance})

    out["critical_exponent"] = _guard(exponent)
    out["density_condition"] = _guard(density)

    if spec.k2 is not None:
        for method, key in (("vector_field_thm21", "drift_inequality"),
                            ("ims_thm31", "local_drift_inequality")):
            if method == "ims_thm31" and ctx.poles.n < 2:
                continue
            if cfg.weight.k1 is None:
                fitted, rep = audit_constants(spec, method, ctx.c_o / 2,
                                              box_half_width=cfg.hypotheses.box_half_width,
                                              eps_list=tuple(cfg.hypotheses.eps_list))
                k1 = fitted.k1
            else:
                k1 = cfg.weight.k1
                rep = _recheck(spec, method, k1, ctx)
            out[key] = section(PASS if rep.verdict == "satisfied" else FAIL,
                               {"k1": k1, "report": rep}, {"relative_slack": rep.tolerance})
    if spec.delta > 0:
        rho = min(1.0, ctx.poles.r0)
        out["weight_constants"] = section(PASS, admissibility_constants(spec, rho),
                                          {"closed_form": 0.0})
    return out


def _recheck(spec, method, k1, ctx):
    """Audit a user supplied k1 instead of fitting it."""
    from .weights import (ball_samples, check_H2, check_H2prime, hypothesis_samples)

    cfg, N, n = ctx.poles, ctx.poles.dimension, ctx.poles.n
    k2 = spec.require_k2()
    s = with_constants(spec, k1=k1)
    if method == "ims_thm31":
        samples = [ball_samples(cfg, i, seed=i) for i in range(n)]
        return check_H2prime(s, -(N + k2 - 2) / 2.0, tuple(ctx.cfg.hypotheses.eps_list), samples)
    L = ctx.cfg.hypotheses.box_half_width or float(np.abs(cfg.poles).max() + 3.0 * cfg.r0)
    return check_H2(s, beta_star(N, k2, n), hypothesis_samples(cfg, L, 2 ** ctx.cfg.hypotheses.samples_log2))


def run_partition_check(ctx):
    cfg = ctx.cfg
    poles = ctx.poles
    N = poles.dimension
    part = build_partition(poles)
    L = float(np.abs(poles.poles).max() + 2.0 * poles.r0)
    pts = qmc.Sobol(N, scramble=True, seed=cfg.seed).random_base2(14)[: 10 ** 4]
    pts = L * (2.0 * pts - 1.0)
    rep = verify_partition(part, pts)
    profile_err = abs(eval_profile(0.75)[0] - np.sin(0.75 * np.pi))
    worst = max(rep.sum_of_squares, rep.property_a, rep.property_d, rep.annulus_constraint)
    ok = worst <= 1e-10 and profile_err <= 1e-15 and rep.support_overlap == 0
    out = {"partition": section(PASS if ok else FAIL,
                                {"report": rep, "profile_error": profile_err},
                                {"residual": 1e-10, "profile": 1e-15})}
    if poles.n < 2:
        return out
    for c in cfg.k0.c_values:
        def k0_section(c=c):
            res = compute_k0(part, c, cfg.k0.log2_samples, cfg.k0.rounds, seed=cfg.seed)
            fresh = _fresh_ball_points(poles, cfg.seed + 7)
            worst_value = max(float(np.max(k0_integrand(part, c, x))) for x in fresh)
            bound_ok = worst_value <= res.k0 + 1e-9 * max(1.0, res.k0)
            ok = res.below_pi_squared and bound_ok
            return section(PASS if ok else FAIL,
                           {"k0": res, "fresh_sample_max": worst_value, "pi_squared": np.pi ** 2},
                           {"pointwise": 1e-9})
        out[f"k0_c{c:g}"] = _guard(k0_section)
    return out


def _fresh_ball_points(poles, seed, m=14):
    N, r0 = poles.dimension, poles.r0
    out = []
    for i, a in enumerate(poles.poles):
        pts = qmc.Sobol(N, scramble=True, seed=seed + i).random_base2(m)
        pts = a + r0 * (2.0 * pts - 1.0)
        out.append(pts[np.sum((pts - a) ** 2, axis=1) <= r0 ** 2])
    return out


def run_constants(ctx):
    poles = ctx.poles
    N, n, r0 = poles.dimension, poles.n, poles.r0
    k2 = ctx.k2
    co = hardy_constant(N, k2)
    a = N + k2 - 2
    bs = beta_star(N, k2, n)
    closed = a * a / (4.0 * n)
    numeric = minimize_scalar(lambda b: -(a * b - n * b * b), bracket=(0.0, max(bs, 1e-3), 10.0),
                              tol=1e-12)
    max_err = abs(-numeric.fun - closed)
    coincide = []
    for eps in (0.5, 1.0, 2.0):
        c_eps = co / (1 + eps / 2)
        vf = vector_field_constants(n, c_eps, r0, eps, 0.0, N, k2)
        coincide.append({"epsilon": eps, "c": c_eps, "beta_plus": vf["beta_plus"],
                         "beta_minus": vf["beta_minus"]})
    gap = max(abs(r["beta_plus"] - r["beta_minus"]) for r in coincide)
    results = {"N": N, "n": n, "r0": r0, "k2": k2, "c_o": co, "beta_star": bs,
               "c_max_two_term": co / n, "max_value_closed_form": closed,
               "max_value_numeric": -numeric.fun, "beta_coincidence": coincide}
    c = ctx.cfg.c
    if c is not None and 0 < c < co:
        eps = default_epsilon(c, co)
        results["vector_field"] = vector_field_constants(n, c, r0, eps, 0.0, N, k2)
    ok = max_err <= 1e-10 and gap <= 1e-6
    return {"constants": section(PASS if ok else FAIL, results,
                                 {"maximizer": 1e-10, "beta_coincidence": 1e-6})}


def _default_c(ctx, method):
    co, n = ctx.c_o, ctx.poles.n
    if ctx.cfg.c is not None:
        return ctx.cfg.c
    return {"ims_thm31": co, "vector_field_thm21": co / n, "vector_field_thm22": 0.9 * co}[method]


def run_verify_hardy(ctx, method=None):
    cfg = ctx.cfg
    method = method or cfg.method
    poles = ctx.poles
    co, n = ctx.c_o, poles.n
    c = _default_c(ctx, method)
    limits = {"ims_thm31": co, "vector_field_thm21": co / n, "vector_field_thm22": co}
    if not c > 0 or c > limits[method] * (1 + 1e-12) or (method == "vector_field_thm22" and c >= co):
        raise PreconditionError("constant out of range")
    spec = cfg.weight_spec(poles, k1=0.0)
    audit = None
    if not spec.is_lebesgue:
        if cfg.weight.k1 is None:
            spec, audit = audit_constants(spec, method, c, box_half_width=cfg.hypotheses.box_half_width,
                                          eps_list=tuple(cfg.hypotheses.eps_list))
        else:
            spec = with_constants(spec, k1=cfg.weight.k1)
    elif cfg.weight.k1:
        spec = with_constants(spec, k1=cfg.weight.k1)
    q = cfg.quadrature
    L = cfg.box_half_width or family_extent(poles)
    rule = build_rule(poles, L, q.panels_per_axis, q.shells_per_pole, q.r_min_ratio, q.face_panels)
    kw = {}
    k0 = None
    if method == "ims_thm31":
        k0 = compute_k0(build_partition(poles), c, cfg.k0.log2_samples, cfg.k0.rounds, seed=cfg.seed)
        kw["k0"] = k0.k0
    fam = regression_family(poles, seed=cfg.seed)
    reports = run_family(fam, spec, poles, c, method, rule, **kw)
    ok = all(r.margin >= -r.quadrature_error for r in reports)
    results = {"method": method, "c": c, "c_o": co, "k1": spec.k1, "k2": spec.k2,
               "reports": reports, "rule_error_estimate": rule.error_estimate}
    if audit is not None:
        results["weight_audit"] = audit
    if k0 is not None:
        results["k0"] = k0
    return {f"inequality_{method}": section(PASS if ok else FAIL, results,
                                            {"quadrature": max(r.quadrature_error for r in reports)})}


def _mesh_schedule(cfg):
    m = cfg.mesh
    return MeshSchedule(m.L, m.spacing, m.base_layers, m.layers_per_level)


def run_lambda1(ctx, c=None):
    cfg = ctx.cfg
    co = ctx.c_o
    c = cfg.c if c is None and cfg.c is not None else c
    c = cfg.spectrum.stable_factor * co if c is None else c
    sched = _mesh_schedule(cfg)
    spectra = lambda1_levels(ctx.spec(), ctx.poles, c, cfg.mesh.levels, sched, cfg.spectrum.tol)
    lams = [s.lambda1 for s in spectra]
    stab = refinement_stability(lams)
    if not all(s.converged for s in spectra):
        verdict = INCONCLUSIVE
    elif c <= co:
        verdict = PASS if stab["stable"] else FAIL
    else:
        verdict = PASS if stab["monotone_decreasing"] and lams[-1] < cfg.spectrum.threshold else FAIL
    ctx.csv(f"lambda1_c{c:g}.csv", ["level", "layers", "dofs", "lambda1", "residual"],
            [(s.mesh_level, sched.layers(s.mesh_level), s.dofs, s.lambda1, s.residual) for s in spectra])
    expectation = "stabilizes" if c <= co else "diverges"
    return {"lambda1": section(verdict, {"c": c, "c_o": co, "expected": expectation,
                                         "stability": stab, "spectra": spectra},
                               {"eigen_residual": cfg.spectrum.tol, "stability_ratio": 0.1})}


def run_optimality_sweep(ctx):
    cfg = ctx.cfg
    c = cfg.c if cfg.c is not None else cfg.spectrum.sweep_factor * ctx.c_o
    spec = ctx.spec()
    sweep = optimality_sweep(spec, ctx.poles, c, tuple(cfg.spectrum.eps_list), cfg.mesh.levels,
                             _mesh_schedule(cfg), cfg.spectrum.threshold,
                             k2=ctx.k2)
    verdict = {"optimality confirmed": PASS, "not confirmed": FAIL}.get(sweep["verdict"], INCONCLUSIVE)
    ctx.csv(f"sweep_eps_c{c:g}.csv", ["epsilon", "quotient"], zip(sweep["eps"], sweep["quotients"]))
    ctx.csv(f"sweep_levels_c{c:g}.csv", ["level", "layers", "lambda1"],
            zip(sweep["levels"], sweep["layers"], sweep["lambda1"]))
    return {"optimality_sweep": section(verdict, sweep, {"threshold": cfg.spectrum.threshold,
                                                        "eigen_residual": cfg.spectrum.tol})}


def run_evolve(ctx):
    cfg = ctx.cfg
    ev = cfg.evolution
    co = ctx.c_o
    cs = [cfg.c] if cfg.c is not None else [f * co for f in ev.c_factors]
    sched = MeshSchedule(ev.L, ev.spacing, ev.base_layers, ev.layers_per_level)
    out = {}
    for c in cs:
        res = blowup_indicator(ctx.spec(), ctx.poles, c, ev.levels, ev.T, ev.dt, sched,
                               keep_traces=True)
        for tr in res.pop("traces"):
            ctx.csv(f"evolve_c{c:g}_level{tr.mesh_level}.csv", ["t", "norm", "min_on_K"],
                    zip(tr.times, tr.norms, tr.min_on_K))
        expected = "existence-consistent" if c <= co else "nonexistence-consistent"
        if res["verdict"] == "inconclusive":
            verdict = INCONCLUSIVE
        else:
            verdict = PASS if res["verdict"] == expected else FAIL
        res.update(expected=expected, c_o=co)
        out[f"evolution_c{c:g}"] = section(verdict, res, {"fit_residual": 0.1, "growth_per_level": 0.5,
                                                          "stability": 0.1}, note=res["note"])
    return out


def run_full_audit(ctx):
    out = {}
    steps = [("weight", run_weight_check), ("partition", run_partition_check),
             ("constants", run_constants)]
    for name, fn in steps:
        ctx.log(f"[full-audit] {name}")
        out.update(fn(ctx))
    for method in ("ims_thm31", "vector_field_thm21", "vector_field_thm22"):
        if method == "ims_thm31" and ctx.poles.n < 2:
            continue
        ctx.log(f"[full-audit] inequality {method}")
        out.update(run_verify_hardy(ctx, method))
    ctx.log("[full-audit] lambda1")
    out.update(run_lambda1(ctx, ctx.cfg.spectrum.stable_factor * ctx.c_o))
    ctx.log("[full-audit] optimality sweep")
    saved = ctx.cfg.c
    ctx.cfg.c = None
    try:
        out.update(run_optimality_sweep(ctx))
        ctx.log("[full-audit] evolution")
        out.update(run_evolve(ctx))
    finally:
        ctx.cfg.c = saved
    return out


PIPELINES = {
    "weight-check": run_weight_check,
    "partition-check": run_partition_check,
    "verify-hardy": run_verify_hardy,
    "constants": run_constants,
    "lambda1": run_lambda1,
    "optimality-sweep": run_optimality_sweep,
    "evolve": run_evolve,
    "full-audit": run_full_audit,
}


def parser():
    p = argparse.ArgumentParser(prog="hardylab", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", metavar="PATH", help="JSON run configuration")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                   help="override a configuration field (dotted path, JSON value); repeatable")
    p.add_argument("--out", metavar="DIR", help="output directory (default: config output_dir)")
    p.add_argument("--seed", type=int, help="random seed (default: config seed)")
    p.add_argument("--quiet", action="store_true", help="suppress progress and summary output")
    return p


def run(subcommand, config_path=None, overrides=(), out_dir=None, seed=None, quiet=True):
    """Execute one subcommand; returns (exit_code, report or None)."""
    try:
        cfg = config_mod.load(config_path, overrides)
        if seed is not None:
            cfg.seed = seed
        echo = cfg.to_dict()
        ctx = Context(cfg, out_dir or cfg.output_dir, quiet)
        start = time.time()
        sections = PIPELINES[subcommand](ctx)
    except (ConfigError, PreconditionError, OSError) as exc:
        if not quiet:
            print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG, None
    report_path = ctx.out / f"{subcommand}.report.json"
    report = build_report(subcommand, echo, cfg.seed, sections, ctx.files + [str(report_path)])
    write_json(report_path, report)
    if not quiet:
        for name, verdict in report["verdicts"].items():
            print(f"{verdict:>12}  {name}")
        print(f"report: {report_path} ({time.time() - start:.1f} s)")
    return report["exit_code"], report


def main(argv=None):
    args = parser().parse_args(argv)
    code, _ = run(args.subcommand, args.config, args.overrides, args.out, args.seed, args.quiet)
    return code


if __name__ == "__main__":
    sys.exit(main())

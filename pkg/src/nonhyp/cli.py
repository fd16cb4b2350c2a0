"""Command-line front end: ``nonhyp <subcommand> --config <path>``.

Subcommands run in pipeline order (certify, manifold, conjugacy, shadow) and
each one computes whatever earlier stages it needs.  Every run writes
report.txt to the output directory; the stage-specific CSVs sit next to it.

Exit codes: 0 success, 1 a tensor hypothesis fails, 2 a verification margin
fails, 3 I/O or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .cone import CheckReport, ConeCertificate, HypothesisFailure, certify
from .conjugacy import (
    ChartError,
    build_chart,
    build_product_chart,
    conjugacy_grid,
    induced_factor_maps,
    verify_leaves,
)
from .manifold import stable_graph, unstable_graph, uniqueness_check, verify_graph
from .planar_map import DESCRIPTIONS, check_hypotheses
from .shadowing import (
    build_env,
    operator_norm_check,
    resimulate,
    run_trials,
    verify_shadowing_conditions,
    write_shadow_csv,
)

EXIT_OK, EXIT_HYPOTHESIS, EXIT_MARGIN, EXIT_IO = 0, 1, 2, 3
SUBCOMMANDS = ("certify", "manifold", "conjugacy", "shadow", "all")
OUT_ENV = "NONHYP_OUT"
RESIMULATION_TOL = 1e-12

log = logging.getLogger("nonhyp")


class StageFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class Report:
    """Plain-text report; numbers use 17 significant digits so reruns compare byte for byte."""

    lines: list[str] = field(default_factory=list)

    def section(self, title: str) -> None:
        if self.lines:
            self.lines.append("")
        self.lines += [f"[{title}]"]

    def value(self, name: str, v, resolution=None) -> None:
        text = f"{v:.17g}" if isinstance(v, (float, np.floating)) else str(v)
        if resolution is not None:
            text += f"  (samples: {resolution})"
        self.lines.append(f"{name} = {text}")

    def check(self, rep: CheckReport, prefix: str = "") -> None:
        for c in rep.checks:
            self.value(f"{prefix}margin.{c.name}", c.min_scaled_margin, c.samples)
            if c.violations:
                self.value(f"{prefix}violations.{c.name}", c.violations)

    def write(self, path: Path) -> None:
        path.write_text("\n".join(self.lines) + "\n", encoding="utf-8")


@dataclass
class Pipeline:
    cfg: RunConfig
    out: Path
    report: Report = field(default_factory=Report)
    cert: ConeCertificate | None = None
    graphs: tuple | None = None
    done: set = field(default_factory=set)

    # -- stages ------------------------------------------------------------

    def certify(self) -> None:
        if "certify" in self.done:
            return
        cfg, r = self.cfg, self.report
        r.section("certify")
        hyp = check_hypotheses(cfg.spec, cfg.tolerances.z_min)
        for name, rep in hyp.reports.items():
            status = "PD" if rep.is_pd else ("indefinite" if rep.z_min_upper < 0 else "not PD")
            r.value(f"tensor.{name}", f"{status}  [{DESCRIPTIONS[name]}]")
            r.value(f"z_min.{name}.lower", rep.z_min_lower)
            r.value(f"z_min.{name}.upper", rep.z_min_upper)
        if not hyp.overall:
            names = ", ".join(f"{n} ({DESCRIPTIONS[n]})" for n in hyp.failing)
            r.value("hypotheses", f"FAILED: tensor {names} not positive definite")
            raise StageFailure(EXIT_HYPOTHESIS, f"tensor {names} not positive definite")
        r.value("hypotheses", "ok")
        try:
            cert = certify(cfg.spec, cfg.grids.cone_samples, cfg.tolerances.z_min)
        except HypothesisFailure as exc:
            raise StageFailure(EXIT_HYPOTHESIS, str(exc)) from None
        for name in ("alpha", "beta", "delta", "eps_dom", "tau0", "kappa"):
            r.value(name, getattr(cert, name))
        for name, v in cert.radii.items():
            r.value(f"radius.{name}", float(v))
        for name, v in cert.margins.items():
            r.value(f"margin.{name}", v, cert.sample_resolution.get(name))
        self.cert = cert
        self.done.add("certify")
        if not cert.sound:
            bad = [n for n, v in cert.margins.items() if not v > 0]
            raise StageFailure(EXIT_MARGIN, "cone margins not positive: " + ", ".join(bad))

    def manifold(self) -> None:
        if "manifold" in self.done:
            return
        self.certify()
        cfg, r, cert = self.cfg, self.report, self.cert
        tol, n = cfg.tolerances.bisect, cfg.grids.manifold_samples
        gs = stable_graph(cfg.spec, cert, n, tol, cfg.grids.manifold_max_iter)
        gu = unstable_graph(cfg.spec, cert, n, tol, cfg.grids.manifold_max_iter)
        gs.to_csv(self.out / "stable.csv")
        gu.to_csv(self.out / "unstable.csv")
        self.graphs = (gs, gu)
        r.section("manifold")
        r.value("bisect_tol", tol)
        failures = []
        for g in (gs, gu):
            rep = verify_graph(cfg.spec, g, cert)
            p = g.side
            r.value(f"{p}.max_abs_phi", float(np.max(np.abs(g.phis))), g.xs.size)
            r.value(f"{p}.lipschitz_estimate", rep.lipschitz_estimate, g.xs.size)
            r.value(f"{p}.margin.lipschitz", rep.lipschitz_limit - rep.lipschitz_estimate, g.xs.size)
            r.value(f"{p}.orbit_prefix_ok", rep.prefix_ok, g.xs.size)
            r.value(f"{p}.margin.convergence_budget", rep.convergence_budget - rep.tail_steps_bound, g.xs.size)
            r.value(f"{p}.cone_ok", rep.cone_ok, g.xs.size)
            r.value(f"{p}.invariance_defect", rep.invariance_defect, g.xs.size)
            r.value(f"{p}.margin.invariance", rep.invariance_slack, g.xs.size)
            if not rep.ok:
                failures.append(f"{p} graph verification")
        gaps = uniqueness_check(cfg.spec, cert, cfg.grids.uniqueness_arcs, tol)
        r.value("uniqueness.max_gap", float(gaps.max()), gaps.size)
        r.value("uniqueness.margin", 2 * tol - float(gaps.max()), gaps.size)
        if not gaps.max() <= 2 * tol:
            failures.append("uniqueness")
        self.done.add("manifold")
        if failures:
            raise StageFailure(EXIT_MARGIN, "failed: " + ", ".join(failures))

    def conjugacy(self) -> None:
        if "conjugacy" in self.done:
            return
        self.manifold()
        cfg, r = self.cfg, self.report
        gs, gu = self.graphs
        tol, n, band = cfg.tolerances.conjugacy, cfg.grids.conjugacy, cfg.conjugacy.band
        r.section("conjugacy")
        try:
            chart = build_chart(cfg.spec, self.cert, gs, gu)
        except ChartError as exc:
            raise StageFailure(EXIT_MARGIN, f"chart: {exc}") from None
        r.value("x0", chart.x0)
        r.value("y_u", chart.y_u)
        r.value("m_hat", chart.m_hat)
        r.value("matching_residual", chart.matching_residual)
        leaves = verify_leaves(chart)
        r.value("margin.vertical_leaf_transversality", leaves.min_vertical - 1, leaves.samples)
        r.value("margin.horizontal_leaf_transversality", leaves.min_horizontal - 1, leaves.samples)
        failures = [] if leaves.ok else ["leaf transversality"]
        if cfg.conjugacy.self_check:
            grid = conjugacy_grid(chart, chart, n, band)
            grid.to_csv(self.out / "conjugacy_self.csv")
            r.value("self.identity_error", grid.identity_error, len(grid.rows))
            r.value("self.margin.identity", tol - grid.identity_error, len(grid.rows))
            if not grid.identity_error <= tol:
                failures.append("self-conjugacy identity")
        F1, F2 = induced_factor_maps(cfg.spec, gs, gu)
        chart_p = build_product_chart(chart, F1, F2)
        grid = conjugacy_grid(chart, chart_p, n, band)
        grid.to_csv(self.out / "conjugacy.csv")
        r.value("grid", f"{n}x{n}, band {band:.17g}")
        r.value("grid.points_in_N", len(grid.rows))
        r.value("grid.points_outside_N", grid.n_outside)
        r.value("grid.points_in_bands", grid.n_band)
        r.value("max_defect", grid.max_defect, grid.defect_points)
        r.value("margin.defect", tol - grid.max_defect, grid.defect_points)
        r.value("min_image_separation", grid.min_separation, len(grid.rows))
        if not grid.max_defect <= tol:
            failures.append("conjugacy defect")
        if not grid.injective:
            failures.append("injectivity")
        self.done.add("conjugacy")
        if failures:
            raise StageFailure(EXIT_MARGIN, "failed: " + ", ".join(failures))

    def shadow(self) -> None:
        if "shadow" in self.done:
            return
        self.certify()
        cfg, r = self.cfg, self.report
        sh = cfg.shadow
        seed = cfg.require_seed("shadow")
        env = build_env(cfg.spec, sh.eps_target, self.cert, seed)
        r.section("shadow")
        r.value("seed", seed)
        r.value("K.half_width", env.K.half_width)
        r.value("K1.half_width", env.K1.half_width)
        r.value("delta", env.delta)
        r.value("Delta", env.Delta)
        r.value("alpha_norm", env.alpha_norm)
        for name, v in env.bounds.items():
            r.value(f"bound.{name}", v)
        conds = verify_shadowing_conditions(cfg.spec, env, cfg.grids.shadow_samples, seed)
        r.check(conds)
        norm = operator_norm_check(cfg.spec, env, cfg.grids.shadow_samples, seed)
        r.value("margin.operator_norm", -norm, cfg.grids.shadow_samples)
        failures = [] if conds.ok and norm <= 0 else ["shadowing conditions"]
        eps = sh.eps_factor * env.delta
        records = run_trials(cfg.spec, env, sh.trials, sh.length, sh.noise_fraction * env.delta, eps, seed)
        write_shadow_csv(self.out / "shadow.csv", records)
        achieved = np.array([rec.result.eps_achieved for rec in records])
        resim = max(abs(resimulate(cfg.spec, rec.orbit, rec.result.q) - rec.result.eps_achieved) for rec in records)
        r.value("trials", f"{sh.trials} orbits, length {sh.length}, noise {sh.noise_fraction:.17g} delta")
        r.value("eps", eps)
        r.value("shadowed", f"{int(np.sum(achieved < eps))}/{len(records)}")
        r.value("max_eps_achieved", float(achieved.max()), len(records))
        r.value("margin.shadow", eps - float(achieved.max()), len(records))
        r.value("resimulation_difference", resim, len(records))
        if not np.all(achieved < eps):
            failures.append("shadowing trials")
        if not resim <= RESIMULATION_TOL:
            failures.append("resimulation")
        self.done.add("shadow")
        if failures:
            raise StageFailure(EXIT_MARGIN, "failed: " + ", ".join(failures))


def output_dir(cli_out: str | None, cfg: RunConfig) -> Path:
    """--out, then the config's output key, then $NONHYP_OUT, then the working directory."""
    return Path(cli_out or cfg.output or os.environ.get(OUT_ENV) or ".")


def run(subcommand: str, cfg: RunConfig, out=None) -> int:
    """Run one subcommand (or the whole pipeline) and write report.txt; returns the exit code."""
    if subcommand not in SUBCOMMANDS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    out = Path(out) if out is not None else output_dir(None, cfg)
    stages = ("certify", "manifold", "conjugacy", "shadow") if subcommand == "all" else (subcommand,)
    try:
        cfg.require_seed(subcommand)
        out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except OSError as exc:
        log.error("cannot create output directory: %s", exc)
        return EXIT_IO
    pipe = Pipeline(cfg, out)
    code = EXIT_OK
    try:
        for stage in stages:
            t0 = time.perf_counter()
            getattr(pipe, stage)()
            log.info("%s done in %.2f s", stage, time.perf_counter() - t0)
    except StageFailure as exc:
        log.error("%s", exc)
        pipe.report.section("result")
        pipe.report.value("status", f"FAILED: {exc}")
        code = exc.code
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    else:
        pipe.report.section("result")
        pipe.report.value("status", "ok")
    try:
        pipe.report.write(out / "report.txt")
    except OSError as exc:
        log.error("cannot write report: %s", exc)
        return EXIT_IO
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nonhyp", description=__doc__.split("\n\n")[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help=f"output directory (default: config 'output', then ${OUT_ENV}, then .)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--threads", type=int, default=1, help="accepted for compatibility; kernels run serially")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s"
    )
    if args.threads < 1:
        log.error("--threads must be positive")
        return EXIT_IO
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        log.error("%s: %s", args.config, exc)
        return EXIT_IO
    if args.seed is not None:
        if args.seed < 0:
            log.error("--seed must be non-negative")
            return EXIT_IO
        cfg = replace(cfg, seed=args.seed)
    return run(args.subcommand, cfg, output_dir(args.out, cfg))


if __name__ == "__main__":
    sys.exit(main())

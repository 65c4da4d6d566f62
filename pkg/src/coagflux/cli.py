# src/coagflux/cli.py
"""
Command-line driver: construct → solve → verify, plus plot data.

    python -m coagflux construct [--config run.yaml] [--gamma 0.2 --p 0.1 ...]
    python -m coagflux solve
    python -m coagflux verify
    python -m coagflux figdata
    python -m coagflux all

Every RunConfig field is also a flag. Stages communicate through files in
``out_dir``:

    construct → w0_manifest.json, phi.csv, w0.csv, psi.csv
    solve     → solution.json, H.csv, f_vs_powerlaw.csv (kernel_family.csv with --search_s0)
    verify    → verify.json, B_HH.csv, J.csv
    figdata   → G_align.csv, G_vectors.csv

Exit codes: 0 ok, 1 usage/config, 2 construction, 3 solver, 4 verification.
A failing stage also writes ``error.json`` next to the other outputs.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from coagflux import __version__
from coagflux.config import RunConfig, field_names, load_config
from coagflux.errors import CoagFluxError, ConfigError, QuadratureError, VerificationError
from coagflux.export import read_json, write_csv, write_json
from coagflux.fluxcheck import oracle_spec, verify_constant_flux, write_report
from coagflux.kernelspace import phi_from_w, tabulate_phi, tabulate_w
from coagflux.logging_config import get_logger, set_level
from coagflux.solver import (
    SolverContext,
    assemble_solution,
    find_contraction_threshold,
    fixed_point_solve,
    kernel_family_distance,
    load_solution,
    write_solution,
)
from coagflux.symbol import alignment_product, eval_G, psi_scan
from coagflux.w0builder import (
    PerturbationPair,
    W0Recipe,
    build_perturbations,
    build_w0,
    check_harmonics,
    check_positive,
    solve_bifurcation_kernel,
)

logger = get_logger(__name__)

MANIFEST = "w0_manifest.json"
SOLUTION = "solution.json"
STAGES = ("construct", "solve", "verify", "figdata")
STAGE_EXIT = {"construct": 2, "solve": 3, "verify": 4, "figdata": 1}


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def cmd_construct(cfg: RunConfig) -> Path:
    """Build W0, certify k*, pick the perturbation pair and write the manifest."""
    params = cfg.params()
    spec = cfg.quadrature_spec()
    logger.info(f"🔧 constructing W0 for gamma = {params.gamma:g}, p = {params.p:g} (q = {params.q:g})")
    w0, point, recipe = solve_bifurcation_kernel(
        cfg.z_a, cfg.z_b, cfg.epsilon, params, cfg.k_scan,
        points=cfg.k_scan_points, K_max=cfg.K_max, spec=spec, k_floor=cfg.k_floor,
        certify_points=cfg.certify_points, asymptotic_rtol=cfg.asymptotic_rtol,
        newton_step=cfg.newton_step, newton_max_iter=cfg.newton_max_iter, workers=cfg.workers,
    )
    w_min = check_positive(w0)
    harmonics = check_harmonics(w0, point, cfg.N, spec)
    pair = build_perturbations(
        point.k_star, cfg.epsilon, cfg.z_search, params.q, cfg.z_search_points, cfg.cond_floor, spec
    )

    out = cfg.out_path
    h = cfg.config_hash()
    manifest = {
        "recipe": recipe.to_dict(),
        "k_star": point.k_star,
        "bifurcation": point.to_dict(),
        "perturbation": pair.to_dict(),
        "harmonics": {"n": list(range(2, cfg.N + 1)), "abs_psi": harmonics, "margin_scale": point.scale},
        "kernel": {"fingerprint": w0.fingerprint(), "min_W": w_min, "envelope_const": w0.envelope_const},
        "params": params.to_dict(),
    }
    path = write_json(manifest, out / MANIFEST, h)
    write_csv(tabulate_phi(phi_from_w(w0, params)), out / "phi.csv", h)
    write_csv(tabulate_w(w0), out / "w0.csv", h)
    ks = np.linspace(cfg.k_scan_lo, cfg.k_scan_hi, cfg.k_scan_points)
    psi = psi_scan(w0, ks, spec, cfg.k_floor, cfg.workers)
    write_csv(pd.DataFrame({"k": ks, "Re_psi": psi.real, "Im_psi": psi.imag}), out / "psi.csv", h)
    logger.info(f"✅ construction done: k* = {point.k_star:.12g}, Q = {point.Q:.6g}")
    return path


def load_construction(cfg: RunConfig) -> tuple:
    """(w0, pair, recipe, scale) from ``out_dir/w0_manifest.json``."""
    path = cfg.out_path / MANIFEST
    if not path.exists():
        raise ConfigError(f"{path} not found; run `construct` first")
    m = read_json(path)
    recipe = W0Recipe.from_dict(m["recipe"])
    if (recipe.params.gamma, recipe.z_a, recipe.z_b, recipe.epsilon) != (
        cfg.params().gamma, cfg.z_a, cfg.z_b, cfg.epsilon
    ):
        logger.warning("⚠️ manifest was built with a different kernel configuration; using the manifest")
    if m.get("config_hash") != cfg.config_hash():
        logger.info("ℹ️ manifest config hash differs from the current run (solver settings may have changed)")
    w0 = build_w0(recipe)
    pair = PerturbationPair.from_dict(m["perturbation"], recipe.params.q)
    return w0, pair, recipe, float(m["bifurcation"]["scale"])


def cmd_solve(cfg: RunConfig) -> Path:
    """Run the fixed point on the constructed kernel and write the solution."""
    w0, pair, recipe, scale = load_construction(cfg)
    spec = cfg.quadrature_spec()
    ctx = SolverContext.build(
        w0, pair, recipe, recipe.k_star, cfg.N, cfg.M, spec, cfg.workers, cfg.cache_dir, scale=scale
    )
    extras: dict = {}
    out = cfg.out_path
    h = cfg.config_hash()
    if cfg.search_s0:
        extras["empirical_s0"] = find_contraction_threshold(ctx, cfg.s0, cfg.fp_tol, cfg.max_iter)
        s_values = cfg.s * np.array([0.25, 0.5, 0.75, 1.0])
        write_csv(kernel_family_distance(ctx, s_values, cfg.fp_tol, cfg.max_iter), out / "kernel_family.csv", h)

    state = fixed_point_solve(cfg.s, ctx, cfg.fp_tol, cfg.max_iter)
    sol = assemble_solution(state, ctx, cfg.J0)
    if extras:
        sol = replace(sol, extras=extras)
    tolerances = {"fp_tol": cfg.fp_tol, "quad_abs_tol": cfg.quad_abs_tol, "quad_rel_tol": cfg.quad_rel_tol}
    paths = write_solution(sol, out, h, tolerances)
    logger.info(f"✅ solve done: alpha = ({sol.alpha1:.6e}, {sol.alpha2:.6e}), {sol.iterations} iterations")
    return paths[0]


def cmd_verify(cfg: RunConfig) -> Path:
    """Check the flux of the saved solution; raises VerificationError on failure."""
    path = cfg.out_path / SOLUTION
    if not path.exists():
        raise ConfigError(f"{path} not found; run `solve` first")
    sol = load_solution(path)
    report = verify_constant_flux(
        sol, tol=cfg.verify_tol, X_points=cfg.verify_X_points,
        spec=oracle_spec(cfg.oracle_phase_per_panel), workers=cfg.workers,
    )
    paths = write_report(report, cfg.out_path, cfg.config_hash())
    if not report.passed:
        raise VerificationError(
            f"flux deviates from J0: X-space {report.max_rel_dev_X:.3e} (tol {report.tol:g}), "
            f"x-space {report.max_rel_dev_x:.3e} (tol {report.tol_x:g})"
        )
    return paths[0]


def alignment_frames(z_a: float, z_b: float, ks: np.ndarray) -> tuple[pd.DataFrame, pd.DataFrame]:
    """G_align (k, Re, Im of conj(G(z_b))·G(z_a)) and the unit-vector angles of both G's."""
    prod = alignment_product(z_a, z_b, ks)
    ga = np.array([eval_G(z_a, k) for k in ks])
    gb = np.array([eval_G(z_b, k) for k in ks])
    align = pd.DataFrame({"k": ks, "Re": prod.real, "Im": prod.imag})
    vectors = pd.DataFrame({
        "k": ks,
        "theta_a": np.angle(ga),
        "theta_b": np.angle(gb),
        # ±π when the two vectors point in opposite directions
        "dtheta": np.angle(prod),
    })
    return align, vectors


def cmd_figdata(cfg: RunConfig) -> Path:
    ks = np.linspace(cfg.figdata_k_lo, cfg.figdata_k_hi, cfg.figdata_points)
    align, vectors = alignment_frames(cfg.z_a, cfg.z_b, ks)
    h = cfg.config_hash()
    path = write_csv(align, cfg.out_path / "G_align.csv", h)
    write_csv(vectors, cfg.out_path / "G_vectors.csv", h)
    return path


COMMANDS: dict[str, Callable[[RunConfig], Path]] = {
    "construct": cmd_construct,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "figdata": cmd_figdata,
}


# ---------------------------------------------------------------------------
# Error reporting
# ---------------------------------------------------------------------------


def exit_code_for(stage: str, err: CoagFluxError) -> int:
    if isinstance(err, ConfigError):
        return 1
    if isinstance(err, QuadratureError):
        return STAGE_EXIT.get(stage, err.exit_code)
    return err.exit_code


def write_error(cfg: RunConfig, stage: str, err: CoagFluxError, code: int) -> Path:
    payload = {
        "stage": stage,
        "error": type(err).__name__,
        "message": str(err),
        "exit_code": code,
    }
    return write_json(payload, cfg.out_path / "error.json", cfg.config_hash())


def run_stage(stage: str, cfg: RunConfig) -> int:
    logger.info(f"🔧 stage: {stage}")
    try:
        COMMANDS[stage](cfg)
    except CoagFluxError as e:
        code = exit_code_for(stage, e)
        logger.error(f"❌ {stage} failed ({type(e).__name__}): {e}")
        write_error(cfg, stage, e, code)
        return code
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="YAML file with RunConfig values")
    defaults = RunConfig()
    for name in field_names():
        flags = [f"--{name}"]
        if "_" in name:
            flags.append(f"--{name.replace('_', '-')}")
        parser.add_argument(*flags, dest=name, default=None, metavar=name.upper(),
                            help=f"(default {getattr(defaults, name)!r})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coagflux",
        description="Oscillatory constant-flux solutions of the coagulation equation",
    )
    parser.add_argument("--version", action="version", version=f"coagflux {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "construct": "build the bifurcation kernel W0 and its manifest",
        "solve": "solve the fixed point and write the solution",
        "verify": "check that the flux is constant",
        "figdata": "write the G-alignment plot data",
        "all": "run construct, solve, verify and figdata",
    }
    for name, text in helps.items():
        _add_config_flags(sub.add_parser(name, help=text))
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {name: getattr(args, name) for name in field_names()}
    return load_config(args.config, overrides)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ConfigError as e:
        logger.error(f"❌ {e}")
        return 1
    set_level(cfg.log_level)
    logger.info(f"🔧 coagflux {__version__}, config {cfg.config_hash()[:12]}")

    stages = STAGES if args.command == "all" else (args.command,)
    for stage in stages:
        code = run_stage(stage, cfg)
        if code:
            return code
    return 0


if __name__ == "__main__":
    try:
        sys.exit(main())
    except Exception as e:
        print(f"❌ cli.py: {e}", file=sys.stderr)
        sys.exit(1)

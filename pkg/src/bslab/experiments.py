"""Experiment drivers: reproducible pipelines behind the CLI subcommands.

Every driver takes a resolved :class:`~bslab.config.ExperimentConfig` and an
output directory, writes CSV/JSON result files plus a run manifest, and
returns the report dictionary.  All randomness is derived from ``run.seed``,
and numeric output is formatted at 17 significant digits, so a repeated run
with the same configuration and seed reproduces every result file bitwise
(the manifest additionally carries a wall-clock timestamp).
"""

from __future__ import annotations

import math
import os
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .carleman import carleman_sweep
from .config import ExperimentConfig
from .geometry import BulkField, CoupledField, DiskMesh, SurfaceField
from .inverse import (
    ForwardMap,
    assemble_probing_matrix,
    bulk_basis,
    materialize_separable,
    random_separable_spec,
    reconstruct,
    stability_experiment,
    surface_basis,
)
from .io import format_float, write_csv, write_json
from .coefficients import ProblemCoefficients
from .operators import assemble_operator, norms
from .stepping import SourcePair, solve_trajectory

__all__ = [
    "run_forward",
    "run_convergence",
    "run_carleman",
    "run_reconstruct",
    "run_stability",
]


def _start_run(out_dir: str) -> str:
    out_dir = os.path.abspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def _finish_run(out_dir: str, cfg: ExperimentConfig, files: list[str]) -> None:
    manifest = {
        "schema_version": 1,
        "artifact_version": __version__,
        "config_hash": cfg.hash(),
        "config": cfg.resolved(),
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "files": [
            {"name": name, "bytes": os.path.getsize(os.path.join(out_dir, name))}
            for name in sorted(files)
        ],
    }
    write_json(os.path.join(out_dir, "manifest.json"), manifest)


def _initial_field(cfg: ExperimentConfig, mesh: DiskMesh) -> CoupledField:
    spec = cfg["forward.initial"]
    kind, _, arg = spec.partition(":")
    if kind == "zero":
        return CoupledField.zeros(mesh)
    if kind == "constant":
        return CoupledField.constant(mesh, float(arg or 1.0))
    if kind == "radial":
        bulk = BulkField.from_function(mesh, lambda r, t: mesh.radius**2 - r**2)
        return CoupledField(bulk, SurfaceField.zeros(mesh))
    raise ValueError(f"forward.initial: unknown kind {kind!r}")


def _source_pair(cfg: ExperimentConfig, mesh: DiskMesh) -> SourcePair:
    spec = cfg["forward.source"]
    kind, _, arg = spec.partition(":")
    ones_b = np.ones((mesh.nr, mesh.nth))
    ones_s = np.ones(mesh.nth)
    if kind == "none":
        return SourcePair.zero(mesh)
    if kind == "constant":
        v = float(arg or 1.0)
        return SourcePair(
            mesh,
            bulk=lambda t: v * ones_b,
            surface=lambda t: v * ones_s,
            bulk_dt=lambda t: 0.0 * ones_b,
            surface_dt=lambda t: 0.0 * ones_s,
        )
    if kind == "decay":
        return SourcePair(
            mesh,
            bulk=lambda t: -math.exp(-t) * ones_b,
            surface=lambda t: -math.exp(-t) * ones_s,
            bulk_dt=lambda t: math.exp(-t) * ones_b,
            surface_dt=lambda t: math.exp(-t) * ones_s,
        )
    raise ValueError(f"forward.source: unknown kind {kind!r}")


def run_forward(cfg: ExperimentConfig, out_dir: str) -> dict:
    """Solve the coupled system once and export snapshots plus a manifest."""
    out_dir = _start_run(out_dir)
    mesh = cfg.build_mesh()
    coeffs = cfg.build_coefficients(mesh)
    op = assemble_operator(mesh, coeffs)
    traj = solve_trajectory(
        _initial_field(cfg, mesh),
        _source_pair(cfg, mesh),
        0.0,
        cfg["time.t_end"],
        cfg["time.steps"],
        cfg["time.scheme"],
        op,
        cfg["time.rtol"],
    )
    snapshot_times = cfg["forward.snapshots"] or (cfg["time.t_end"],)
    files: list[str] = []
    snapshots = []
    for k_snap, t in enumerate(snapshot_times):
        idx = traj.index_of(float(t))
        fld = traj.field(idx)
        b_name = f"snapshot_{k_snap:03d}_bulk.csv"
        s_name = f"snapshot_{k_snap:03d}_surface.csv"
        from .io import field_to_csv

        field_to_csv(os.path.join(out_dir, b_name), fld.bulk)
        field_to_csv(os.path.join(out_dir, s_name), fld.surface)
        files += [b_name, s_name]
        snapshots.append({"time": float(t), "bulk": b_name, "surface": s_name})
    report = {
        "schema_version": 1,
        "scheme": traj.scheme,
        "times": [float(t) for t in traj.times],
        "max_solve_residual": float(np.max(traj.residuals, initial=0.0)),
        "residuals": [float(r) for r in traj.residuals],
        "snapshots": snapshots,
        "final_l2": norms(traj.field(traj.n_steps), "L2"),
    }
    write_json(os.path.join(out_dir, "trajectory.json"), report)
    files.append("trajectory.json")
    _finish_run(out_dir, cfg, files)
    return report


# --------------------------------------------------------------------------
# convergence studies against manufactured solutions


def _temporal_case(mesh: DiskMesh, scheme: str, steps: int) -> float:
    """Spatially constant manufactured solution: d/dt c = -e^{-t}, c(0) = 1.

    Constants lie in the kernel of the spatial operator, so the error is
    purely temporal; returns the max-over-time L2 error against e^{-t}."""
    coeffs = ProblemCoefficients.isotropic(mesh)
    op = assemble_operator(mesh, coeffs)
    ones_b = np.ones((mesh.nr, mesh.nth))
    ones_s = np.ones(mesh.nth)
    sources = SourcePair(
        mesh, bulk=lambda t: -math.exp(-t) * ones_b, surface=lambda t: -math.exp(-t) * ones_s
    )
    traj = solve_trajectory(
        CoupledField.constant(mesh, 1.0), sources, 0.0, 1.0, steps, scheme, op
    )
    norm_one = norms(CoupledField.constant(mesh, 1.0), "L2")
    worst = 0.0
    for k, t in enumerate(traj.times):
        err = traj.states[k] - math.exp(-float(t))
        worst = max(worst, float(np.sqrt(err @ (op.mass * err))) / norm_one)
    return worst


def _spatial_case(radius: float, nr: int, nth: int, steps: int) -> float:
    """Radial manufactured solution y = e^{-t}(R^2 - r^2), trace zero.

    Bulk source F = e^{-t}(4 - (R^2 - r^2)), boundary source G = -2R e^{-t}
    (the conormal flux the boundary equation absorbs); trapezoidal stepping
    keeps the temporal error negligible against the spatial one."""
    from .geometry import build_disk_mesh

    mesh = build_disk_mesh(radius, nr, nth)
    coeffs = ProblemCoefficients.isotropic(mesh)
    op = assemble_operator(mesh, coeffs)
    profile = (radius**2 - mesh.r_centers**2)[:, None] * np.ones(mesh.nth)[None, :]
    ones_s = np.ones(mesh.nth)
    sources = SourcePair(
        mesh,
        bulk=lambda t: math.exp(-t) * (4.0 - profile),
        surface=lambda t: -2.0 * radius * math.exp(-t) * ones_s,
    )
    y0 = CoupledField(BulkField(mesh, profile), SurfaceField.zeros(mesh))
    t_end = 0.25
    traj = solve_trajectory(y0, sources, 0.0, t_end, steps, "trapezoidal", op)
    exact = math.exp(-t_end) * np.concatenate([profile.ravel(), np.zeros(mesh.nth)])
    err = traj.states[-1] - exact
    return float(np.sqrt(err @ (op.mass * err)))


def run_convergence(cfg: ExperimentConfig, out_dir: str) -> dict:
    """Temporal and spatial order studies; writes orders.csv and report.json."""
    out_dir = _start_run(out_dir)
    kind = cfg["convergence.kind"]
    rows = []
    report: dict = {"schema_version": 1}

    if kind in ("temporal", "both"):
        mesh = cfg.build_mesh(nr=8, nth=16)  # constants carry no spatial error
        for scheme in ("implicit_euler", "trapezoidal"):
            errs, dts = [], []
            for steps in cfg["convergence.temporal_steps"]:
                err = _temporal_case(mesh, scheme, steps)
                dt = 1.0 / steps
                order = (
                    math.log(errs[-1] / err) / math.log(dts[-1] / dt) if errs else math.nan
                )
                rows.append(("temporal", scheme, steps, dt, err, order))
                errs.append(err)
                dts.append(dt)
            slope = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
            report[f"temporal_order_{scheme}"] = slope
    if kind in ("spatial", "both"):
        errs, hs = [], []
        base_steps = 200
        levels = cfg["convergence.levels"]
        for nr, nth in levels:
            steps = base_steps * max(1, nr // levels[0][0])
            err = _spatial_case(cfg["mesh.radius"], nr, nth, steps)
            h = cfg["mesh.radius"] / nr
            order = math.log(errs[-1] / err) / math.log(hs[-1] / h) if errs else math.nan
            rows.append(("spatial", "trapezoidal", f"{nr}x{nth}", h, err, order))
            errs.append(err)
            hs.append(h)
        report["spatial_order"] = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])

    write_csv(
        os.path.join(out_dir, "orders.csv"),
        ["kind", "scheme", "resolution", "h_or_dt", "error", "order_vs_prev"],
        rows,
    )
    write_json(os.path.join(out_dir, "report.json"), report)
    _finish_run(out_dir, cfg, ["orders.csv", "report.json"])
    return report


# --------------------------------------------------------------------------
# weighted-inequality sweep


_SWEEP_COLUMNS = [
    "member", "s", "lam",
    "lhs_bulk_time", "lhs_bulk_div", "lhs_bulk_grad", "lhs_bulk_zero",
    "lhs_surf_time", "lhs_surf_div", "lhs_surf_grad", "lhs_surf_zero",
    "lhs_surf_conormal", "rhs_obs", "rhs_bulk_source", "rhs_surf_source",
    "lhs_total", "rhs_total", "ratio", "status",
]


def _sweep_once(cfg: ExperimentConfig, refine: int) -> list[dict]:
    mesh = cfg.build_mesh(nr=cfg["mesh.nr"] * refine, nth=cfg["mesh.nth"] * refine)
    coeffs = cfg.build_coefficients(mesh)
    op = assemble_operator(mesh, coeffs)
    t0, t_end, steps = cfg.window_on_grid()
    omega = cfg.mask(mesh, "carleman.omega")
    times = np.linspace(0.0, t_end, steps * refine + 1)
    t_obs = 0.5 * (t0 + t_end)

    def factory(rng: np.random.Generator) -> SourcePair:
        spec = random_separable_spec(rng)
        sep = materialize_separable(spec, mesh, times, t_obs)
        return sep.source_pair()

    return carleman_sweep(
        op,
        factory,
        cfg["carleman.s_grid"],
        cfg["carleman.lambda"],
        t0,
        t_end,
        steps * refine,
        omega,
        cfg["carleman.omega_prime_radius"] * mesh.radius,
        cfg["carleman.ensemble"],
        cfg["run.seed"],
        cfg["time.scheme"],
    )


def _max_ratios(rows: list[dict]) -> dict[str, float]:
    out: dict[str, float] = {}
    for row in rows:
        if row["status"] != "ok":
            continue
        key = format_float(row["s"])
        out[key] = max(out.get(key, 0.0), row["ratio"])
    return out


def run_carleman(cfg: ExperimentConfig, out_dir: str) -> dict:
    """Ensemble sweep of observed inequality ratios over the s grid."""
    out_dir = _start_run(out_dir)
    rows = _sweep_once(cfg, refine=1)
    write_csv(
        os.path.join(out_dir, "sweep.csv"),
        _SWEEP_COLUMNS,
        [[row[c] for c in _SWEEP_COLUMNS] for row in rows],
    )
    report = {
        "schema_version": 1,
        "lambda": cfg["carleman.lambda"],
        "ensemble": cfg["carleman.ensemble"],
        "max_ratio_per_s": _max_ratios(rows),
        "skipped_rows": sum(1 for r in rows if r["status"] != "ok"),
    }
    files = ["sweep.csv"]
    if cfg["carleman.refine"]:
        fine = _max_ratios(_sweep_once(cfg, refine=2))
        drift = {
            s: abs(fine[s] - coarse) / coarse
            for s, coarse in report["max_ratio_per_s"].items()
            if s in fine and coarse > 0.0
        }
        report["max_ratio_per_s_refined"] = fine
        report["ratio_drift_per_s"] = drift
        report["max_drift"] = max(drift.values(), default=math.nan)
    write_json(os.path.join(out_dir, "report.json"), report)
    files.append("report.json")
    _finish_run(out_dir, cfg, files)
    return report


# --------------------------------------------------------------------------
# reconstruction


def _known_profiles(mesh: DiskMesh):
    """Known time profiles for the reconstruction experiment: 1 + sin(t)/2,
    bounded below by 1/2, so the separable pair is admissible."""
    ones_b = np.ones((mesh.nr, mesh.nth))
    ones_s = np.ones(mesh.nth)

    def r_bulk(t: float) -> np.ndarray:
        return (1.0 + 0.5 * math.sin(t)) * ones_b

    def r_surf(t: float) -> np.ndarray:
        return (1.0 + 0.5 * math.sin(t)) * ones_s

    return r_bulk, r_surf


def _relative_l2(mesh: DiskMesh, f_hat, g_hat, f_true, g_true) -> float:
    num = float(
        np.sum(mesh.cell_areas * (f_hat - f_true) ** 2)
        + np.sum(mesh.node_measure * (g_hat - g_true) ** 2)
    )
    den = float(
        np.sum(mesh.cell_areas * f_true**2) + np.sum(mesh.node_measure * g_true**2)
    )
    return math.sqrt(num / den)


def run_reconstruct(cfg: ExperimentConfig, out_dir: str) -> dict:
    """In-basis target, Tikhonov inversion, optional noise sweep."""
    out_dir = _start_run(out_dir)
    mesh = cfg.build_mesh()
    coeffs = cfg.build_coefficients(mesh)
    op = assemble_operator(mesh, coeffs)
    t0, t_end, steps = cfg.window_on_grid()
    omega = cfg.mask(mesh, "inverse.omega")
    r_bulk, r_surf = _known_profiles(mesh)
    fmap = ForwardMap(
        op=op, r_bulk=r_bulk, r_surf=r_surf, t_end=t_end, steps=steps,
        t0=t0, omega_mask=omega, scheme=cfg["time.scheme"], rtol=cfg["time.rtol"],
    )
    n_rad, n_ang = cfg["inverse.bulk_radial"], cfg["inverse.bulk_angular"]
    n_surf = cfg["inverse.surface_basis"]
    bulk_fns = bulk_basis(mesh, n_rad, n_ang)
    surf_fns = surface_basis(mesh, n_surf)

    rng = np.random.default_rng([cfg["run.seed"], 11])
    c_true = rng.standard_normal(len(bulk_fns) + len(surf_fns))
    f_true = np.tensordot(c_true[: len(bulk_fns)], bulk_fns, axes=1)
    g_true = c_true[len(bulk_fns):] @ surf_fns

    matrix = assemble_probing_matrix(fmap, bulk_fns, surf_fns)
    clean = fmap.apply(f_true, g_true)
    eps = cfg["inverse.epsilon"]
    result = reconstruct(
        clean, fmap, eps, n_rad, n_ang, n_surf,
        cap_bulk=cfg["inverse.cap_bulk"], cap_surface=cfg["inverse.cap_surface"],
        probing_matrix=matrix,
    )
    noiseless_error = _relative_l2(mesh, result.f_hat.values, result.g_hat.values, f_true, g_true)

    from .io import field_to_csv

    field_to_csv(os.path.join(out_dir, "recon_bulk.csv"), result.f_hat)
    field_to_csv(os.path.join(out_dir, "recon_surface.csv"), result.g_hat)
    files = ["recon_bulk.csv", "recon_surface.csv"]

    noise_rows = []
    slope = math.nan
    levels = cfg["inverse.noise_levels"]
    n_draws = 6  # RMS over draws keeps the slope fit free of draw-to-draw variance
    if levels:
        errs = []
        for k_noise, level in enumerate(levels):
            draw_errs, draw_res = [], []
            for draw in range(n_draws):
                noise_rng = np.random.default_rng([cfg["run.seed"], 13, k_noise, draw])
                noisy = clean.with_noise(noise_rng, float(level))
                res = reconstruct(
                    noisy, fmap, eps, n_rad, n_ang, n_surf,
                    cap_bulk=cfg["inverse.cap_bulk"], cap_surface=cfg["inverse.cap_surface"],
                    probing_matrix=matrix,
                )
                draw_errs.append(
                    _relative_l2(mesh, res.f_hat.values, res.g_hat.values, f_true, g_true)
                )
                draw_res.append(res.residual)
            err = float(np.sqrt(np.mean(np.square(draw_errs))))
            errs.append(err)
            noise_rows.append((level, err, float(np.mean(draw_res))))
        if len(levels) >= 2:
            slope = float(np.polyfit(np.log(levels), np.log(errs), 1)[0])
        write_csv(
            os.path.join(out_dir, "noise_sweep.csv"),
            ["noise_level", "relative_error", "residual"],
            noise_rows,
        )
        files.append("noise_sweep.csv")

    report = {
        "schema_version": 1,
        **result.diagnostics(),
        "noiseless_relative_error": noiseless_error,
        "noise_levels": list(levels),
        "noise_errors": [row[1] for row in noise_rows],
        "noise_slope": slope,
    }
    write_json(os.path.join(out_dir, "diagnostics.json"), report)
    files.append("diagnostics.json")
    _finish_run(out_dir, cfg, files)
    return report


# --------------------------------------------------------------------------
# stability ensemble


def _stability_once(cfg: ExperimentConfig, refine: int):
    mesh = cfg.build_mesh(nr=cfg["mesh.nr"] * refine, nth=cfg["mesh.nth"] * refine)
    coeffs = cfg.build_coefficients(mesh)
    op = assemble_operator(mesh, coeffs)
    t0, t_end, steps = cfg.window_on_grid()
    omega = cfg.mask(mesh, "inverse.omega")
    return stability_experiment(
        op, t_end, steps * refine, t0, omega,
        cfg["inverse.ensemble"], cfg["inverse.diff_pairs"], cfg["run.seed"],
        cfg["time.scheme"],
    )


def run_stability(cfg: ExperimentConfig, out_dir: str) -> dict:
    """Stability-ratio ensemble with the uniqueness audit."""
    out_dir = _start_run(out_dir)
    base = _stability_once(cfg, refine=1)
    report = base.to_dict()
    if cfg["inverse.refine"]:
        fine = _stability_once(cfg, refine=2)
        coarse_max = base.single_stats["max"]
        fine_max = fine.single_stats["max"]
        report["refined_single_stats"] = fine.single_stats
        report["refined_diff_stats"] = fine.diff_stats
        report["max_rho_drift"] = abs(fine_max - coarse_max) / coarse_max
    rows = [
        ("single", row["member"], row["rho"], row["source_norm"], row["obs_norm"], row["status"])
        for row in base.single_rows
    ] + [
        ("difference", row["pair"], row["rho"], row["source_norm"], row["obs_norm"], row["status"])
        for row in base.diff_rows
    ]
    write_csv(
        os.path.join(out_dir, "ratios.csv"),
        ["kind", "index", "rho", "source_norm", "obs_norm", "status"],
        rows,
    )
    write_json(os.path.join(out_dir, "stability.json"), report)
    _finish_run(out_dir, cfg, ["ratios.csv", "stability.json"])
    return report

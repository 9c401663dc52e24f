"""Acceptance suite: one test per shipped guarantee, at desk scale.

Every test prints a single `[criterion NN] PASS ...` line on success (visible
with `pytest -s` or in the captured-output section), and pins its tolerance
in the assertion itself.  Desk scale means a 32x64 mesh and 200 time steps
unless the guarantee itself names another resolution.
"""

import math
import time

import numpy as np
import pytest

from bslab import (
    CoupledField,
    SourcePair,
    SurfaceField,
    assemble_operator,
    bilinear_form,
    build_disk_mesh,
    build_eta0,
    conormal_derivative,
    conormal_identity_check,
    norms,
    preset,
    solve_trajectory,
    validate_coefficients,
)
from bslab.carleman import CarlemanWeightSet, carleman_sides, conormal_bound_margin
from bslab.config import ExperimentConfig
from bslab.experiments import (
    _max_ratios,
    _spatial_case,
    _stability_once,
    _sweep_once,
    _temporal_case,
    run_reconstruct,
)
from bslab.geometry import disk_mask, surface_divergence, surface_gradient
from bslab.inverse import materialize_separable, random_separable_spec
from bslab.stepping import TimeStepper, Trajectory, time_derivative

PRESETS = ("identity", "radial_scalar", "anisotropic", "drifted", "random_smooth")


def report(k: int, message: str) -> None:
    print(f"[criterion {k:02d}] PASS {message}")


@pytest.fixture(scope="module")
def desk():
    mesh = build_disk_mesh(1.0, 32, 64)
    return mesh


@pytest.fixture(scope="module")
def carleman_cfg():
    return ExperimentConfig.from_text(
        """
        mesh.nr = 32
        mesh.nth = 64
        time.t_end = 3.5
        time.steps = 350
        window.t0 = 0.5
        carleman.ensemble = 20
        run.seed = 2024
        """
    )


@pytest.fixture(scope="module")
def carleman_rows(carleman_cfg):
    return _sweep_once(carleman_cfg, refine=1)


@pytest.fixture(scope="module")
def stability_cfg():
    return ExperimentConfig.from_text(
        """
        mesh.nr = 32
        mesh.nth = 64
        time.t_end = 1.0
        time.steps = 200
        window.t0 = 0.5
        inverse.ensemble = 50
        inverse.diff_pairs = 25
        run.seed = 77
        """
    )


@pytest.fixture(scope="module")
def stability_base(stability_cfg):
    return _stability_once(stability_cfg, refine=1)


def test_criterion_01_transpose_identity(desk):
    """form(u, v) equals < -A u, v > to 1e-12 over 100 random coupled pairs."""
    c = preset("drifted", desk)
    op = assemble_operator(desk, c)
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(100):
        u = CoupledField.from_vector(desk, rng.standard_normal(desk.n_dof))
        v = CoupledField.from_vector(desk, rng.standard_normal(desk.n_dof))
        a = bilinear_form(c, u, v)
        b = -op.inner(op.apply(u.to_vector()), v.to_vector())
        scale = norms(u, "H1") * norms(v, "H1")
        worst = max(worst, abs(a - b) / scale)
        assert abs(a - b) <= 1e-12 * scale
    report(1, f"transpose identity over 100 pairs, worst scaled residual {worst:.2e}")


def test_criterion_02_coercivity(desk):
    """form(u,u) + mu ||u||^2 >= (beta0/2) ||u||_H1^2 for 100 random u, 5 presets."""
    rng = np.random.default_rng(202)
    margins = []
    for name in PRESETS:
        c = preset(name, desk)
        rep = validate_coefficients(c, desk)
        for _ in range(100):
            u = CoupledField.from_vector(desk, rng.standard_normal(desk.n_dof))
            lhs = bilinear_form(c, u, u) + rep.mu * norms(u, "L2") ** 2
            rhs = 0.5 * rep.beta0 * norms(u, "H1") ** 2
            assert lhs >= rhs - 1e-10 * max(1.0, abs(lhs))
            margins.append((lhs - rhs) / max(1.0, rhs))
    report(2, f"coercivity for 5 presets x 100 fields, min margin {min(margins):.3f}")


def test_criterion_03_divergence_formula():
    """Discrete tangential integration by parts to 1e-12 on 3 mesh sizes."""
    rng = np.random.default_rng(303)
    worst = 0.0
    for radius, nr, nth in ((1.0, 8, 16), (1.0, 16, 32), (2.0, 32, 64)):
        mesh = build_disk_mesh(radius, nr, nth)
        w = mesh.node_measure
        for _ in range(100):
            z = SurfaceField(mesh, rng.standard_normal(mesh.nth))
            x = SurfaceField(mesh, rng.standard_normal(mesh.nth), kind="tangent")
            pairing = float(
                np.sum(surface_divergence(x).values * z.values * w)
                + np.sum(x.values * surface_gradient(z).values * w)
            )
            nx = math.sqrt(float(np.sum(w * x.values**2)))
            nz = math.sqrt(float(np.sum(w * z.values**2)))
            worst = max(worst, abs(pairing) / (nx * nz))
            assert abs(pairing) <= 1e-12 * nx * nz
    report(3, f"divergence formula on 3 meshes x 100 pairs, worst {worst:.2e}")


def test_criterion_04_conormal_identity_and_bound(desk):
    """Boundary gradient-splitting identity to 1e-12; conormal bound for eta0."""
    rng = np.random.default_rng(404)
    worst = 0.0
    for seed in range(20):
        c = preset("random_smooth", desk, seed=seed)
        psi = CoupledField.from_vector(desk, rng.standard_normal(desk.n_dof))
        r = conormal_identity_check(psi, c)
        worst = max(worst, r)
        assert r <= 1e-12
    eta0 = build_eta0(desk, 0.2)
    for name in PRESETS:
        c = preset(name, desk)
        rep = validate_coefficients(c, desk)
        margin = conormal_bound_margin(eta0, c, rep.beta0)
        dnu_a = conormal_derivative(eta0.coupled(), c).values
        assert np.all(margin >= -1e-12)
        assert np.all(dnu_a < 0.0)
    report(4, f"conormal identity (20 pairs, worst {worst:.2e}) and sign bound (5 presets)")


def test_criterion_05_forward_convergence():
    """Temporal orders >= 0.9 (implicit Euler) / >= 1.7 (trapezoidal); spatial >= 1.7."""
    mesh = build_disk_mesh(1.0, 8, 16)
    orders = {}
    for scheme, floor in (("implicit_euler", 0.9), ("trapezoidal", 1.7)):
        errs, dts = [], []
        for steps in (25, 50, 100, 200):
            errs.append(_temporal_case(mesh, scheme, steps))
            dts.append(1.0 / steps)
        slope = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
        orders[scheme] = slope
        assert slope >= floor
    errs, hs = [], []
    for nr, nth, steps in ((16, 32, 200), (32, 64, 400), (64, 128, 800)):
        errs.append(_spatial_case(1.0, nr, nth, steps))
        hs.append(1.0 / nr)
    spatial = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    assert spatial >= 1.7
    report(
        5,
        f"orders: euler {orders['implicit_euler']:.2f}, "
        f"trapezoidal {orders['trapezoidal']:.2f}, spatial {spatial:.2f}",
    )


def test_criterion_06_energy_dissipation(desk):
    """Monotone L2 decay with zero sources, nonnegative potentials, no drift."""
    c = preset("anisotropic", desk)  # p, q >= 0; B = b = 0
    op = assemble_operator(desk, c)
    rng = np.random.default_rng(606)
    for _ in range(10):
        y0 = CoupledField.from_vector(desk, rng.standard_normal(desk.n_dof))
        traj = solve_trajectory(
            y0, SourcePair.zero(desk), 0.0, 1.0, 200, "implicit_euler", op
        )
        ns = [norms(traj.field(k), "L2") for k in range(0, len(traj.times), 10)]
        for a, b in zip(ns, ns[1:]):
            assert b <= a * (1.0 + 1e-12)
    report(6, "monotone L2 decay across 10 random initial states")


def test_criterion_07_duhamel_oracle():
    """One implicit step matches the dense mild solution to O(dt^2) on 3x6."""
    import scipy.linalg

    mesh = build_disk_mesh(1.0, 3, 6)
    op = assemble_operator(mesh, preset("anisotropic", mesh))
    s_dense = op.generator.toarray()
    n = mesh.n_dof
    rng = np.random.default_rng(707)
    y0 = rng.standard_normal(n)
    f = rng.standard_normal(n)

    def mild(dt):
        aug = np.zeros((n + 1, n + 1))
        aug[:n, :n] = dt * s_dense
        aug[:n, n] = dt * f
        e = scipy.linalg.expm(aug)
        return e[:n, :n] @ y0 + e[:n, n]

    consts = []
    for dt in (2e-4, 1e-4, 5e-5):
        stepper = TimeStepper(op, dt, "implicit_euler")
        y1, _ = stepper.advance(y0, f, f)
        err = float(np.linalg.norm(y1 - mild(dt)))
        consts.append(err / dt**2)
    assert max(consts) <= 1.5 * min(consts)  # bounded O(dt^2) constant
    report(7, f"mild-solution agreement, err/dt^2 in [{min(consts):.3g}, {max(consts):.3g}]")


def test_criterion_08_carleman_surrogate(carleman_cfg, carleman_rows):
    """Finite inequality ratios, < 25% refinement drift, exact 4x homogeneity."""
    rows = carleman_rows
    assert all(row["status"] == "ok" for row in rows)
    for row in rows:
        for key, val in row.items():
            if key.startswith(("lhs_", "rhs_")):
                assert math.isfinite(val) and val >= 0.0
    coarse = _max_ratios(rows)
    assert len(coarse) == 5
    max_ratio = max(coarse.values())
    assert math.isfinite(max_ratio)
    # every individual pair satisfies lhs <= max_ratio * rhs by construction
    for row in rows:
        assert row["lhs_total"] <= max_ratio * row["rhs_total"] * (1 + 1e-12)

    fine = _max_ratios(_sweep_once(carleman_cfg, refine=2))
    drift = max(abs(fine[s] - coarse[s]) / coarse[s] for s in coarse)
    assert drift < 0.25

    # homogeneity on a solved trajectory: doubling z multiplies each term by 4
    cfg = carleman_cfg
    mesh = cfg.build_mesh()
    op = assemble_operator(mesh, cfg.build_coefficients(mesh))
    t0, t_end, steps = cfg.window_on_grid()
    times = np.linspace(0.0, t_end, steps + 1)
    spec = random_separable_spec(np.random.default_rng([2024, 0]))
    sep = materialize_separable(spec, mesh, times, 0.5 * (t0 + t_end))
    pair = sep.source_pair()
    traj = solve_trajectory(CoupledField.zeros(mesh), pair, 0.0, t_end, steps,
                            "implicit_euler", op)
    z = time_derivative(traj)
    z2 = Trajectory(mesh=mesh, times=z.times, states=2.0 * z.states,
                    scheme=z.scheme, residuals=z.residuals)
    weights = CarlemanWeightSet(build_eta0(mesh, 0.2), s=2.0, lam=1.5, t0=t0, t_end=t_end)
    omega = cfg.mask(mesh, "carleman.omega")
    one = carleman_sides(z, weights, omega, op, pair.bulk_dt, pair.surface_dt).as_dict()
    four = carleman_sides(z2, weights, omega, op,
                          lambda t: 2.0 * pair.bulk_dt(t),
                          lambda t: 2.0 * pair.surface_dt(t)).as_dict()
    for name, val in one.items():
        if val == 0.0:
            assert four[name] == 0.0
        else:
            assert abs(four[name] - 4.0 * val) <= 1e-10 * abs(val)
    report(8, f"max ratio {max_ratio:.3f}, refinement drift {drift:.2%}, homogeneity exact")


def test_criterion_09_stability_surrogate(stability_cfg, stability_base):
    """Stability ratios finite and scale-invariant; < 25% refinement drift."""
    base = stability_base
    assert base.single_stats["count"] == 50
    assert base.diff_stats["count"] == 25
    assert math.isfinite(base.single_stats["max"])
    assert math.isfinite(base.diff_stats["max"])

    fine = _stability_once(stability_cfg, refine=2)
    drift_single = abs(fine.single_stats["max"] - base.single_stats["max"]) / base.single_stats["max"]
    drift_diff = abs(fine.diff_stats["max"] - base.diff_stats["max"]) / base.diff_stats["max"]
    assert drift_single < 0.25
    assert drift_diff < 0.25

    # scale invariance: both sides of the ratio are 1-homogeneous
    from bslab.inverse import observe, source_norm_on_grid

    cfg = stability_cfg
    mesh = cfg.build_mesh()
    op = assemble_operator(mesh, cfg.build_coefficients(mesh))
    t0, t_end, steps = cfg.window_on_grid()
    times = np.linspace(0.0, t_end, steps + 1)
    omega = cfg.mask(mesh, "inverse.omega")
    sep = materialize_separable(
        random_separable_spec(np.random.default_rng(909)), mesh, times, 0.75
    )

    def rho_of(scale):
        pair = SourcePair(
            mesh,
            bulk=lambda t: scale * sep.f * sep.r_bulk(t),
            surface=lambda t: scale * sep.g * sep.r_surf(t),
        )
        traj = solve_trajectory(CoupledField.zeros(mesh), pair, 0.0, t_end, steps,
                                "implicit_euler", op)
        return source_norm_on_grid(pair, times) / observe(traj, t0, omega).norm_sum

    r1, r2, r3 = rho_of(1.0), rho_of(2.0), rho_of(3.0)
    assert abs(r2 - r1) <= 1e-10 * r1
    assert abs(r3 - r1) <= 1e-10 * r1
    report(
        9,
        f"max rho {base.single_stats['max']:.3f} (drift {drift_single:.2%}), "
        f"diff max {base.diff_stats['max']:.3f} (drift {drift_diff:.2%}), scale-invariant",
    )


def test_criterion_10_reconstruction(tmp_path):
    """In-basis recovery <= 1e-3 noiseless; noise slope 1.0 +- 0.25; <= 5 min."""
    cfg = ExperimentConfig.from_text(
        """
        mesh.nr = 32
        mesh.nth = 64
        time.t_end = 1.0
        time.steps = 200
        window.t0 = 0.5
        inverse.epsilon = 1e-10
        inverse.noise_levels = 1e-4,3e-4,1e-3,3e-3,1e-2
        run.seed = 10
        """
    )
    t_start = time.monotonic()
    rep = run_reconstruct(cfg, str(tmp_path / "recon"))
    elapsed = time.monotonic() - t_start
    assert rep["n_bulk"] == 64 and rep["n_surface"] == 16
    assert rep["noiseless_relative_error"] <= 1e-3
    assert 0.75 <= rep["noise_slope"] <= 1.25
    assert elapsed <= 300.0
    report(
        10,
        f"noiseless error {rep['noiseless_relative_error']:.2e}, "
        f"slope {rep['noise_slope']:.3f}, {elapsed:.1f}s",
    )


def test_criterion_11_uniqueness(stability_base):
    """No near-identical observations with distinct sources in the ensemble."""
    uniq = stability_base.uniqueness
    assert uniq["checked_pairs"] == 50 * 49 // 2
    assert uniq["violations"] == []
    report(
        11,
        f"uniqueness audit over {uniq['checked_pairs']} pairs, "
        f"min observation distance {uniq['min_observation_distance']:.3e}",
    )


TINY_COMMON = """
mesh.nr = 6
mesh.nth = 12
time.t_end = 1.0
time.steps = 20
window.t0 = 0.5
carleman.ensemble = 2
carleman.s_grid = 2,4
inverse.ensemble = 3
inverse.diff_pairs = 2
inverse.bulk_radial = 2
inverse.bulk_angular = 3
inverse.surface_basis = 4
inverse.noise_levels = 1e-3
convergence.levels = 6x12,12x24
convergence.temporal_steps = 10,20
"""

TINY_BY_SUB = {
    "carleman": """
mesh.nr = 6
mesh.nth = 12
time.t_end = 3.0
time.steps = 30
window.t0 = 0.6
carleman.ensemble = 2
carleman.s_grid = 2,4
""",
}


def test_criterion_12_determinism(tmp_path):
    """Fixed config and seed reproduce every result file bitwise."""
    from bslab.cli import main
    from bslab.io import read_json

    for sub in ("forward", "convergence", "carleman", "reconstruct", "stability"):
        cfg_path = tmp_path / f"{sub}.cfg"
        cfg_path.write_text(TINY_BY_SUB.get(sub, TINY_COMMON))
        outs = []
        for run in (1, 2):
            out = tmp_path / f"{sub}_{run}"
            assert main([sub, "--config", str(cfg_path), "--out", str(out), "--seed", "5"]) == 0
            outs.append(out)
        names = sorted(p.name for p in outs[0].iterdir())
        assert names == sorted(p.name for p in outs[1].iterdir())
        for name in names:
            if name == "manifest.json":
                docs = [read_json(out / name) for out in outs]
                for doc in docs:
                    doc.pop("created_utc")
                assert docs[0] == docs[1]
            else:
                assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    report(12, "bitwise-identical outputs for all 5 subcommands")

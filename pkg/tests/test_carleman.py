import math

import numpy as np
import pytest

from bslab import (
    BulkField,
    CoupledField,
    SourcePair,
    SurfaceField,
    assemble_operator,
    build_disk_mesh,
    build_eta0,
    carleman_sides,
    carleman_sweep,
    disk_mask,
    preset,
    validate_coefficients,
)
from bslab.carleman import CarlemanWeightSet, conormal_bound_margin
from bslab.stepping import Trajectory


@pytest.fixture(scope="module")
def eta16():
    return build_eta0(build_disk_mesh(1.0, 16, 32), 0.2)


class TestEta0:
    def test_disk_profile_values(self, eta16):
        mesh = eta16.mesh
        expected = 1.0 - mesh.r_centers[:, None] ** 2
        assert np.allclose(eta16.values, expected, rtol=0, atol=1e-15)
        assert np.min(eta16.values) > 0.0
        assert np.all(eta16.coupled().surface.values == 0.0)

    def test_gradient_bound_outside_omega_prime(self):
        mesh = build_disk_mesh(1.0, 32, 64)
        eta = build_eta0(mesh, 0.2)
        outside = ~eta.omega_prime_mask
        min_grad = np.min(np.abs(eta.grad_r)[outside])
        first_center = mesh.r_centers[mesh.r_centers >= 0.2][0]
        assert min_grad == pytest.approx(2 * first_center)
        assert abs(min_grad - 0.4) <= 2 * mesh.dr

    def test_c_bound_scales_with_radius(self):
        assert build_eta0(build_disk_mesh(1.0, 8, 16), 0.2).c_bound == 2.0
        assert build_eta0(build_disk_mesh(2.0, 8, 16), 0.3).c_bound == 4.0

    def test_radius_out_of_range(self):
        mesh = build_disk_mesh(1.0, 8, 16)
        for bad in (0.0, -0.1, 1.0, 1.5):
            with pytest.raises(ValueError):
                build_eta0(mesh, bad)

    def test_conormal_bound_for_random_elliptic(self, eta16):
        from bslab.operators import conormal_derivative

        mesh = eta16.mesh
        for seed in range(5):
            c = preset("random_smooth", mesh, seed=seed)
            rep = validate_coefficients(c, mesh)
            margin = conormal_bound_margin(eta16, c, rep.beta0)
            assert np.all(margin >= -1e-12)
            dnu_a = conormal_derivative(eta16.coupled(), c).values
            assert np.all(dnu_a < 0.0)


class TestWeights:
    def test_boundary_alpha_at_midpoint(self):
        # unit disk, lambda = 1, window (0, 2): denominator is exactly 1
        mesh = build_disk_mesh(1.0, 8, 16)
        w = CarlemanWeightSet(build_eta0(mesh, 0.2), s=2.0, lam=1.0, t0=0.0, t_end=2.0)
        alpha, xi, _ = w.eval_at(1.0, ("node", 0))
        assert alpha == pytest.approx(math.exp(2.0) - 1.0, rel=1e-14)
        assert xi == pytest.approx(1.0, rel=1e-14)

    def test_weight_vanishes_toward_window_ends(self, eta16):
        w = CarlemanWeightSet(eta16, s=4.0, lam=1.5, t0=0.0, t_end=2.0)
        assert w.weight_boundary(1e-7) == 0.0
        assert np.all(w.weight_bulk(2.0 - 1e-7) == 0.0)
        mid = w.weight_bulk(1.0)
        assert np.all(mid > 0.0)

    def test_outside_window_rejected(self, eta16):
        w = CarlemanWeightSet(eta16, s=2.0, lam=1.5, t0=0.5, t_end=1.5)
        for t in (0.5, 1.5, 0.0, 2.0):
            with pytest.raises(ValueError):
                w.alpha_bulk(t)

    def test_xi_dominated_by_window_square(self, eta16):
        # xi <= (T - t0)^2 xi^2 pointwise on a sampled grid
        t0, t_end = 0.25, 1.75
        w = CarlemanWeightSet(eta16, s=2.0, lam=1.5, t0=t0, t_end=t_end)
        for t in np.linspace(t0 + 1e-3, t_end - 1e-3, 41):
            xi = w.xi_bulk(float(t))
            assert np.all(xi <= (t_end - t0) ** 2 * xi**2 * (1 + 1e-12))

    def test_alpha_gradient_identity(self, eta16):
        w = CarlemanWeightSet(eta16, s=2.0, lam=1.5, t0=0.0, t_end=2.0)
        for t in (0.3, 1.0, 1.7):
            lhs = w.alpha_radial_gradient(t)
            rhs = -w.lam * w.xi_bulk(t) * eta16.grad_r
            assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))

    def test_alpha_constant_on_boundary(self, eta16):
        # eta0 vanishes on the circle, so alpha has no tangential variation
        w = CarlemanWeightSet(eta16, s=2.0, lam=1.5, t0=0.0, t_end=2.0)
        a0 = w.alpha_boundary(0.7)
        assert a0 == w.alpha_boundary(0.7)

    def test_alpha_minimized_at_window_midpoint(self, eta16):
        t0, t_end, steps = 0.5, 2.5, 100
        w = CarlemanWeightSet(eta16, s=2.0, lam=1.5, t0=t0, t_end=t_end)
        times = np.linspace(t0, t_end, steps + 1)[1:-1]
        vals = [w.alpha_boundary(float(t)) for t in times]
        k_min = int(np.argmin(vals))
        k_mid = np.searchsorted(times, 0.5 * (t0 + t_end))
        assert abs(k_min - k_mid) <= 1

    def test_time_derivative_bounds(self, eta16):
        # |d/dt alpha| <= (T - t0) e^{2 lam M} xi^2 and
        # |d/dt xi| <= (T - t0) xi^2, from the closed-form derivative
        t0, t_end, lam = 0.25, 2.25, 1.5
        w = CarlemanWeightSet(eta16, s=2.0, lam=lam, t0=t0, t_end=t_end)
        sup = math.exp(2 * lam * eta16.sup_norm)
        for t in np.linspace(t0 + 1e-3, t_end - 1e-3, 31):
            den = (t - t0) * (t_end - t)
            dden = t0 + t_end - 2 * t
            num_alpha = sup - np.exp(lam * eta16.values)
            dalpha = np.abs(num_alpha * dden / den**2)
            dxi = np.abs(np.exp(lam * eta16.values) * dden / den**2)
            xi2 = w.xi_bulk(float(t)) ** 2
            assert np.all(dalpha <= (t_end - t0) * sup * xi2 * (1 + 1e-12))
            assert np.all(dxi <= (t_end - t0) * xi2 * (1 + 1e-12))

    def test_sigma_bounds(self, eta16):
        mesh = eta16.mesh
        c = preset("random_smooth", mesh, seed=3)
        rep = validate_coefficients(c, mesh)
        w = CarlemanWeightSet(eta16, s=2.0, lam=1.5, t0=0.0, t_end=1.0)
        sigma = w.sigma(c)
        lower = rep.beta0 * eta16.grad_r**2
        assert np.all(sigma >= lower - 1e-14)
        assert np.isfinite(sigma).all()

    def test_parameter_validation(self, eta16):
        with pytest.raises(ValueError):
            CarlemanWeightSet(eta16, s=-1.0, lam=1.5, t0=0.0, t_end=1.0)
        with pytest.raises(ValueError):
            CarlemanWeightSet(eta16, s=1.0, lam=1.5, t0=1.0, t_end=1.0)


def synthetic_bump_trajectory(mesh, omega_mask, t0, t_end, steps):
    """z supported inside omega and vanishing near the window ends."""
    times = np.linspace(t0, t_end, steps + 1)
    chi = np.sin(np.pi * (times - t0) / (t_end - t0)) ** 2
    bump = np.where(omega_mask, 1.0, 0.0)
    states = np.zeros((steps + 1, mesh.n_dof))
    for k in range(steps + 1):
        states[k, : mesh.n_cells] = (chi[k] * bump).ravel()
    return Trajectory(mesh=mesh, times=times, states=states, scheme="synthetic",
                      residuals=np.zeros(steps))


class TestSides:
    def test_zero_trajectory_all_terms_zero(self, eta16):
        mesh = eta16.mesh
        op = assemble_operator(mesh, preset("identity", mesh))
        traj = synthetic_bump_trajectory(mesh, np.zeros((mesh.nr, mesh.nth), bool) | False,
                                         0.5, 2.5, 40)
        traj.states[:] = 0.0
        w = CarlemanWeightSet(eta16, s=2.0, lam=1.5, t0=0.5, t_end=2.5)
        sides = carleman_sides(traj, w, disk_mask(mesh, 0.45), op)
        assert sides.lhs_total == 0.0
        assert sides.rhs_total == 0.0
        assert math.isnan(sides.ratio)

    def test_localized_bump_observation_positive(self, eta16):
        mesh = eta16.mesh
        op = assemble_operator(mesh, preset("identity", mesh))
        omega = disk_mask(mesh, 0.45)
        traj = synthetic_bump_trajectory(mesh, omega, 0.5, 2.5, 60)
        w = CarlemanWeightSet(eta16, s=2.0, lam=1.5, t0=0.5, t_end=2.5)
        sides = carleman_sides(traj, w, omega, op)
        assert math.isfinite(sides.lhs_total) and sides.lhs_total > 0.0
        assert sides.rhs_obs > 0.0

    def test_quadratic_homogeneity(self, eta16):
        mesh = eta16.mesh
        op = assemble_operator(mesh, preset("identity", mesh))
        omega = disk_mask(mesh, 0.45)
        traj = synthetic_bump_trajectory(mesh, omega, 0.5, 2.5, 60)
        doubled = Trajectory(mesh=mesh, times=traj.times, states=2.0 * traj.states,
                             scheme="synthetic", residuals=traj.residuals)
        w = CarlemanWeightSet(eta16, s=2.0, lam=1.5, t0=0.5, t_end=2.5)
        a = carleman_sides(traj, w, omega, op).as_dict()
        b = carleman_sides(doubled, w, omega, op).as_dict()
        for name, val in a.items():
            if val == 0.0:
                assert b[name] == 0.0
            else:
                assert abs(b[name] - 4.0 * val) <= 1e-10 * abs(val)

    def test_window_not_covered_rejected(self, eta16):
        mesh = eta16.mesh
        op = assemble_operator(mesh, preset("identity", mesh))
        omega = disk_mask(mesh, 0.45)
        traj = synthetic_bump_trajectory(mesh, omega, 0.5, 1.5, 20)
        w = CarlemanWeightSet(eta16, s=2.0, lam=1.5, t0=0.0, t_end=2.0)
        with pytest.raises(ValueError):
            carleman_sides(traj, w, omega, op)


class TestSweep:
    def _run(self, seed=11, ensemble=2):
        mesh = build_disk_mesh(1.0, 8, 16)
        op = assemble_operator(mesh, preset("identity", mesh))
        times = np.linspace(0.0, 2.5, 51)

        def factory(rng):
            from bslab.inverse import materialize_separable, random_separable_spec

            spec = random_separable_spec(rng)
            return materialize_separable(spec, mesh, times, 1.5).source_pair()

        return carleman_sweep(
            op, factory, (2.0, 4.0), 1.5, 0.5, 2.5, 50, disk_mask(mesh, 0.45),
            0.2, ensemble, seed,
        )

    def test_deterministic_for_fixed_seed(self):
        rows1 = self._run()
        rows2 = self._run()
        assert rows1 == rows2

    def test_all_rows_ok_and_finite(self):
        for row in self._run():
            assert row["status"] == "ok"
            assert math.isfinite(row["ratio"])

    def test_zero_source_reported_skipped(self):
        mesh = build_disk_mesh(1.0, 8, 16)
        op = assemble_operator(mesh, preset("identity", mesh))

        def zero_factory(rng):
            zb = np.zeros((mesh.nr, mesh.nth))
            zs = np.zeros(mesh.nth)
            return SourcePair(mesh, lambda t: zb, lambda t: zs,
                              lambda t: zb, lambda t: zs)

        rows = carleman_sweep(
            op, zero_factory, (2.0,), 1.5, 0.5, 2.5, 50, disk_mask(mesh, 0.45),
            0.2, 1, 0,
        )
        assert all(row["status"] == "skipped" for row in rows)

    def test_s_grid_validation(self):
        mesh = build_disk_mesh(1.0, 8, 16)
        op = assemble_operator(mesh, preset("identity", mesh))
        with pytest.raises(ValueError):
            carleman_sweep(op, lambda rng: SourcePair.zero(mesh), (4.0, 2.0), 1.5,
                           0.5, 2.5, 50, disk_mask(mesh, 0.45), 0.2, 1, 0)
        with pytest.raises(ValueError):
            carleman_sweep(op, lambda rng: SourcePair.zero(mesh), (0.5,), 1.5,
                           0.5, 2.5, 50, disk_mask(mesh, 0.45), 0.2, 1, 0)

    def test_sources_must_carry_derivatives(self):
        mesh = build_disk_mesh(1.0, 8, 16)
        op = assemble_operator(mesh, preset("identity", mesh))
        zb = np.zeros((mesh.nr, mesh.nth))
        zs = np.zeros(mesh.nth)

        def factory(rng):
            return SourcePair(mesh, lambda t: zb, lambda t: zs)

        with pytest.raises(ValueError):
            carleman_sweep(op, factory, (2.0,), 1.5, 0.5, 2.5, 50,
                           disk_mask(mesh, 0.45), 0.2, 1, 0)

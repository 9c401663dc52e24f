import math

import numpy as np
import pytest

from bslab import (
    BulkField,
    CoupledField,
    SurfaceField,
    apply_operator,
    assemble_operator,
    bilinear_form,
    build_disk_mesh,
    conormal_derivative,
    conormal_identity_check,
    norms,
    preset,
    validate_coefficients,
)
from bslab.coefficients import ProblemCoefficients


def radial_paraboloid(mesh):
    """Coupled field with bulk R^2 - r^2 and zero trace."""
    prof = (mesh.radius**2 - mesh.r_centers**2)[:, None] * np.ones(mesh.nth)
    return CoupledField(BulkField(mesh, prof), SurfaceField.zeros(mesh))


def random_coupled(mesh, rng):
    return CoupledField.from_vector(mesh, rng.standard_normal(mesh.n_dof))


class TestOperatorAction:
    def test_constants_in_kernel_without_potentials(self, mesh16):
        op = assemble_operator(mesh16, preset("identity", mesh16))
        out = apply_operator(op, CoupledField.constant(mesh16, 1.0))
        assert np.max(np.abs(out.to_vector())) <= 1e-12

    def test_potential_only_action_on_constants(self, mesh16):
        c = ProblemCoefficients.isotropic(mesh16, p=2.0, q=3.0)
        op = assemble_operator(mesh16, c)
        out = apply_operator(op, CoupledField.constant(mesh16, 1.0)).to_vector()
        expected = np.concatenate(
            [-2.0 * np.ones(mesh16.n_cells), -3.0 * np.ones(mesh16.nth)]
        )
        assert np.max(np.abs(out - expected)) <= 1e-12

    def test_surface_row_equals_face_flux_oracle(self, desk_mesh):
        mesh = desk_mesh
        op = assemble_operator(mesh, preset("identity", mesh))
        u = radial_paraboloid(mesh)
        out = apply_operator(op, u).to_vector()[mesh.n_cells:]
        # independent recomputation of the boundary-face flux density
        dr, dth, r = mesh.dr, mesh.dth, mesh.radius
        g_r = (0.0 - u.bulk.values[-1, :]) / (0.5 * dr)
        w_b = (r - 0.25 * dr) * (0.5 * dr) * dth
        flux_density = w_b * (2.0 / dr) * g_r / mesh.node_measure
        assert np.max(np.abs(out + flux_density)) <= 1e-12 * max(1.0, np.max(np.abs(out)))
        # consistency: the surface row receives -conormal ~ +2R up to O(dr)
        assert np.max(np.abs(out - 2.0 * r)) <= 2.0 * dr

    def test_flux_conservation_totals(self, mesh16, rng):
        # with p = q = 0 and no drift the total content is invariant:
        # cell and node measures weight the operator rows to a zero sum
        op = assemble_operator(mesh16, preset("identity", mesh16))
        u = random_coupled(mesh16, rng).to_vector()
        total = float(op.mass @ op.apply(u))
        assert abs(total) <= 1e-10 * float(np.abs(op.mass * u).sum())

    def test_size_mismatch_rejected(self, mesh8, mesh16):
        op = assemble_operator(mesh8, preset("identity", mesh8))
        with pytest.raises(ValueError):
            op.apply(np.zeros(3))
        with pytest.raises(ValueError):
            op.apply(CoupledField.zeros(mesh16))

    def test_symmetry_without_drift(self, mesh16, rng):
        op = assemble_operator(mesh16, preset("anisotropic", mesh16))
        for _ in range(20):
            u = rng.standard_normal(mesh16.n_dof)
            v = rng.standard_normal(mesh16.n_dof)
            lhs = op.inner(op.apply(u), v)
            rhs = op.inner(u, op.apply(v))
            assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(u) * np.linalg.norm(v)

    def test_symmetric_skew_split(self, mesh8, rng):
        op = assemble_operator(mesh8, preset("drifted", mesh8))
        sym, skew = op.symmetric_skew_parts()
        u = rng.standard_normal(mesh8.n_dof)
        v = rng.standard_normal(mesh8.n_dof)
        rebuilt = (sym + skew) @ u
        assert np.allclose(rebuilt, op.apply(u), rtol=1e-12, atol=1e-12)
        assert abs(op.inner(sym @ u, v) - op.inner(u, sym @ v)) <= 1e-11 * (
            np.linalg.norm(u) * np.linalg.norm(v)
        )
        assert abs(op.inner(skew @ u, v) + op.inner(u, skew @ v)) <= 1e-11 * (
            np.linalg.norm(u) * np.linalg.norm(v)
        )


class TestConormal:
    def test_radial_paraboloid_identity_coefficients(self, desk_mesh):
        u = radial_paraboloid(desk_mesh)
        c = preset("identity", desk_mesh)
        out = conormal_derivative(u, c).values
        r, dr = desk_mesh.radius, desk_mesh.dr
        assert np.allclose(out, -(2 * r - 0.5 * dr), atol=1e-12)
        assert np.max(np.abs(out + 2 * r)) <= dr

    def test_constant_field(self, mesh16):
        c = preset("identity", mesh16)
        out = conormal_derivative(CoupledField.constant(mesh16, 4.2), c)
        assert np.all(out.values == 0.0)

    def test_angular_scalar_diffusion(self, desk_mesh):
        mesh = desk_mesh
        a = 2.0 + np.cos(mesh.theta_centers)
        c = ProblemCoefficients.isotropic(mesh, a=np.broadcast_to(a, (mesh.nr, mesh.nth)))
        u = radial_paraboloid(mesh)
        out = conormal_derivative(u, c).values
        expected = -2.0 * mesh.radius * a
        assert np.max(np.abs(out - expected)) <= 2.0 * mesh.dr * np.max(a)


class TestBilinearForm:
    def test_constants_with_potentials(self, mesh16):
        c = ProblemCoefficients.isotropic(mesh16, p=0.7, q=1.3)
        val = 2.0
        u = CoupledField.constant(mesh16, val)
        a = bilinear_form(c, u, u)
        expected = val**2 * (
            0.7 * mesh16.total_area + 1.3 * mesh16.total_perimeter
        )
        assert abs(a - expected) <= 1e-12 * abs(expected)

    def test_gradient_energy_of_x1(self, desk_mesh):
        # bulk = r cos(theta): |grad|^2 = 1, bulk energy = disk area
        mesh = desk_mesh
        c = ProblemCoefficients.isotropic(mesh, d=0.0)  # isolate the bulk part
        bulk = BulkField.from_function(mesh, lambda r, t: r * np.cos(t))
        trace = SurfaceField.from_function(mesh, lambda t: mesh.radius * np.cos(t))
        u = CoupledField(bulk, trace)
        a = bilinear_form(c, u, u)
        h2 = max(mesh.dr, mesh.radius * mesh.dth) ** 2
        assert abs(a - math.pi * mesh.radius**2) <= 20 * h2

    def test_transpose_identity_random(self, mesh16, rng):
        for name in ("identity", "anisotropic", "drifted"):
            c = preset(name, mesh16)
            op = assemble_operator(mesh16, c)
            for _ in range(10):
                u = random_coupled(mesh16, rng)
                v = random_coupled(mesh16, rng)
                a = bilinear_form(c, u, v)
                b = -op.inner(op.apply(u.to_vector()), v.to_vector())
                scale = norms(u, "H1") * norms(v, "H1")
                assert abs(a - b) <= 1e-12 * scale

    def test_mesh_mismatch(self, mesh8, mesh16):
        c = preset("identity", mesh8)
        with pytest.raises(ValueError):
            bilinear_form(c, CoupledField.zeros(mesh8), CoupledField.zeros(mesh16))


class TestNorms:
    def test_l2_of_unit_constant_bulk(self, desk_mesh):
        u = CoupledField(BulkField.constant(desk_mesh, 1.0), SurfaceField.zeros(desk_mesh))
        assert abs(norms(u, "L2") - math.sqrt(math.pi)) <= 1e-10

    def test_l2_of_unit_constant_surface(self, desk_mesh):
        u = SurfaceField.constant(desk_mesh, 1.0)
        assert abs(norms(u, "L2") - math.sqrt(2 * math.pi)) <= 1e-10

    def test_h2eq_of_surface_sine(self):
        mesh = build_disk_mesh(1.0, 2, 256)
        u = SurfaceField.from_function(mesh, np.sin)
        val = norms(u, "H2eq")
        # Laplace-Beltrami of sin is -sin analytically; discrete error O(dth^2)
        assert abs(val - 2 * math.sqrt(math.pi)) <= math.sqrt(math.pi) * mesh.dth**2

    def test_h2eq_of_coupled_constant(self, desk_mesh):
        c = 1.7
        u = CoupledField.constant(desk_mesh, c)
        expected = c * (math.sqrt(math.pi) + math.sqrt(2 * math.pi))
        assert abs(norms(u, "H2eq") - expected) <= 1e-10

    def test_h1_consistency_with_identity_form(self, mesh16, rng):
        c = preset("identity", mesh16)
        u = random_coupled(mesh16, rng)
        semi = norms(u, "H1") ** 2 - norms(u, "L2") ** 2
        energy = bilinear_form(c, u, u)
        assert abs(semi - energy) <= 1e-11 * max(1.0, abs(energy))

    def test_unknown_kind(self, mesh8):
        with pytest.raises(ValueError):
            norms(CoupledField.zeros(mesh8), "H3")


class TestCoercivity:
    def test_energy_lower_bound(self, mesh16, rng):
        for name in ("identity", "anisotropic", "drifted"):
            c = preset(name, mesh16)
            rep = validate_coefficients(c, mesh16)
            for _ in range(20):
                u = random_coupled(mesh16, rng)
                a = bilinear_form(c, u, u)
                l2 = norms(u, "L2")
                h1 = norms(u, "H1")
                lhs = a + rep.mu * l2**2
                rhs = 0.5 * rep.beta0 * h1**2
                assert lhs >= rhs - 1e-10 * max(1.0, abs(lhs))


class TestConormalIdentity:
    def test_identity_coefficients(self, mesh16, rng):
        c = preset("identity", mesh16)
        for _ in range(5):
            psi = random_coupled(mesh16, rng)
            assert conormal_identity_check(psi, c) <= 1e-12

    def test_constant_field_both_sides_zero(self, mesh16):
        c = preset("anisotropic", mesh16)
        assert conormal_identity_check(CoupledField.constant(mesh16, 2.0), c) == 0.0

    def test_random_elliptic_coefficients(self, mesh16, rng):
        for seed in range(5):
            c = preset("random_smooth", mesh16, seed=seed)
            psi = random_coupled(mesh16, rng)
            assert conormal_identity_check(psi, c) <= 1e-12

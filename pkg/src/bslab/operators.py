"""Discrete coupled operator, energy form, conormal derivative and norms.

The block operator acts on a coupled (bulk, trace) vector as

    bulk row:    div(A grad u) - B . grad u - p u
    surface row: div_G(D grad_G u_G) - conormal(u) - b . grad_G u_G - q u_G

and is assembled from face-based discrete gradients so that the energy form
and the operator are exact transposes of each other: with the diagonal mass
matrix M of cell/node measures and the stiffness K = G^T W G,

    form(u, v) = < -A u, v >_M        (to rounding, for every u, v).

In particular the operator is symmetric in the measure-weighted inner
product whenever the drifts vanish, and constants are annihilated by the
second-order parts.

Stencil layout (nine-point scheme):

* radial faces carry the two-point radial difference plus an averaged
  centered tangential difference for the mixed a_rt entries; the boundary
  face uses the stored trace with the half-cell spacing dr/2, which is the
  same flux the surface row receives (discrete conservation at the
  interface);
* angular faces carry the two-point tangential difference for a_tt;
* boundary edges carry the two-point difference of the trace for D.

Face quadrature weights are the exact annular strips between adjacent cell
centers (radial family) and the exact cell measures (angular family), each
family tiling the disk once, so the energy is a consistent quadrature of
the continuum integral.  Drift terms use centered cell gradients (one-sided
at the first and last rings); implicit time stepping keeps them stable
without upwinding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .coefficients import ProblemCoefficients
from .geometry import BulkField, CoupledField, DiskMesh, SurfaceField, surface_laplacian

__all__ = [
    "CoupledOperator",
    "assemble_operator",
    "apply_operator",
    "bilinear_form",
    "conormal_derivative",
    "conormal_identity_check",
    "norms",
    "cell_gradient",
]


# --------------------------------------------------------------------------
# face-based gradient structure, cached per mesh geometry


@dataclass(frozen=True)
class _FaceOps:
    g_r: sp.csr_matrix  # radial difference at radial faces (interior + boundary)
    g_t: sp.csr_matrix  # averaged tangential difference at radial faces
    g_a: sp.csr_matrix  # two-point tangential difference at angular faces
    g_s: sp.csr_matrix  # two-point trace difference at boundary edges
    w_rad: np.ndarray  # radial-face strip measures
    w_ang: np.ndarray  # angular-face cell measures
    w_edge: np.ndarray  # boundary edge arclengths
    mass: np.ndarray  # coupled diagonal measures (cells then nodes)


_FACE_OPS_CACHE: dict[tuple[float, int, int], _FaceOps] = {}


def _bulk_index(mesh: DiskMesh, i, j):
    return i * mesh.nth + np.mod(j, mesh.nth)


def _trace_index(mesh: DiskMesh, j):
    return mesh.n_cells + np.mod(j, mesh.nth)


def _face_ops(mesh: DiskMesh) -> _FaceOps:
    key = (mesh.radius, mesh.nr, mesh.nth)
    cached = _FACE_OPS_CACHE.get(key)
    if cached is not None:
        return cached

    nr, nth, ndof = mesh.nr, mesh.nth, mesh.n_dof
    dr, dth, r = mesh.dr, mesh.dth, mesh.radius
    jj = np.arange(nth)

    rows, cols, vals = [], [], []

    def add(row, col, val):
        rows.append(np.asarray(row).ravel())
        cols.append(np.asarray(col).ravel())
        vals.append(np.asarray(val).ravel())

    # --- radial differences at radial faces; rows i*nth+j for the face
    # between rings i and i+1, the last row block being the boundary face.
    n_rf = nr * nth
    for i in range(nr - 1):
        row = i * nth + jj
        add(row, _bulk_index(mesh, i + 1, jj), np.full(nth, 1.0 / dr))
        add(row, _bulk_index(mesh, i, jj), np.full(nth, -1.0 / dr))
    row_b = (nr - 1) * nth + jj
    add(row_b, _trace_index(mesh, jj), np.full(nth, 2.0 / dr))
    add(row_b, _bulk_index(mesh, nr - 1, jj), np.full(nth, -2.0 / dr))
    g_r = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_rf, ndof),
    )

    # --- averaged centered tangential differences at radial faces
    rows, cols, vals = [], [], []
    for i in range(nr - 1):
        row = i * nth + jj
        rf = mesh.r_faces[i + 1]
        c = 1.0 / (4.0 * dth * rf)
        for ring in (i, i + 1):
            add(row, _bulk_index(mesh, ring, jj + 1), np.full(nth, c))
            add(row, _bulk_index(mesh, ring, jj - 1), np.full(nth, -c))
    cb = 1.0 / (2.0 * r * dth)
    add(row_b, _trace_index(mesh, jj + 1), np.full(nth, cb))
    add(row_b, _trace_index(mesh, jj - 1), np.full(nth, -cb))
    g_t = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_rf, ndof),
    )

    # --- two-point tangential differences at angular faces (i, j+1/2)
    rows, cols, vals = [], [], []
    for i in range(nr):
        row = i * nth + jj
        c = 1.0 / (mesh.r_centers[i] * dth)
        add(row, _bulk_index(mesh, i, jj + 1), np.full(nth, c))
        add(row, _bulk_index(mesh, i, jj), np.full(nth, -c))
    g_a = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nr * nth, ndof),
    )

    # --- boundary edge differences (node j to node j+1)
    rows, cols, vals = [], [], []
    ce = 1.0 / (r * dth)
    add(jj, _trace_index(mesh, jj + 1), np.full(nth, ce))
    add(jj, _trace_index(mesh, jj), np.full(nth, -ce))
    g_s = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nth, ndof),
    )

    # Quadrature weights: exact annular strips between cell centers for the
    # radial family (the boundary strip runs from the last center to r = R),
    # exact cell measures for the angular family.
    w_rad = np.empty(n_rf)
    for i in range(nr - 1):
        w_rad[i * nth : (i + 1) * nth] = mesh.r_faces[i + 1] * dr * dth
    w_rad[(nr - 1) * nth :] = (r - 0.25 * dr) * (0.5 * dr) * dth
    w_ang = np.repeat(mesh.r_centers * dr * dth, nth)
    w_edge = np.full(nth, r * dth)
    mass = np.concatenate([mesh.cell_measures_flat, mesh.node_measures])

    ops = _FaceOps(g_r, g_t, g_a, g_s, w_rad, w_ang, w_edge, mass)
    _FACE_OPS_CACHE[key] = ops
    return ops


def _face_coefficients(mesh: DiskMesh, c: ProblemCoefficients):
    """Coefficient samples at radial faces, angular faces and boundary edges."""
    a_rr_f = np.empty(mesh.nr * mesh.nth)
    a_rt_f = np.empty(mesh.nr * mesh.nth)
    inner_rr = 0.5 * (c.a_rr[:-1, :] + c.a_rr[1:, :])
    inner_rt = 0.5 * (c.a_rt[:-1, :] + c.a_rt[1:, :])
    a_rr_f[: (mesh.nr - 1) * mesh.nth] = inner_rr.ravel()
    a_rt_f[: (mesh.nr - 1) * mesh.nth] = inner_rt.ravel()
    a_rr_f[(mesh.nr - 1) * mesh.nth :] = c.a_rr[-1, :]
    a_rt_f[(mesh.nr - 1) * mesh.nth :] = c.a_rt[-1, :]
    a_tt_f = (0.5 * (c.a_tt + np.roll(c.a_tt, -1, axis=1))).ravel()
    d_e = 0.5 * (c.d + np.roll(c.d, -1))
    return a_rr_f, a_rt_f, a_tt_f, d_e


def _drift_matrix(mesh: DiskMesh, c: ProblemCoefficients) -> sp.csr_matrix:
    """Measure-weighted drift form: rows scaled by cell/node measures.

    Centered differences where both neighbors exist; one-sided radial
    differences at the first and last rings (the trace never enters drift
    stencils, matching the bulk-only domain of B).
    """
    nr, nth = mesh.nr, mesh.nth
    jj = np.arange(nth)
    rows, cols, vals = [], [], []

    def add(row, col, val):
        rows.append(np.asarray(row).ravel())
        cols.append(np.asarray(col).ravel())
        vals.append(np.asarray(val).ravel())

    m = mesh.cell_areas
    for i in range(nr):
        row = _bulk_index(mesh, i, jj)
        w_r = m[i, :] * c.b_r[i, :]
        if 0 < i < nr - 1:
            add(row, _bulk_index(mesh, i + 1, jj), w_r / (2.0 * mesh.dr))
            add(row, _bulk_index(mesh, i - 1, jj), -w_r / (2.0 * mesh.dr))
        elif i == 0:
            add(row, _bulk_index(mesh, 1, jj), w_r / mesh.dr)
            add(row, _bulk_index(mesh, 0, jj), -w_r / mesh.dr)
        else:
            add(row, _bulk_index(mesh, nr - 1, jj), w_r / mesh.dr)
            add(row, _bulk_index(mesh, nr - 2, jj), -w_r / mesh.dr)
        w_t = m[i, :] * c.b_t[i, :] / (2.0 * mesh.r_centers[i] * mesh.dth)
        add(row, _bulk_index(mesh, i, jj + 1), w_t)
        add(row, _bulk_index(mesh, i, jj - 1), -w_t)

    w_s = mesh.node_measure * c.b_surf / (2.0 * mesh.radius * mesh.dth)
    add(_trace_index(mesh, jj), _trace_index(mesh, jj + 1), w_s)
    add(_trace_index(mesh, jj), _trace_index(mesh, jj - 1), -w_s)

    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_dof, mesh.n_dof),
    )


@dataclass(frozen=True)
class CoupledOperator:
    """Coupled operator kept in factored form plus an assembled generator.

    Applications run through the factors G^T (W (G u)), so differences of
    equal values cancel exactly and constants are annihilated to the last
    bit; the assembled ``generator`` matrix exists for the implicit time
    stepper, which needs explicit sparsity for its LU factorization.  The
    stiffness pieces stay available separately so that div(A grad .) and
    div_G(D grad_G .) can be evaluated on their own (both are needed by the
    weighted-inequality harness).
    """

    mesh: DiskMesh
    coeffs: ProblemCoefficients
    k_bulk: sp.csr_matrix
    k_surf: sp.csr_matrix
    drift: sp.csr_matrix
    pot: np.ndarray
    mass: np.ndarray
    generator: sp.csr_matrix
    faces: "_FaceOps"
    w_rr: np.ndarray
    w_rt: np.ndarray
    w_tt: np.ndarray
    w_de: np.ndarray

    def _k_bulk_action(self, u: np.ndarray) -> np.ndarray:
        gr = self.faces.g_r @ u
        gt = self.faces.g_t @ u
        ga = self.faces.g_a @ u
        return (
            self.faces.g_r.T @ (self.w_rr * gr + self.w_rt * gt)
            + self.faces.g_t.T @ (self.w_rt * gr)
            + self.faces.g_a.T @ (self.w_tt * ga)
        )

    def _k_surf_action(self, u: np.ndarray) -> np.ndarray:
        return self.faces.g_s.T @ (self.w_de * (self.faces.g_s @ u))

    def _stiffness_action(self, u: np.ndarray) -> np.ndarray:
        return (
            self._k_bulk_action(u) + self._k_surf_action(u) + self.drift @ u + self.pot * u
        )

    def apply(self, u: CoupledField | np.ndarray) -> CoupledField | np.ndarray:
        if isinstance(u, CoupledField):
            if not u.mesh.same_mesh(self.mesh):
                raise ValueError("field mesh does not match operator mesh")
            return CoupledField.from_vector(
                self.mesh, -self._stiffness_action(u.to_vector()) / self.mass
            )
        u = np.asarray(u, dtype=float)
        if u.shape != (self.mesh.n_dof,):
            raise ValueError(f"vector length {u.shape} does not match dof {self.mesh.n_dof}")
        return -self._stiffness_action(u) / self.mass

    def form(self, u: np.ndarray, v: np.ndarray) -> float:
        """Matrix route of the energy form: v^T (K + C + P) u."""
        return float(v @ self._stiffness_action(u))

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        """Measure-weighted inner product of coupled DOF vectors."""
        return float(u @ (self.mass * v))

    def div_a_grad(self, u: np.ndarray) -> np.ndarray:
        """div(A grad u) at cells, shape (nr, nth); uses the stored trace."""
        out = -self._k_bulk_action(u)[: self.mesh.n_cells] / self.mesh.cell_measures_flat
        return out.reshape(self.mesh.nr, self.mesh.nth)

    def surface_div_d_grad(self, u: np.ndarray) -> np.ndarray:
        """div_G(D grad_G u_G) at boundary nodes, shape (nth,)."""
        return -self._k_surf_action(u)[self.mesh.n_cells :] / self.mesh.node_measures

    def symmetric_skew_parts(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Split of the generator into its measure-symmetric and skew parts."""
        minv = sp.diags(1.0 / self.mass)
        sym_drift = 0.5 * (self.drift + self.drift.T)
        skew_drift = 0.5 * (self.drift - self.drift.T)
        k = self.k_bulk + self.k_surf + sp.diags(self.pot)
        return (-(minv @ (k + sym_drift))).tocsr(), (-(minv @ skew_drift)).tocsr()


def assemble_operator(mesh: DiskMesh, c: ProblemCoefficients) -> CoupledOperator:
    """Assemble the coupled operator for the given coefficients."""
    if not c.mesh.same_mesh(mesh):
        raise ValueError("coefficients were sampled on a different mesh")
    ops = _face_ops(mesh)
    a_rr_f, a_rt_f, a_tt_f, d_e = _face_coefficients(mesh, c)

    w_rr = sp.diags(ops.w_rad * a_rr_f)
    w_rt = sp.diags(ops.w_rad * a_rt_f)
    w_tt = sp.diags(ops.w_ang * a_tt_f)
    k_bulk = (
        ops.g_r.T @ w_rr @ ops.g_r
        + ops.g_r.T @ w_rt @ ops.g_t
        + ops.g_t.T @ w_rt @ ops.g_r
        + ops.g_a.T @ w_tt @ ops.g_a
    ).tocsr()
    k_surf = (ops.g_s.T @ sp.diags(ops.w_edge * d_e) @ ops.g_s).tocsr()
    # The factored stiffness annihilates constants exactly, but summing the
    # triple products into explicit entries loses that to rounding; a
    # symmetric diagonal correction restores exact row (and column) sums.
    k_bulk = (k_bulk - sp.diags(np.asarray(k_bulk.sum(axis=1)).ravel())).tocsr()
    k_surf = (k_surf - sp.diags(np.asarray(k_surf.sum(axis=1)).ravel())).tocsr()
    drift = _drift_matrix(mesh, c)
    pot = np.concatenate(
        [c.p.ravel() * mesh.cell_measures_flat, c.q * mesh.node_measures]
    )
    minv = sp.diags(1.0 / ops.mass)
    generator = (-(minv @ (k_bulk + k_surf + drift + sp.diags(pot)))).tocsr()
    return CoupledOperator(
        mesh=mesh,
        coeffs=c,
        k_bulk=k_bulk,
        k_surf=k_surf,
        drift=drift,
        pot=pot,
        mass=ops.mass,
        generator=generator,
        faces=ops,
        w_rr=ops.w_rad * a_rr_f,
        w_rt=ops.w_rad * a_rt_f,
        w_tt=ops.w_ang * a_tt_f,
        w_de=ops.w_edge * d_e,
    )


def apply_operator(op: CoupledOperator, u: CoupledField) -> CoupledField:
    """Apply the assembled block operator to a coupled field."""
    return op.apply(u)


# --------------------------------------------------------------------------
# independent quadrature route for the energy form


def _roll(a: np.ndarray, shift: int) -> np.ndarray:
    return np.roll(a, shift, axis=-1)


def bilinear_form(c: ProblemCoefficients, u: CoupledField, v: CoupledField) -> float:
    """Energy form by direct face/node quadrature (no assembled matrices).

    Evaluates the bulk integral of A grad u . grad v + (B . grad u) v + p u v
    and the surface integral of D grad_G u . grad_G v + (b . grad_G u) v
    + q u v with the same stencils and weights the assembly uses, but through
    an independent code path; agreement with ``< -A u, v >`` is a structural
    identity, tested to rounding.
    """
    mesh = u.mesh
    if not mesh.same_mesh(v.mesh) or not mesh.same_mesh(c.mesh):
        raise ValueError("fields and coefficients must share one mesh")
    ub, vb = u.bulk.values, v.bulk.values
    us, vs = u.surface.values, v.surface.values
    dr, dth, r = mesh.dr, mesh.dth, mesh.radius

    total = 0.0

    # interior radial faces
    gr_u = (ub[1:, :] - ub[:-1, :]) / dr
    gr_v = (vb[1:, :] - vb[:-1, :]) / dr
    cen_u = _roll(ub, -1) - _roll(ub, 1)
    cen_v = _roll(vb, -1) - _roll(vb, 1)
    rf = mesh.r_faces[1:-1][:, None]
    gt_u = (cen_u[:-1, :] + cen_u[1:, :]) / (4.0 * dth * rf)
    gt_v = (cen_v[:-1, :] + cen_v[1:, :]) / (4.0 * dth * rf)
    w = rf * dr * dth
    a_rr_f = 0.5 * (c.a_rr[:-1, :] + c.a_rr[1:, :])
    a_rt_f = 0.5 * (c.a_rt[:-1, :] + c.a_rt[1:, :])
    total += float(np.sum(w * (a_rr_f * gr_u * gr_v + a_rt_f * (gr_u * gt_v + gt_u * gr_v))))

    # boundary radial faces
    gr_ub = (us - ub[-1, :]) / (0.5 * dr)
    gr_vb = (vs - vb[-1, :]) / (0.5 * dr)
    gt_ub = (_roll(us, -1) - _roll(us, 1)) / (2.0 * r * dth)
    gt_vb = (_roll(vs, -1) - _roll(vs, 1)) / (2.0 * r * dth)
    wb = (r - 0.25 * dr) * (0.5 * dr) * dth
    total += float(
        np.sum(
            wb
            * (
                c.a_rr[-1, :] * gr_ub * gr_vb
                + c.a_rt[-1, :] * (gr_ub * gt_vb + gt_ub * gr_vb)
            )
        )
    )

    # angular faces
    ga_u = (_roll(ub, -1) - ub) / (mesh.r_centers[:, None] * dth)
    ga_v = (_roll(vb, -1) - vb) / (mesh.r_centers[:, None] * dth)
    wa = (mesh.r_centers * dr * dth)[:, None]
    a_tt_f = 0.5 * (c.a_tt + _roll(c.a_tt, -1))
    total += float(np.sum(wa * a_tt_f * ga_u * ga_v))

    # boundary edges
    gs_u = (_roll(us, -1) - us) / (r * dth)
    gs_v = (_roll(vs, -1) - vs) / (r * dth)
    d_e = 0.5 * (c.d + _roll(c.d, -1))
    total += float(np.sum(r * dth * d_e * gs_u * gs_v))

    # drift and potential terms, cell/node quadrature
    grad = cell_gradient(mesh, u)
    m = mesh.cell_areas
    total += float(np.sum(m * (c.b_r * grad[0] + c.b_t * grad[1]) * vb))
    total += float(np.sum(m * c.p * ub * vb))
    gs_cen = (_roll(us, -1) - _roll(us, 1)) / (2.0 * r * dth)
    total += float(np.sum(mesh.node_measure * c.b_surf * gs_cen * vs))
    total += float(np.sum(mesh.node_measure * c.q * us * vs))
    return total


def cell_gradient(mesh: DiskMesh, u: CoupledField) -> tuple[np.ndarray, np.ndarray]:
    """Cell-centered gradient (d/dr, (1/r) d/dtheta), shapes (nr, nth).

    Centered differences in both directions; one-sided radial differences at
    the innermost and outermost rings (bulk values only).
    """
    ub = u.bulk.values
    gr = np.empty_like(ub)
    gr[1:-1, :] = (ub[2:, :] - ub[:-2, :]) / (2.0 * mesh.dr)
    gr[0, :] = (ub[1, :] - ub[0, :]) / mesh.dr
    gr[-1, :] = (ub[-1, :] - ub[-2, :]) / mesh.dr
    gt = (_roll(ub, -1) - _roll(ub, 1)) / (2.0 * mesh.r_centers[:, None] * mesh.dth)
    return gr, gt


# --------------------------------------------------------------------------
# conormal derivative and boundary identity


def conormal_derivative(y: CoupledField, c: ProblemCoefficients) -> SurfaceField:
    """Outward conormal flux density (A grad y . e_r) at boundary nodes.

    One-sided radial difference over the half-cell spacing dr/2 times a_rr,
    plus the mixed entry times the centered tangential difference of the
    trace; coefficient values come from the outermost cell ring.
    """
    mesh = y.mesh
    if not mesh.same_mesh(c.mesh):
        raise ValueError("field and coefficients must share one mesh")
    normal = (y.surface.values - y.bulk.values[-1, :]) / (0.5 * mesh.dr)
    tang = (_roll(y.surface.values, -1) - _roll(y.surface.values, 1)) / (
        2.0 * mesh.radius * mesh.dth
    )
    return SurfaceField(mesh, c.a_rr[-1, :] * normal + c.a_rt[-1, :] * tang)


def conormal_identity_check(psi: CoupledField, c: ProblemCoefficients) -> float:
    """Largest scaled residual of the boundary gradient-splitting identity.

    At each node the discrete gradient is decomposed into its normal part
    (one-sided difference) and tangential part (centered trace difference),
    and both sides of

        (conormal)^2 - (A grad_G psi . nu)^2
            = (A nu . nu) (|A^(1/2) grad psi|^2 - |A^(1/2) grad_G psi|^2)

    are evaluated from those components.  The identity is algebraic in
    (normal, tangential), so the residual is rounding noise; it is returned
    scaled by max(1, |lhs|, |rhs|) per node so the bound stays meaningful
    when gradients are O(1/dr).
    """
    mesh = psi.mesh
    if not mesh.same_mesh(c.mesh):
        raise ValueError("field and coefficients must share one mesh")
    n = (psi.surface.values - psi.bulk.values[-1, :]) / (0.5 * mesh.dr)
    t = (_roll(psi.surface.values, -1) - _roll(psi.surface.values, 1)) / (
        2.0 * mesh.radius * mesh.dth
    )
    a_rr, a_rt, a_tt = c.a_rr[-1, :], c.a_rt[-1, :], c.a_tt[-1, :]
    conormal = a_rr * n + a_rt * t
    lhs = conormal**2 - (a_rt * t) ** 2
    full_energy = a_rr * n**2 + 2.0 * a_rt * n * t + a_tt * t**2
    rhs = a_rr * (full_energy - a_tt * t**2)
    scale = np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
    return float(np.max(np.abs(lhs - rhs) / scale))


# --------------------------------------------------------------------------
# norms


def _identity_operator(mesh: DiskMesh) -> CoupledOperator:
    key = (mesh.radius, mesh.nr, mesh.nth)
    cached = _IDENTITY_CACHE.get(key)
    if cached is None:
        cached = assemble_operator(mesh, ProblemCoefficients.isotropic(mesh))
        _IDENTITY_CACHE[key] = cached
    return cached


_IDENTITY_CACHE: dict[tuple[float, int, int], CoupledOperator] = {}


def _gradient_energy(mesh: DiskMesh, vec: np.ndarray) -> float:
    ops = _face_ops(mesh)
    return float(
        np.sum(ops.w_rad * (ops.g_r @ vec) ** 2)
        + np.sum(ops.w_ang * (ops.g_a @ vec) ** 2)
        + np.sum(ops.w_edge * (ops.g_s @ vec) ** 2)
    )


def norms(u: CoupledField | SurfaceField, kind: str) -> float:
    """Discrete L2, H1 or equivalent-H2 norm of a coupled or surface field.

    L2    measure-weighted root sum of squares (bulk plus surface for a
          coupled field).
    H1    adds the face-based gradient energy (and edge energy on the
          boundary); for identity coefficients the added seminorm equals the
          energy form exactly.
    H2eq  the operator-based equivalent norm: on the disk ||u|| + ||Lap u||
          with the identity-coefficient divergence-form operator, on the
          circle ||u_G|| + ||Lap_G u_G||; for a coupled field the four
          pieces are added.
    """
    if kind not in ("L2", "H1", "H2eq"):
        raise ValueError(f"unknown norm kind {kind!r}")

    if isinstance(u, SurfaceField):
        mesh = u.mesh
        w = mesh.node_measure
        l2 = float(np.sqrt(np.sum(w * u.values**2)))
        if kind == "L2":
            return l2
        if kind == "H1":
            gs = (_roll(u.values, -1) - u.values) / (mesh.radius * mesh.dth)
            return float(np.sqrt(l2**2 + np.sum(w * gs**2)))
        lap = surface_laplacian(u)
        return l2 + float(np.sqrt(np.sum(w * lap.values**2)))

    mesh = u.mesh
    vec = u.to_vector()
    m = mesh.cell_measures_flat
    s = mesh.node_measures
    bulk2 = float(np.sum(m * vec[: mesh.n_cells] ** 2))
    surf2 = float(np.sum(s * vec[mesh.n_cells :] ** 2))
    if kind == "L2":
        return float(np.sqrt(bulk2 + surf2))
    if kind == "H1":
        return float(np.sqrt(bulk2 + surf2 + _gradient_energy(mesh, vec)))
    op = _identity_operator(mesh)
    lap_bulk = op.div_a_grad(vec)
    lap_surf = surface_laplacian(u.surface)
    return (
        float(np.sqrt(bulk2))
        + float(np.sqrt(np.sum(mesh.cell_areas * lap_bulk**2)))
        + float(np.sqrt(surf2))
        + float(np.sqrt(np.sum(s * lap_surf.values**2)))
    )

"""Exponential weight functions and the two sides of the weighted inequality.

The weight family is built from the disk profile eta0(x) = R^2 - |x|^2,
which is positive inside the disk, vanishes on the boundary circle, and has
nonvanishing gradient outside any neighborhood of the origin; its outward
normal derivative on the circle is the constant -2R.  On a time window
(t0, T) the weights are

    alpha(t, x) = (e^{2 lam M} - e^{lam eta0(x)}) / ((t - t0) (T - t))
    xi(t, x)    =  e^{lam eta0(x)}              / ((t - t0) (T - t))

with M = sup eta0 = R^2.  Both blow up at the window ends, alpha is
minimized at the midpoint, and alpha is constant on the boundary since eta0
vanishes there (so its tangential gradient is zero on the circle).  The
damping factor exp(-2 s alpha) is evaluated through its exponent and
flushed to exact zero below the smallest normal double, which is also what
makes the time quadrature ignore the singular window ends.

``carleman_sides`` evaluates every term of the weighted energy inequality
on a computed trajectory of z (typically the time derivative of a forward
solution, which solves the differentiated system with sources F_t, G_t):
bulk and surface zero-order, gradient, time-derivative and divergence
terms with their (s, lam, xi) powers on the left, and the localized
observation term plus the weighted source terms on the right.
``carleman_sweep`` runs an ensemble of admissible random sources through
the forward solver and reports the observed left/right ratios over a grid
of s values: the desk-scale surrogate for the existence of a uniform
constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coefficients import ProblemCoefficients
from .geometry import BulkField, CoupledField, DiskMesh, SurfaceField
from .operators import CoupledOperator, cell_gradient, conormal_derivative
from .stepping import SourcePair, Trajectory, solve_trajectory, time_derivative

__all__ = [
    "Eta0Field",
    "build_eta0",
    "CarlemanWeightSet",
    "WeightedNorms",
    "carleman_sides",
    "carleman_sides_multi",
    "carleman_sweep",
    "conormal_bound_margin",
]

# Smallest exponent with a normal double result; below this the damping
# factor is flushed to exact zero.
_MIN_EXPONENT = math.log(np.finfo(float).tiny)


@dataclass(frozen=True)
class Eta0Field:
    """The disk weight profile eta0 = R^2 - r^2 with its certified data."""

    mesh: DiskMesh
    values: np.ndarray  # eta0 at cell centers
    grad_r: np.ndarray  # radial gradient -2r at cell centers
    c_bound: float  # the constant c with normal derivative <= -c on the circle
    omega_prime_radius: float
    omega_prime_mask: np.ndarray

    @property
    def sup_norm(self) -> float:
        """Supremum of eta0 over the closed disk (attained at the origin)."""
        return self.mesh.radius**2

    def coupled(self) -> CoupledField:
        """eta0 as a coupled field; the trace is exactly zero."""
        return CoupledField(
            BulkField(self.mesh, self.values), SurfaceField.zeros(self.mesh)
        )


def build_eta0(mesh: DiskMesh, omega_prime_radius: float) -> Eta0Field:
    """Construct eta0 = R^2 - r^2 and verify its defining properties.

    ``omega_prime_radius`` is the radius of the interior disk where the
    gradient is allowed to vanish; it must lie strictly inside the domain.
    """
    r = mesh.radius
    if not 0.0 < omega_prime_radius < r:
        raise ValueError(
            f"omega_prime_radius must lie in (0, {r}), got {omega_prime_radius}"
        )
    rr = mesh.r_centers[:, None]
    values = np.broadcast_to(r**2 - rr**2, (mesh.nr, mesh.nth)).copy()
    grad_r = np.broadcast_to(-2.0 * rr, (mesh.nr, mesh.nth)).copy()
    mask = np.broadcast_to(mesh.r_centers[:, None] < omega_prime_radius, values.shape).copy()

    if np.min(values) <= 0.0:
        raise AssertionError("eta0 must be positive at all cell centers")
    outside = ~mask
    if np.any(outside) and np.min(np.abs(grad_r)[outside]) <= 0.0:
        raise AssertionError("grad eta0 must be nonzero outside omega'")
    c_bound = 2.0 * r
    return Eta0Field(
        mesh=mesh,
        values=values,
        grad_r=grad_r,
        c_bound=c_bound,
        omega_prime_radius=float(omega_prime_radius),
        omega_prime_mask=mask,
    )


def conormal_bound_margin(eta0: Eta0Field, c: ProblemCoefficients, beta0: float) -> np.ndarray:
    """Node-wise margin of the conormal bound for eta0.

    Returns beta0 * dnu(eta0) - dnuA(eta0) per boundary node, evaluated with
    the same one-sided boundary stencil the operator uses; all entries are
    >= 0 for elliptic coefficients because the conormal of a function with
    vanishing trace reduces to (A e_r . e_r) times the normal derivative.
    """
    mesh = eta0.mesh
    field = eta0.coupled()
    dnu_a = conormal_derivative(field, c).values
    dnu = conormal_derivative(field, ProblemCoefficients.isotropic(mesh)).values
    return beta0 * dnu - dnu_a


@dataclass(frozen=True)
class CarlemanWeightSet:
    """Weight evaluators alpha, xi and exp(-2 s alpha) on a time window."""

    eta0: Eta0Field
    s: float
    lam: float
    t0: float
    t_end: float

    def __post_init__(self) -> None:
        if self.s <= 0.0 or self.lam <= 0.0:
            raise ValueError("s and lam must be positive")
        if not self.t0 < self.t_end:
            raise ValueError("need t0 < t_end")
        # time-independent spatial factors, reused across every evaluation
        object.__setattr__(self, "_exp_eta", np.exp(self.lam * self.eta0.values))
        object.__setattr__(self, "_sup_factor", math.exp(2.0 * self.lam * self.eta0.sup_norm))

    def _den(self, t: float) -> float:
        if not self.t0 < t < self.t_end:
            raise ValueError(f"t={t} outside the open window ({self.t0}, {self.t_end})")
        return (t - self.t0) * (self.t_end - t)

    def _exp_sup(self) -> float:
        return self._sup_factor

    def alpha_bulk(self, t: float) -> np.ndarray:
        den = self._den(t)
        return (self._sup_factor - self._exp_eta) / den

    def alpha_boundary(self, t: float) -> float:
        """alpha on the circle, where eta0 = 0 (tangentially constant)."""
        return (self._sup_factor - 1.0) / self._den(t)

    def xi_bulk(self, t: float) -> np.ndarray:
        return self._exp_eta / self._den(t)

    def xi_boundary(self, t: float) -> float:
        return 1.0 / self._den(t)

    def weight_bulk(self, t: float) -> np.ndarray:
        """exp(-2 s alpha) at cells, exact zero where the exponent underflows."""
        expo = -2.0 * self.s * self.alpha_bulk(t)
        return np.where(expo < _MIN_EXPONENT, 0.0, np.exp(np.maximum(expo, _MIN_EXPONENT)))

    def weight_boundary(self, t: float) -> float:
        expo = -2.0 * self.s * self.alpha_boundary(t)
        return 0.0 if expo < _MIN_EXPONENT else math.exp(expo)

    def alpha_radial_gradient(self, t: float) -> np.ndarray:
        """Radial gradient of alpha; equals -lam * xi * grad(eta0) identically."""
        den = self._den(t)
        return -self.lam * np.exp(self.lam * self.eta0.values) * self.eta0.grad_r / den

    def sigma(self, c: ProblemCoefficients) -> np.ndarray:
        """sigma = A grad(eta0) . grad(eta0) = a_rr (2r)^2 per cell."""
        return c.a_rr * self.eta0.grad_r**2

    def eval_at(self, t: float, where: tuple) -> tuple[float, float, float]:
        """Point evaluation (alpha, xi, exp(-2 s alpha)) at a cell or node.

        ``where`` is ("cell", i, j) or ("node", j); nodes sit on the circle
        where eta0 vanishes.
        """
        if where[0] == "cell":
            _, i, j = where
            alpha = float(self.alpha_bulk(t)[i, j])
            xi = float(self.xi_bulk(t)[i, j])
        elif where[0] == "node":
            alpha = self.alpha_boundary(t)
            xi = self.xi_boundary(t)
        else:
            raise ValueError(f"unknown location {where!r}")
        expo = -2.0 * self.s * alpha
        w = 0.0 if expo < _MIN_EXPONENT else math.exp(expo)
        return alpha, xi, w


_TERM_NAMES = (
    "lhs_bulk_time",
    "lhs_bulk_div",
    "lhs_bulk_grad",
    "lhs_bulk_zero",
    "lhs_surf_time",
    "lhs_surf_div",
    "lhs_surf_grad",
    "lhs_surf_zero",
    "lhs_surf_conormal",
    "rhs_obs",
    "rhs_bulk_source",
    "rhs_surf_source",
)


@dataclass(frozen=True)
class WeightedNorms:
    """All terms of the weighted inequality, each a nonnegative number."""

    lhs_bulk_time: float
    lhs_bulk_div: float
    lhs_bulk_grad: float
    lhs_bulk_zero: float
    lhs_surf_time: float
    lhs_surf_div: float
    lhs_surf_grad: float
    lhs_surf_zero: float
    lhs_surf_conormal: float
    rhs_obs: float
    rhs_bulk_source: float
    rhs_surf_source: float

    def __post_init__(self) -> None:
        for name in _TERM_NAMES:
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0.0):
                raise ValueError(f"term {name} must be finite and nonnegative, got {v}")

    @property
    def lhs_total(self) -> float:
        return (
            self.lhs_bulk_time
            + self.lhs_bulk_div
            + self.lhs_bulk_grad
            + self.lhs_bulk_zero
            + self.lhs_surf_time
            + self.lhs_surf_div
            + self.lhs_surf_grad
            + self.lhs_surf_zero
            + self.lhs_surf_conormal
        )

    @property
    def rhs_total(self) -> float:
        return self.rhs_obs + self.rhs_bulk_source + self.rhs_surf_source

    @property
    def ratio(self) -> float:
        """Observed lhs/rhs; NaN when both sides vanish."""
        if self.rhs_total == 0.0:
            return math.nan
        return self.lhs_total / self.rhs_total

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in _TERM_NAMES}


def carleman_sides(
    z_traj: Trajectory,
    weights: CarlemanWeightSet,
    omega_mask: np.ndarray,
    op: CoupledOperator,
    lz_bulk: Callable[[float], np.ndarray] | None = None,
    lz_surf: Callable[[float], np.ndarray] | None = None,
) -> WeightedNorms:
    """Evaluate both sides of the weighted inequality on a z-trajectory.

    The trajectory must cover the weight window; quadrature runs over the
    grid nodes strictly inside (t0, T) with weight dt (the trajectory nodes
    are midpoints of the uniform time cells), and the damping factor has
    already decayed to zero near the ends.  When ``lz_bulk``/``lz_surf`` are
    given they supply L z and L_G z_G directly (for z solving the
    differentiated system these are the source time derivatives); otherwise
    both are formed discretely as d/dt z minus the operator action.
    """
    return carleman_sides_multi(z_traj, [weights], omega_mask, op, lz_bulk, lz_surf)[0]


def carleman_sides_multi(
    z_traj: Trajectory,
    weight_sets: list[CarlemanWeightSet],
    omega_mask: np.ndarray,
    op: CoupledOperator,
    lz_bulk: Callable[[float], np.ndarray] | None = None,
    lz_surf: Callable[[float], np.ndarray] | None = None,
) -> list[WeightedNorms]:
    """Shared-window evaluation of the inequality for several (s, lam) sets.

    The differential quantities entering the terms (time derivative, flux
    divergences, gradients, conormal, L z) do not depend on (s, lam), so one
    pass over the trajectory serves the whole s grid.
    """
    mesh = z_traj.mesh
    if not mesh.same_mesh(op.mesh):
        raise ValueError("trajectory and operator meshes differ")
    if omega_mask.shape != (mesh.nr, mesh.nth):
        raise ValueError("omega mask shape does not match the mesh")
    if not weight_sets:
        return []
    t0, t_end = weight_sets[0].t0, weight_sets[0].t_end
    for w in weight_sets:
        if (w.t0, w.t_end) != (t0, t_end):
            raise ValueError("all weight sets must share one time window")
    if t0 < z_traj.times[0] - 1e-12 or t_end > z_traj.times[-1] + 1e-12:
        raise ValueError("weight window is not covered by the trajectory")
    inside = np.where((z_traj.times > t0 + 1e-12) & (z_traj.times < t_end - 1e-12))[0]
    if len(inside) == 0:
        raise ValueError("no trajectory nodes inside the weight window")

    dz = time_derivative(z_traj)
    dt = z_traj.dt
    m = mesh.cell_areas
    w_node = mesh.node_measure
    n_cells = mesh.n_cells
    omega = omega_mask

    accs = [dict.fromkeys(_TERM_NAMES, 0.0) for _ in weight_sets]
    for k in inside:
        t = float(z_traj.times[k])
        fields = None
        for w, acc in zip(weight_sets, accs):
            e_bulk = w.weight_bulk(t)
            e_surf = w.weight_boundary(t)
            if not np.any(e_bulk) and e_surf == 0.0:
                continue
            if fields is None:
                fields = _side_fields(z_traj, dz, k, t, op, lz_bulk, lz_surf)
            (z_bulk, z_surf, dz_bulk, dz_surf, div_a, grad_sq, div_d,
             grad_s, conormal, l_bulk, l_surf) = fields
            s, lam = w.s, w.lam
            xi_b = w.xi_bulk(t)
            xi_s = w.xi_boundary(t)
            wb = dt * m * e_bulk
            ws = dt * w_node * e_surf
            zero_density = wb * s**3 * lam**4 * xi_b**3 * z_bulk**2
            acc["lhs_bulk_time"] += float(np.sum(wb * dz_bulk**2 / (s * xi_b)))
            acc["lhs_bulk_div"] += float(np.sum(wb * div_a**2 / (s * xi_b)))
            acc["lhs_bulk_grad"] += float(np.sum(wb * s * lam**2 * xi_b * grad_sq))
            acc["lhs_bulk_zero"] += float(np.sum(zero_density))
            acc["lhs_surf_time"] += float(np.sum(ws * dz_surf**2 / (s * xi_s)))
            acc["lhs_surf_div"] += float(np.sum(ws * div_d**2 / (s * xi_s)))
            acc["lhs_surf_grad"] += float(np.sum(ws * s * lam * xi_s * grad_s**2))
            acc["lhs_surf_zero"] += float(np.sum(ws * s**3 * lam**3 * xi_s**3 * z_surf**2))
            acc["lhs_surf_conormal"] += float(np.sum(ws * s * lam * xi_s * conormal**2))
            acc["rhs_obs"] += float(np.sum(zero_density[omega]))
            acc["rhs_bulk_source"] += float(np.sum(wb * l_bulk**2))
            acc["rhs_surf_source"] += float(np.sum(ws * l_surf**2))

    return [WeightedNorms(**acc) for acc in accs]


def _side_fields(z_traj, dz, k, t, op, lz_bulk, lz_surf):
    mesh = z_traj.mesh
    n_cells = mesh.n_cells
    vec = z_traj.states[k]
    z_bulk = vec[:n_cells].reshape(mesh.nr, mesh.nth)
    z_surf = vec[n_cells:]
    dvec = dz.states[k]
    dz_bulk = dvec[:n_cells].reshape(mesh.nr, mesh.nth)
    dz_surf = dvec[n_cells:]
    field = z_traj.field(k)
    div_a = op.div_a_grad(vec)
    gr, gt = cell_gradient(mesh, field)
    grad_sq = gr**2 + gt**2
    div_d = op.surface_div_d_grad(vec)
    grad_s = (np.roll(z_surf, -1) - np.roll(z_surf, 1)) / (2.0 * mesh.radius * mesh.dth)
    conormal = conormal_derivative(field, op.coeffs).values
    if lz_bulk is not None and lz_surf is not None:
        l_bulk = np.asarray(lz_bulk(t), dtype=float)
        l_surf = np.asarray(lz_surf(t), dtype=float)
    else:
        av = op.apply(vec)
        l_bulk = dz_bulk - av[:n_cells].reshape(mesh.nr, mesh.nth)
        l_surf = dz_surf - av[n_cells:]
    return (z_bulk, z_surf, dz_bulk, dz_surf, div_a, grad_sq, div_d,
            grad_s, conormal, l_bulk, l_surf)


def carleman_sweep(
    op: CoupledOperator,
    source_factory: Callable[[np.random.Generator], SourcePair],
    s_grid: tuple[float, ...],
    lam: float,
    t0: float,
    t_end: float,
    steps: int,
    omega_mask: np.ndarray,
    omega_prime_radius: float,
    ensemble: int,
    seed: int,
    scheme: str = "implicit_euler",
) -> list[dict]:
    """Observed inequality ratios over an ensemble of admissible sources.

    For every ensemble member a source pair is drawn, the coupled system is
    solved from a zero initial state over [0, t_end], z = d/dt y is formed,
    and both sides of the inequality are evaluated at each s.  The sources
    of the differentiated system are the time derivatives carried by the
    drawn :class:`~bslab.stepping.SourcePair`.  Rows with a vanishing right
    side (a zero draw) are reported as skipped rather than divided.
    """
    s_grid = tuple(float(s) for s in s_grid)
    if any(s < 1.0 for s in s_grid) or list(s_grid) != sorted(s_grid):
        raise ValueError("s_grid must be increasing with all entries >= 1")
    mesh = op.mesh
    eta0 = build_eta0(mesh, omega_prime_radius)
    rows: list[dict] = []
    zero0 = CoupledField.zeros(mesh)
    for member in range(ensemble):
        rng = np.random.default_rng([seed, member])
        sources = source_factory(rng)
        if sources.bulk_dt is None or sources.surface_dt is None:
            raise ValueError("carleman_sweep needs sources with time derivatives")
        traj = solve_trajectory(zero0, sources, 0.0, t_end, steps, scheme, op)
        z = time_derivative(traj)
        weight_sets = [
            CarlemanWeightSet(eta0, s=s, lam=lam, t0=t0, t_end=t_end) for s in s_grid
        ]
        sides_list = carleman_sides_multi(
            z, weight_sets, omega_mask, op, lz_bulk=sources.bulk_dt, lz_surf=sources.surface_dt
        )
        for s, sides in zip(s_grid, sides_list):
            row = {"member": member, "s": s, "lam": lam}
            row.update(sides.as_dict())
            row["lhs_total"] = sides.lhs_total
            row["rhs_total"] = sides.rhs_total
            if sides.rhs_total == 0.0:
                row["ratio"] = math.nan
                row["status"] = "skipped"
            else:
                row["ratio"] = sides.ratio
                row["status"] = "ok"
            rows.append(row)
    return rows

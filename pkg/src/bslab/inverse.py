"""Inverse source machinery: admissibility, observation, reconstruction, stability.

The unknowns are separable sources F = f(x) r(t, x) in the bulk and
G = g(x) rt(t, x) on the boundary, with known time profiles r, rt that do
not vanish at the observation time T0 (the midpoint of the observation
window).  Such pairs are admissible: their time derivative is pointwise
dominated by a computable constant times their value at T0, and that
constant is certified by ``make_separable`` on the discrete grid.

The data of one experiment is a single coupled snapshot Y(T0, .) measured
in the operator-based equivalent H2 norm, plus the interior time derivative
of the bulk component on a window (t0, T) restricted to an interior cell
mask.  ``reconstruct`` inverts the linear source-to-observation map on a
truncated smooth basis (Chebyshev in radius times trigonometric in angle
for the bulk, trigonometric for the boundary), assembling the map column by
column through unit-coefficient forward solves and solving the Tikhonov
normal equations.

``stability_experiment`` measures the conditioning the reconstruction
relies on: the ratio of the space-time source norm to the observation norm
over ensembles of random admissible pairs and of difference pairs sharing
one known profile, together with a uniqueness audit (no two ensemble
members may have near-identical observations but distinct sources).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .coefficients import ProblemCoefficients
from .geometry import BulkField, CoupledField, DiskMesh, SurfaceField
from .operators import CoupledOperator, norms
from .stepping import SourcePair, Trajectory, solve_trajectory, time_derivative

__all__ = [
    "DegenerateKnownPart",
    "SingularNormalEquations",
    "SeparableSource",
    "make_separable",
    "check_admissible",
    "ObservationRecord",
    "observe",
    "ForwardMap",
    "bulk_basis",
    "surface_basis",
    "ReconstructionResult",
    "reconstruct",
    "assemble_probing_matrix",
    "StabilityReport",
    "stability_experiment",
    "SeparableSpec",
    "random_separable_spec",
    "source_norm_on_grid",
]


class DegenerateKnownPart(ValueError):
    """The known time profile vanishes somewhere at the observation time."""


class SingularNormalEquations(RuntimeError):
    """The regularized normal equations are numerically singular."""


# --------------------------------------------------------------------------
# separable sources and admissibility


@dataclass(frozen=True)
class SeparableSource:
    """Separable source pair with its certified admissibility data.

    ``r_bulk(t)`` returns the known bulk profile as an (nr, nth) array,
    ``r_surf(t)`` the boundary profile as an (nth,) array; the ``_dt``
    callables are their time derivatives.  ``c0`` dominates
    |d/dt F| / |F(T0, .)| and the surface analogue on the whole grid.
    """

    mesh: DiskMesh
    f: np.ndarray
    g: np.ndarray
    r_bulk: Callable[[float], np.ndarray]
    r_bulk_dt: Callable[[float], np.ndarray]
    r_surf: Callable[[float], np.ndarray]
    r_surf_dt: Callable[[float], np.ndarray]
    c0: float
    r0_bulk: float
    r0_surf: float

    def source_pair(self) -> SourcePair:
        return SourcePair(
            mesh=self.mesh,
            bulk=lambda t: self.f * self.r_bulk(t),
            surface=lambda t: self.g * self.r_surf(t),
            bulk_dt=lambda t: self.f * self.r_bulk_dt(t),
            surface_dt=lambda t: self.g * self.r_surf_dt(t),
        )


def make_separable(
    mesh: DiskMesh,
    f: np.ndarray,
    g: np.ndarray,
    r_bulk: Callable[[float], np.ndarray],
    r_bulk_dt: Callable[[float], np.ndarray],
    r_surf: Callable[[float], np.ndarray],
    r_surf_dt: Callable[[float], np.ndarray],
    times: np.ndarray,
    t_obs: float,
) -> SeparableSource:
    """Build a separable source and certify its admissibility constant.

    r0 is the grid minimum of |r(T0, .)| (and its surface analogue); the
    constant is c0 = max(sup|d/dt r| / r0, sup|d/dt rt| / rt0) with the sups
    taken over all grid times and points.

    Raises
    ------
    DegenerateKnownPart
        If either profile vanishes exactly at T0 anywhere on the grid.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != (mesh.nr, mesh.nth) or g.shape != (mesh.nth,):
        raise ValueError("f or g has a shape not matching the mesh")
    r0_bulk = float(np.min(np.abs(r_bulk(t_obs))))
    r0_surf = float(np.min(np.abs(r_surf(t_obs))))
    if r0_bulk == 0.0:
        raise DegenerateKnownPart("bulk profile vanishes at the observation time")
    if r0_surf == 0.0:
        raise DegenerateKnownPart("surface profile vanishes at the observation time")
    sup_bulk = max(float(np.max(np.abs(r_bulk_dt(float(t))))) for t in times)
    sup_surf = max(float(np.max(np.abs(r_surf_dt(float(t))))) for t in times)
    c0 = max(sup_bulk / r0_bulk, sup_surf / r0_surf)
    return SeparableSource(
        mesh=mesh,
        f=f,
        g=g,
        r_bulk=r_bulk,
        r_bulk_dt=r_bulk_dt,
        r_surf=r_surf,
        r_surf_dt=r_surf_dt,
        c0=c0,
        r0_bulk=r0_bulk,
        r0_surf=r0_surf,
    )


def check_admissible(
    sources: SourcePair,
    times: np.ndarray,
    t_obs: float,
    c0: float,
) -> tuple[bool, tuple | None]:
    """Grid-everywhere admissibility check |F_t| <= c0 |F(T0, .)|.

    Verified at every grid time and every cell/node, for both components.
    Returns (True, None) on success, else (False, witness) with the first
    violation as (t, location, |F_t|, bound); locations are ("bulk", i, j)
    or ("surface", j).  Missing derivative callables fall back to centered
    grid differences of the evaluated source.
    """
    mesh = sources.mesh
    bound_bulk = c0 * np.abs(sources.bulk(t_obs))
    bound_surf = c0 * np.abs(sources.surface(t_obs))

    if sources.bulk_dt is not None and sources.surface_dt is not None:
        def dt_bulk(k: int) -> np.ndarray:
            return np.asarray(sources.bulk_dt(float(times[k])))

        def dt_surf(k: int) -> np.ndarray:
            return np.asarray(sources.surface_dt(float(times[k])))
    else:
        f_stack = np.stack([np.asarray(sources.bulk(float(t))) for t in times])
        g_stack = np.stack([np.asarray(sources.surface(float(t))) for t in times])
        df = np.gradient(f_stack, times, axis=0)
        dg = np.gradient(g_stack, times, axis=0)

        def dt_bulk(k: int) -> np.ndarray:
            return df[k]

        def dt_surf(k: int) -> np.ndarray:
            return dg[k]

    tol = 1e-12
    for k, t in enumerate(times):
        db = np.abs(dt_bulk(k))
        bad = db > bound_bulk + tol * np.maximum(1.0, bound_bulk)
        if np.any(bad):
            i, j = np.unravel_index(int(np.argmax(bad)), bad.shape)
            return False, (float(t), ("bulk", int(i), int(j)), float(db[i, j]), float(bound_bulk[i, j]))
        ds = np.abs(dt_surf(k))
        bad = ds > bound_surf + tol * np.maximum(1.0, bound_surf)
        if np.any(bad):
            j = int(np.argmax(bad))
            return False, (float(t), ("surface", j), float(ds[j]), float(bound_surf[j]))
    return True, None


# --------------------------------------------------------------------------
# observation


@dataclass(frozen=True)
class ObservationRecord:
    """Snapshot at T0 plus the windowed interior time derivative.

    ``interior_dt`` has one row per window time node and one column per
    cell of the interior mask (row-major cell order).  The cached norms are
    the equivalent-H2 norm of the snapshot and the space-time L2 norm of
    the interior derivative (trapezoid in time).
    """

    snapshot: CoupledField
    interior_dt: np.ndarray
    omega_mask: np.ndarray
    window_times: np.ndarray
    t0: float
    t_obs: float
    snapshot_h2eq: float = field(init=False)
    interior_norm: float = field(init=False)

    def __post_init__(self) -> None:
        mesh = self.snapshot.mesh
        n_omega = int(np.count_nonzero(self.omega_mask))
        if n_omega == 0:
            raise ValueError("interior observation mask is empty")
        if self.interior_dt.shape != (len(self.window_times), n_omega):
            raise ValueError("interior_dt shape does not match window times and mask")
        object.__setattr__(self, "snapshot_h2eq", norms(self.snapshot, "H2eq"))
        w_t = _trapezoid_weights(self.window_times)
        m_omega = mesh.cell_measures_flat[self.omega_mask.ravel()]
        val = float(np.sqrt(np.sum(w_t[:, None] * m_omega[None, :] * self.interior_dt**2)))
        object.__setattr__(self, "interior_norm", val)

    @property
    def mesh(self) -> DiskMesh:
        return self.snapshot.mesh

    @property
    def norm_sum(self) -> float:
        """The stability denominator: H2eq of the snapshot plus the interior norm."""
        return self.snapshot_h2eq + self.interior_norm

    def vector(self) -> np.ndarray:
        """Weighted observation vector whose Euclidean norm is the Hilbertian
        counterpart of the observation norm (used by least squares)."""
        mesh = self.mesh
        from .operators import _identity_operator  # identity stiffness for the bulk Laplacian
        from .geometry import surface_laplacian

        vec = self.snapshot.to_vector()
        sqrt_m = np.sqrt(mesh.cell_measures_flat)
        sqrt_s = np.sqrt(mesh.node_measures)
        lap_b = _identity_operator(mesh).div_a_grad(vec).ravel()
        lap_s = surface_laplacian(self.snapshot.surface).values
        w_t = _trapezoid_weights(self.window_times)
        m_omega = mesh.cell_measures_flat[self.omega_mask.ravel()]
        dt_block = (np.sqrt(w_t)[:, None] * np.sqrt(m_omega)[None, :] * self.interior_dt).ravel()
        return np.concatenate(
            [
                sqrt_m * vec[: mesh.n_cells],
                sqrt_m * lap_b,
                sqrt_s * vec[mesh.n_cells :],
                sqrt_s * lap_s,
                dt_block,
            ]
        )

    def difference(self, other: "ObservationRecord") -> "ObservationRecord":
        if not self.mesh.same_mesh(other.mesh):
            raise ValueError("records live on different meshes")
        snap = CoupledField.from_vector(
            self.mesh, self.snapshot.to_vector() - other.snapshot.to_vector()
        )
        return ObservationRecord(
            snapshot=snap,
            interior_dt=self.interior_dt - other.interior_dt,
            omega_mask=self.omega_mask,
            window_times=self.window_times,
            t0=self.t0,
            t_obs=self.t_obs,
        )

    def with_noise(self, rng: np.random.Generator, level: float) -> "ObservationRecord":
        """Additive Gaussian noise, std = level times the RMS of each data block."""
        snap_vec = self.snapshot.to_vector()
        scale_snap = level * _rms(snap_vec)
        scale_dt = level * _rms(self.interior_dt)
        snap = CoupledField.from_vector(
            self.mesh, snap_vec + scale_snap * rng.standard_normal(snap_vec.shape)
        )
        dt = self.interior_dt + scale_dt * rng.standard_normal(self.interior_dt.shape)
        return ObservationRecord(
            snapshot=snap,
            interior_dt=dt,
            omega_mask=self.omega_mask,
            window_times=self.window_times,
            t0=self.t0,
            t_obs=self.t_obs,
        )


def _rms(a: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.asarray(a) ** 2)))


def _trapezoid_weights(times: np.ndarray) -> np.ndarray:
    dt = float(times[1] - times[0])
    w = np.full(len(times), dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def observe(traj: Trajectory, t0: float, omega_mask: np.ndarray) -> ObservationRecord:
    """Extract the observation record from a trajectory.

    The observation time T0 = (t0 + T)/2 with T the trajectory end; both t0
    and T0 must land on the time grid (configure an even window step count).
    """
    mesh = traj.mesh
    if omega_mask.shape != (mesh.nr, mesh.nth):
        raise ValueError("omega mask shape does not match the mesh")
    if not np.any(omega_mask):
        raise ValueError("interior observation mask is empty")
    t_end = float(traj.times[-1])
    t_obs = 0.5 * (t0 + t_end)
    k0 = traj.index_of(t0)
    k_obs = traj.index_of(t_obs)
    window = traj.times[k0:]
    dty = time_derivative(traj)
    flat = omega_mask.ravel()
    interior = dty.states[k0:, : mesh.n_cells][:, flat]
    return ObservationRecord(
        snapshot=traj.field(k_obs),
        interior_dt=interior,
        omega_mask=omega_mask,
        window_times=window,
        t0=float(t0),
        t_obs=t_obs,
    )


def source_norm_on_grid(sources: SourcePair, times: np.ndarray) -> float:
    """Space-time L2 norm of (F, G) over the full grid, trapezoid in time."""
    mesh = sources.mesh
    w_t = _trapezoid_weights(times)
    total = 0.0
    for w, t in zip(w_t, times):
        fb = np.asarray(sources.bulk(float(t)))
        fs = np.asarray(sources.surface(float(t)))
        total += w * (
            float(np.sum(mesh.cell_areas * fb**2))
            + float(np.sum(mesh.node_measure * fs**2))
        )
    return math.sqrt(total)


# --------------------------------------------------------------------------
# forward map and reconstruction


@dataclass(frozen=True)
class ForwardMap:
    """Linear map from spatial source amplitudes (f, g) to the observation.

    Solves the coupled system from a zero initial state with F = f r,
    G = g rt over [0, t_end] and observes on the window (t0, t_end).  Any
    affine contribution (nonzero initial state, known background source) is
    the caller's to subtract once, by linearity.
    """

    op: CoupledOperator
    r_bulk: Callable[[float], np.ndarray]
    r_surf: Callable[[float], np.ndarray]
    t_end: float
    steps: int
    t0: float
    omega_mask: np.ndarray
    scheme: str = "implicit_euler"
    rtol: float = 1e-10

    @property
    def mesh(self) -> DiskMesh:
        return self.op.mesh

    def apply(self, f: np.ndarray, g: np.ndarray) -> ObservationRecord:
        mesh = self.mesh
        f = np.asarray(f, dtype=float)
        g = np.asarray(g, dtype=float)
        sources = SourcePair(
            mesh,
            bulk=lambda t: f * self.r_bulk(t),
            surface=lambda t: g * self.r_surf(t),
        )
        traj = solve_trajectory(
            CoupledField.zeros(mesh), sources, 0.0, self.t_end, self.steps,
            self.scheme, self.op, self.rtol,
        )
        return observe(traj, self.t0, self.omega_mask)


def bulk_basis(mesh: DiskMesh, n_radial: int, n_angular: int) -> np.ndarray:
    """Tensor basis for bulk sources: Chebyshev in 2r/R - 1 times trig in theta.

    Returns an array of shape (n_radial * n_angular, nr, nth) with every
    member normalized to unit discrete L2 norm.
    """
    x = 2.0 * mesh.r_centers / mesh.radius - 1.0
    th = mesh.theta_centers
    radial = [np.polynomial.chebyshev.Chebyshev.basis(k)(x) for k in range(n_radial)]
    angular = _trig_family(th, n_angular)
    out = np.empty((n_radial * n_angular, mesh.nr, mesh.nth))
    idx = 0
    for rad in radial:
        for ang in angular:
            phi = rad[:, None] * ang[None, :]
            nrm = math.sqrt(float(np.sum(mesh.cell_areas * phi**2)))
            out[idx] = phi / nrm
            idx += 1
    return out


def surface_basis(mesh: DiskMesh, n: int) -> np.ndarray:
    """Trigonometric basis on the circle, unit discrete L2 norm per member."""
    out = np.stack(_trig_family(mesh.theta_centers, n))
    nrm = np.sqrt(np.sum(mesh.node_measure * out**2, axis=1))
    return out / nrm[:, None]


def _trig_family(th: np.ndarray, n: int) -> list[np.ndarray]:
    fams = [np.ones_like(th)]
    m = 1
    while len(fams) < n:
        fams.append(np.cos(m * th))
        if len(fams) < n:
            fams.append(np.sin(m * th))
        m += 1
    return fams[:n]


def assemble_probing_matrix(
    fmap: ForwardMap,
    bulk_fns: np.ndarray,
    surf_fns: np.ndarray,
) -> np.ndarray:
    """Observation vectors of all basis elements, one column per element.

    Columns are keyed by basis index (bulk block first), so the assembly is
    order-independent and could be distributed; here the independent solves
    run sequentially.
    """
    mesh = fmap.mesh
    zeros_g = np.zeros(mesh.nth)
    zeros_f = np.zeros((mesh.nr, mesh.nth))
    cols = []
    for phi in bulk_fns:
        cols.append(fmap.apply(phi, zeros_g).vector())
    for psi in surf_fns:
        cols.append(fmap.apply(zeros_f, psi).vector())
    return np.column_stack(cols)


@dataclass(frozen=True)
class ReconstructionResult:
    f_hat: BulkField
    g_hat: SurfaceField
    coefficients: np.ndarray
    n_bulk: int
    n_surface: int
    epsilon: float
    residual: float
    condition: float

    def diagnostics(self) -> dict:
        return {
            "n_bulk": self.n_bulk,
            "n_surface": self.n_surface,
            "epsilon": self.epsilon,
            "residual": self.residual,
            "condition": self.condition,
        }


BASIS_CAP_BULK = 64
BASIS_CAP_SURFACE = 16


def reconstruct(
    obs: ObservationRecord,
    fmap: ForwardMap,
    epsilon: float,
    n_radial: int = 8,
    n_angular: int = 8,
    n_surface: int = 16,
    cap_bulk: int = BASIS_CAP_BULK,
    cap_surface: int = BASIS_CAP_SURFACE,
    probing_matrix: np.ndarray | None = None,
) -> ReconstructionResult:
    """Tikhonov reconstruction of (f, g) from one observation record.

    Minimizes ||M c - obs||^2 + epsilon ||c||^2 over the truncated basis,
    where M is the probing matrix of the forward map in the Hilbertian
    observation inner product and the basis members have unit L2 norm (so
    the coefficient penalty is the L2 penalty on the fields).  A
    precomputed ``probing_matrix`` may be supplied to amortize the solves
    across repeated inversions (noise sweeps, epsilon scans).
    """
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    n_bulk = n_radial * n_angular
    if n_bulk > cap_bulk:
        raise ValueError(f"bulk basis {n_bulk} exceeds the cap {cap_bulk}")
    if n_surface > cap_surface:
        raise ValueError(f"surface basis {n_surface} exceeds the cap {cap_surface}")
    mesh = fmap.mesh
    bulk_fns = bulk_basis(mesh, n_radial, n_angular)
    surf_fns = surface_basis(mesh, n_surface)
    if probing_matrix is None:
        probing_matrix = assemble_probing_matrix(fmap, bulk_fns, surf_fns)
    data = obs.vector()
    gram = probing_matrix.T @ probing_matrix
    gram[np.diag_indices_from(gram)] += epsilon
    try:
        factor = scipy.linalg.cho_factor(gram)
        coeffs = scipy.linalg.cho_solve(factor, probing_matrix.T @ data)
    except scipy.linalg.LinAlgError as exc:
        raise SingularNormalEquations(
            f"normal equations singular at epsilon={epsilon:g} with basis "
            f"{n_bulk}+{n_surface}"
        ) from exc
    residual = float(np.linalg.norm(probing_matrix @ coeffs - data))
    condition = float(np.linalg.cond(gram))
    f_hat = np.tensordot(coeffs[:n_bulk], bulk_fns, axes=1)
    g_hat = coeffs[n_bulk:] @ surf_fns
    return ReconstructionResult(
        f_hat=BulkField(mesh, f_hat),
        g_hat=SurfaceField(mesh, g_hat),
        coefficients=coeffs,
        n_bulk=n_bulk,
        n_surface=n_surface,
        epsilon=float(epsilon),
        residual=residual,
        condition=condition,
    )


# --------------------------------------------------------------------------
# random admissible sources and the stability experiment


@dataclass(frozen=True)
class SeparableSpec:
    """Mesh-independent draw of a random admissible separable source.

    Holds expansion coefficients and profile parameters only, so one draw
    can be materialized on any mesh (refinement studies must keep the
    continuum source fixed while the grid changes).
    """

    bulk_coeffs: np.ndarray  # (n_radial, n_angular)
    surf_coeffs: np.ndarray  # (n_surface,)
    bulk_osc: tuple[float, float, float, float]  # amplitude, frequency, phase, angle
    surf_osc: tuple[float, float, float, float]

    def materialize(self, mesh: DiskMesh) -> tuple:
        """Evaluate the draw on a mesh; returns (f, g, r, r_dt, rt, rt_dt).
        Profiles stay bounded away from zero at every time."""
        n_rad, n_ang = self.bulk_coeffs.shape
        bulk_fns = bulk_basis(mesh, n_rad, n_ang)
        surf_fns = surface_basis(mesh, len(self.surf_coeffs))
        f = np.tensordot(self.bulk_coeffs.ravel(), bulk_fns, axes=1)
        g = self.surf_coeffs @ surf_fns

        amp_b, freq_b, phase_b, ang_b = self.bulk_osc
        rho_b = (mesh.r_centers[:, None] / mesh.radius) * np.cos(
            mesh.theta_centers[None, :] - ang_b
        )
        amp_s, freq_s, phase_s, ang_s = self.surf_osc
        rho_s = np.cos(mesh.theta_centers - ang_s)

        def r_bulk(t: float) -> np.ndarray:
            return 1.0 + amp_b * math.sin(freq_b * t + phase_b) * rho_b

        def r_bulk_dt(t: float) -> np.ndarray:
            return amp_b * freq_b * math.cos(freq_b * t + phase_b) * rho_b

        def r_surf(t: float) -> np.ndarray:
            return 1.0 + amp_s * math.sin(freq_s * t + phase_s) * rho_s

        def r_surf_dt(t: float) -> np.ndarray:
            return amp_s * freq_s * math.cos(freq_s * t + phase_s) * rho_s

        return (f, g, r_bulk, r_bulk_dt, r_surf, r_surf_dt)


def random_separable_spec(
    rng: np.random.Generator,
    n_radial: int = 3,
    n_angular: int = 5,
    n_surface: int = 5,
) -> SeparableSpec:
    """Draw a smooth random source spec; profile oscillations stay below 0.4,
    so every profile is bounded away from zero at all times."""
    return SeparableSpec(
        bulk_coeffs=rng.standard_normal((n_radial, n_angular)),
        surf_coeffs=rng.standard_normal(n_surface),
        bulk_osc=(
            float(rng.uniform(0.1, 0.4)),
            float(rng.uniform(0.5, 2.0)),
            float(rng.uniform(0.0, 2.0 * math.pi)),
            float(rng.uniform(0.0, 2.0 * math.pi)),
        ),
        surf_osc=(
            float(rng.uniform(0.1, 0.4)),
            float(rng.uniform(0.5, 2.0)),
            float(rng.uniform(0.0, 2.0 * math.pi)),
            float(rng.uniform(0.0, 2.0 * math.pi)),
        ),
    )


def materialize_separable(
    spec: SeparableSpec, mesh: DiskMesh, times: np.ndarray, t_obs: float
) -> SeparableSource:
    f, g, r_bulk, r_bulk_dt, r_surf, r_surf_dt = spec.materialize(mesh)
    return make_separable(mesh, f, g, r_bulk, r_bulk_dt, r_surf, r_surf_dt, times, t_obs)


@dataclass(frozen=True)
class StabilityReport:
    """Observed stability ratios and the uniqueness audit of one ensemble."""

    single_rows: list[dict]
    diff_rows: list[dict]
    uniqueness: dict
    seed: int
    ensemble: int
    n_diff_pairs: int

    def _stats(self, rows: list[dict]) -> dict:
        vals = [r["rho"] for r in rows if r["status"] == "ok"]
        if not vals:
            return {"max": math.nan, "median": math.nan, "min": math.nan, "count": 0}
        return {
            "max": float(np.max(vals)),
            "median": float(np.median(vals)),
            "min": float(np.min(vals)),
            "count": len(vals),
        }

    @property
    def single_stats(self) -> dict:
        return self._stats(self.single_rows)

    @property
    def diff_stats(self) -> dict:
        return self._stats(self.diff_rows)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "seed": self.seed,
            "ensemble": self.ensemble,
            "n_diff_pairs": self.n_diff_pairs,
            "single_stats": self.single_stats,
            "diff_stats": self.diff_stats,
            "uniqueness": self.uniqueness,
            "single_rows": self.single_rows,
            "diff_rows": self.diff_rows,
        }


def stability_experiment(
    op: CoupledOperator,
    t_end: float,
    steps: int,
    t0: float,
    omega_mask: np.ndarray,
    ensemble: int,
    n_diff_pairs: int,
    seed: int,
    scheme: str = "implicit_euler",
) -> StabilityReport:
    """Measure source-to-observation stability ratios over random ensembles.

    Singles: for each drawn admissible pair, rho is the space-time source
    norm divided by the observation norm (equivalent-H2 snapshot plus
    interior-derivative norm).  Difference pairs share one known profile
    per pair and apply the map to the amplitude difference directly.  The
    uniqueness audit flags any two singles whose observations are closer
    than 1e-10 while their sources differ by more than 1e-6 (expected never).
    """
    if ensemble < 2:
        raise ValueError(f"ensemble must be at least 2, got {ensemble}")
    mesh = op.mesh
    t_obs = 0.5 * (t0 + t_end)
    dt = t_end / steps
    times = dt * np.arange(steps + 1)
    zero0 = CoupledField.zeros(mesh)

    single_rows: list[dict] = []
    records: list[ObservationRecord | None] = []
    sources_list: list[SeparableSource] = []
    for member in range(ensemble):
        rng = np.random.default_rng([seed, member])
        spec = random_separable_spec(rng)
        sep = materialize_separable(spec, mesh, times, t_obs)
        sources_list.append(sep)
        pair = sep.source_pair()
        src_norm = source_norm_on_grid(pair, times)
        traj = solve_trajectory(zero0, pair, 0.0, t_end, steps, scheme, op)
        rec = observe(traj, t0, omega_mask)
        records.append(rec)
        denom = rec.norm_sum
        if src_norm == 0.0 and denom == 0.0:
            single_rows.append(
                {"member": member, "rho": math.nan, "source_norm": 0.0,
                 "obs_norm": 0.0, "status": "skipped"}
            )
        else:
            single_rows.append(
                {"member": member, "rho": src_norm / denom, "source_norm": src_norm,
                 "obs_norm": denom, "status": "ok"}
            )

    diff_rows: list[dict] = []
    for k in range(n_diff_pairs):
        rng = np.random.default_rng([seed, ensemble + k, 7])
        shared = random_separable_spec(rng)
        sep_common = materialize_separable(shared, mesh, times, t_obs)
        spec2 = random_separable_spec(rng)
        sep2 = materialize_separable(spec2, mesh, times, t_obs)
        df = sep_common.f - sep2.f
        dg = sep_common.g - sep2.g
        diff_sources = SourcePair(
            mesh,
            bulk=lambda t, df=df, r=sep_common.r_bulk: df * r(t),
            surface=lambda t, dg=dg, r=sep_common.r_surf: dg * r(t),
        )
        src_norm = source_norm_on_grid(diff_sources, times)
        traj = solve_trajectory(zero0, diff_sources, 0.0, t_end, steps, scheme, op)
        rec = observe(traj, t0, omega_mask)
        denom = rec.norm_sum
        if src_norm == 0.0 and denom == 0.0:
            diff_rows.append({"pair": k, "rho": math.nan, "source_norm": 0.0,
                              "obs_norm": 0.0, "status": "skipped"})
        else:
            diff_rows.append({"pair": k, "rho": src_norm / denom, "source_norm": src_norm,
                              "obs_norm": denom, "status": "ok"})

    uniqueness = _uniqueness_audit(records, sources_list, times)
    return StabilityReport(
        single_rows=single_rows,
        diff_rows=diff_rows,
        uniqueness=uniqueness,
        seed=seed,
        ensemble=ensemble,
        n_diff_pairs=n_diff_pairs,
    )


def _uniqueness_audit(
    records: list[ObservationRecord],
    sources_list: list[SeparableSource],
    times: np.ndarray,
    obs_tol: float = 1e-10,
    src_tol: float = 1e-6,
) -> dict:
    """Ensemble-pairwise check that near-identical observations imply
    near-identical sources.  Source distances are only evaluated for pairs
    that trip the observation threshold, which is expected never to happen."""
    n = len(records)
    violations = []
    min_obs = math.inf
    for i in range(n):
        for j in range(i + 1, n):
            d = records[i].difference(records[j])
            obs_dist = d.norm_sum
            min_obs = min(min_obs, obs_dist)
            if obs_dist <= obs_tol:
                si, sj = sources_list[i], sources_list[j]
                mesh = si.mesh
                diff_pair = SourcePair(
                    mesh,
                    bulk=lambda t, si=si, sj=sj: si.f * si.r_bulk(t) - sj.f * sj.r_bulk(t),
                    surface=lambda t, si=si, sj=sj: si.g * si.r_surf(t) - sj.g * sj.r_surf(t),
                )
                src_dist = source_norm_on_grid(diff_pair, times)
                if src_dist > src_tol:
                    violations.append({"pair": [i, j], "obs_distance": obs_dist,
                                       "source_distance": src_dist})
    return {
        "checked_pairs": n * (n - 1) // 2,
        "min_observation_distance": min_obs,
        "obs_tol": obs_tol,
        "src_tol": src_tol,
        "violations": violations,
    }

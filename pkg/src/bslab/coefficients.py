"""Coefficient data for the coupled system and its ellipticity certification.

The bulk diffusion tensor is stored per cell in the polar orthonormal frame
(e_r, e_theta) as the three entries (a_rr, a_rt, a_tt) of a symmetric 2x2
matrix; symmetry is enforced by storage.  Flux stencils are written in polar
faces, so this frame is the natural one; a Cartesian tensor field is
frame-equivalent through the pointwise rotation by theta.

On the boundary circle the tangent space is one-dimensional, so the surface
diffusion acts as a positive scalar per node and the surface drift as a
single tangential component; nothing is lost against a matrix-valued
surface tensor.

Validation computes certified two-sided ellipticity bounds from the closed
form for 2x2 symmetric eigenvalues, plus the coercivity shift

    mu = beta0/2 + (sup|B|^2 + sup|b|^2) / (2 beta0) + sup|p| + sup|q|,

the standard Cauchy-Schwarz/Young split, which makes the coercivity of the
energy form a concretely testable inequality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import DiskMesh

__all__ = [
    "ProblemCoefficients",
    "EllipticityReport",
    "NonElliptic",
    "validate_coefficients",
    "preset",
    "PRESET_NAMES",
]


class NonElliptic(ValueError):
    """Raised when a diffusion entry fails the positivity requirement.

    Carries the offending location: ("cell", i, j) or ("node", j).
    """

    def __init__(self, where: tuple, value: float):
        self.where = where
        self.value = value
        super().__init__(f"diffusion not elliptic at {where}: eigenvalue/value {value:.6g}")


def _shaped(mesh: DiskMesh, values, shape, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape == ():
        arr = np.full(shape, float(arr))
    if arr.shape != shape:
        raise ValueError(f"{what} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite entries")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ProblemCoefficients:
    """Coefficients of the coupled system, sampled on a mesh.

    a_rr, a_rt, a_tt : per-cell symmetric bulk diffusion in the polar frame
    d                : per-node surface diffusion scalar
    b_r, b_t         : per-cell bulk drift components
    b_surf           : per-node tangential surface drift
    p                : per-cell bulk potential
    q                : per-node surface potential
    """

    mesh: DiskMesh
    a_rr: np.ndarray
    a_rt: np.ndarray
    a_tt: np.ndarray
    d: np.ndarray
    b_r: np.ndarray
    b_t: np.ndarray
    b_surf: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self) -> None:
        cells = (self.mesh.nr, self.mesh.nth)
        nodes = (self.mesh.nth,)
        for name, shape in (
            ("a_rr", cells),
            ("a_rt", cells),
            ("a_tt", cells),
            ("b_r", cells),
            ("b_t", cells),
            ("p", cells),
            ("d", nodes),
            ("b_surf", nodes),
            ("q", nodes),
        ):
            object.__setattr__(self, name, _shaped(self.mesh, getattr(self, name), shape, name))

    @staticmethod
    def isotropic(mesh: DiskMesh, a=1.0, d=1.0, b_r=0.0, b_t=0.0, b_surf=0.0, p=0.0, q=0.0):
        """Scalar-diffusion shorthand: A = a*I with the remaining data scalar or arrays."""
        zeros = np.zeros((mesh.nr, mesh.nth))
        return ProblemCoefficients(
            mesh=mesh,
            a_rr=zeros + a,
            a_rt=np.zeros((mesh.nr, mesh.nth)),
            a_tt=zeros + a,
            d=np.zeros(mesh.nth) + d,
            b_r=zeros + b_r,
            b_t=zeros + b_t,
            b_surf=np.zeros(mesh.nth) + b_surf,
            p=zeros + p,
            q=np.zeros(mesh.nth) + q,
        )

    def eigenvalue_range(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell (smaller, larger) eigenvalue of the 2x2 diffusion matrix."""
        mean = 0.5 * (self.a_rr + self.a_tt)
        spread = np.hypot(0.5 * (self.a_rr - self.a_tt), self.a_rt)
        return mean - spread, mean + spread

    @property
    def sup_drift_bulk(self) -> float:
        return float(np.max(np.hypot(self.b_r, self.b_t)))

    @property
    def sup_drift_surface(self) -> float:
        return float(np.max(np.abs(self.b_surf)))

    @property
    def sup_potential_bulk(self) -> float:
        return float(np.max(np.abs(self.p)))

    @property
    def sup_potential_surface(self) -> float:
        return float(np.max(np.abs(self.q)))

    @property
    def has_drift(self) -> bool:
        return bool(np.any(self.b_r) or np.any(self.b_t) or np.any(self.b_surf))


@dataclass(frozen=True)
class EllipticityReport:
    """Certified bounds produced by :func:`validate_coefficients`."""

    beta0: float
    a0: float
    mu: float
    sup_drift_bulk: float
    sup_drift_surface: float
    sup_potential_bulk: float
    sup_potential_surface: float

    def __post_init__(self) -> None:
        if not (0.0 < self.beta0 <= self.a0):
            raise ValueError(f"inconsistent bounds beta0={self.beta0}, a0={self.a0}")
        if not np.isfinite(self.mu):
            raise ValueError("mu is not finite")


def validate_coefficients(c: ProblemCoefficients, mesh: DiskMesh) -> EllipticityReport:
    """Certify two-sided ellipticity and compute the coercivity shift.

    beta0 is the smallest of the per-cell smaller eigenvalues and the nodal
    surface-diffusion values; a0 is the corresponding largest upper bound.

    Raises
    ------
    NonElliptic
        If any smaller eigenvalue or surface-diffusion value is <= 0,
        reporting the first offending cell or node.
    """
    if not c.mesh.same_mesh(mesh):
        raise ValueError("coefficients were sampled on a different mesh")
    lo, hi = c.eigenvalue_range()
    if np.min(lo) <= 0.0:
        i, j = np.unravel_index(int(np.argmin(lo)), lo.shape)
        raise NonElliptic(("cell", int(i), int(j)), float(lo[i, j]))
    if np.min(c.d) <= 0.0:
        j = int(np.argmin(c.d))
        raise NonElliptic(("node", j), float(c.d[j]))
    beta0 = float(min(lo.min(), c.d.min()))
    a0 = float(max(hi.max(), c.d.max()))
    mu = (
        0.5 * beta0
        + (c.sup_drift_bulk**2 + c.sup_drift_surface**2) / (2.0 * beta0)
        + c.sup_potential_bulk
        + c.sup_potential_surface
    )
    return EllipticityReport(
        beta0=beta0,
        a0=a0,
        mu=float(mu),
        sup_drift_bulk=c.sup_drift_bulk,
        sup_drift_surface=c.sup_drift_surface,
        sup_potential_bulk=c.sup_potential_bulk,
        sup_potential_surface=c.sup_potential_surface,
    )


PRESET_NAMES = ("identity", "radial_scalar", "anisotropic", "drifted", "random_smooth")


def preset(name: str, mesh: DiskMesh, **params) -> ProblemCoefficients:
    """Reproducible coefficient sets, elliptic by construction.

    identity
        A = I, D = 1, everything else zero.
    radial_scalar(a0=1.0, a1=0.5)
        A = (a0 + a1 r^2) I, D = 1.
    anisotropic()
        a_rr = 2 + 0.5 sin(theta), a_tt = 2, a_rt = 0.5,
        D = 1 + 0.25 cos(theta), mild potentials.
    drifted(strength=0.4)
        Identity diffusion plus smooth bulk/surface drifts and
        nonnegative potentials.
    random_smooth(seed=0, amplitude=0.3)
        Seeded low-order trigonometric perturbations of the identity; the
        constant offset exceeds the oscillation amplitude, so ellipticity
        holds by construction and the draw is bitwise reproducible.
    """
    rr, tt = np.meshgrid(mesh.r_centers, mesh.theta_centers, indexing="ij")
    th = mesh.theta_centers

    if name == "identity":
        _reject_extra(name, params)
        return ProblemCoefficients.isotropic(mesh)

    if name == "radial_scalar":
        a0 = float(params.pop("a0", 1.0))
        a1 = float(params.pop("a1", 0.5))
        _reject_extra(name, params)
        return ProblemCoefficients.isotropic(mesh, a=a0 + a1 * rr**2)

    if name == "anisotropic":
        _reject_extra(name, params)
        return ProblemCoefficients(
            mesh=mesh,
            a_rr=2.0 + 0.5 * np.sin(tt),
            a_rt=np.full_like(rr, 0.5),
            a_tt=np.full_like(rr, 2.0),
            d=1.0 + 0.25 * np.cos(th),
            b_r=np.zeros_like(rr),
            b_t=np.zeros_like(rr),
            b_surf=np.zeros(mesh.nth),
            p=0.2 + 0.1 * rr**2,
            q=np.full(mesh.nth, 0.1),
        )

    if name == "drifted":
        strength = float(params.pop("strength", 0.4))
        _reject_extra(name, params)
        return ProblemCoefficients(
            mesh=mesh,
            a_rr=np.ones_like(rr),
            a_rt=np.zeros_like(rr),
            a_tt=np.ones_like(rr),
            d=np.ones(mesh.nth),
            b_r=strength * np.cos(tt) * rr / mesh.radius,
            b_t=strength * np.sin(tt),
            b_surf=np.full(mesh.nth, 0.5 * strength),
            p=0.5 * (1.0 + (rr / mesh.radius) ** 2),
            q=0.3 + 0.1 * np.sin(th),
        )

    if name == "random_smooth":
        seed = int(params.pop("seed", 0))
        amplitude = float(params.pop("amplitude", 0.3))
        _reject_extra(name, params)
        if not 0.0 < amplitude < 1.0:
            raise ValueError(f"random_smooth amplitude must lie in (0, 1), got {amplitude}")
        rng = np.random.default_rng(seed)

        def smooth_bulk(scale: float) -> np.ndarray:
            # Low-order expansion in (r/R, theta); each mode bounded by 1.
            coeffs = rng.uniform(-1.0, 1.0, size=(2, 3))
            out = np.zeros_like(rr)
            x = rr / mesh.radius
            for k in range(2):
                radial = x ** (k + 1)
                out += coeffs[k, 0] * radial
                out += coeffs[k, 1] * radial * np.cos(tt)
                out += coeffs[k, 2] * radial * np.sin(tt)
            return scale * out / 6.0

        def smooth_surf(scale: float) -> np.ndarray:
            coeffs = rng.uniform(-1.0, 1.0, size=4)
            out = (
                coeffs[0] * np.cos(th)
                + coeffs[1] * np.sin(th)
                + coeffs[2] * np.cos(2 * th)
                + coeffs[3] * np.sin(2 * th)
            )
            return scale * out / 4.0

        # Offset 1+amplitude with oscillations bounded by amplitude keeps the
        # smaller eigenvalue above 1 - |a_rt| margin; verified at build time.
        base = 1.0 + amplitude
        a_rr = base + smooth_bulk(amplitude)
        a_tt = base + smooth_bulk(amplitude)
        a_rt = smooth_bulk(0.5 * amplitude)
        coeffs = ProblemCoefficients(
            mesh=mesh,
            a_rr=a_rr,
            a_rt=a_rt,
            a_tt=a_tt,
            d=base + smooth_surf(amplitude),
            b_r=smooth_bulk(amplitude),
            b_t=smooth_bulk(amplitude),
            b_surf=smooth_surf(amplitude),
            p=0.5 + smooth_bulk(amplitude),
            q=0.5 + smooth_surf(amplitude),
        )
        validate_coefficients(coeffs, mesh)
        return coeffs

    raise ValueError(f"unknown preset {name!r}; valid names: {', '.join(PRESET_NAMES)}")


def _reject_extra(name: str, params: dict) -> None:
    if params:
        raise ValueError(f"preset {name!r} does not accept parameters {sorted(params)}")

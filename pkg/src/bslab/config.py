"""Flat key = value experiment configuration with documented defaults.

Grammar: one ``key = value`` per line, ``#`` starts a comment, blank lines
are ignored, sections are spelled with dotted keys.  Every key has a
default, so an empty file (or no file) is a valid configuration.  Unknown
keys and malformed values raise :class:`ConfigError` naming the offending
key.

Masks are written ``disk:RADIUS_FRACTION`` or
``annulus:R_LO,R_HI,TH_LO,TH_HI`` (radii as fractions of the disk radius,
angles absolute).  Lists are comma-separated; mesh levels are ``NRxNTH``
pairs.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .coefficients import ProblemCoefficients, preset
from .geometry import DiskMesh, annular_sector_mask, build_disk_mesh, disk_mask
from .io import config_hash, format_float

__all__ = ["ConfigError", "ExperimentConfig", "DEFAULTS", "describe_defaults"]


class ConfigError(ValueError):
    """Configuration problem, always naming the offending key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_float_list(s: str) -> tuple[float, ...]:
    s = s.strip()
    if not s:
        return ()
    return tuple(float(x) for x in s.split(","))


def _parse_levels(s: str) -> tuple[tuple[int, int], ...]:
    out = []
    for item in s.split(","):
        nr, _, nth = item.strip().partition("x")
        out.append((int(nr), int(nth)))
    return tuple(out)


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.strip().split(","))


def _identity(s: str) -> str:
    return s.strip()


# key -> (default, parser, help)
DEFAULTS: dict[str, tuple] = {
    "mesh.radius": (1.0, float, "disk radius"),
    "mesh.nr": (32, int, "radial cell count"),
    "mesh.nth": (64, int, "angular cell count (even)"),
    "coeff.preset": ("identity", _identity, "coefficient preset name"),
    "coeff.a0": (1.0, float, "radial_scalar offset"),
    "coeff.a1": (0.5, float, "radial_scalar growth"),
    "coeff.strength": (0.4, float, "drifted preset drift strength"),
    "coeff.seed": (0, int, "random_smooth seed"),
    "coeff.amplitude": (0.3, float, "random_smooth oscillation amplitude"),
    "time.t_end": (1.0, float, "final time T"),
    "time.steps": (200, int, "number of uniform time steps"),
    "time.scheme": ("implicit_euler", _identity, "implicit_euler or trapezoidal"),
    "time.rtol": (1e-10, float, "linear-solve relative residual tolerance"),
    "window.t0": (0.5, float, "observation window start t0 (T0 = (t0+T)/2)"),
    "carleman.lambda": (1.5, float, "weight parameter lambda"),
    "carleman.s_grid": ((2.0, 4.0, 8.0, 16.0, 32.0), _parse_float_list, "s values"),
    "carleman.omega_prime_radius": (0.2, float, "radius of the interior set omega'"),
    "carleman.omega": ("disk:0.45", _identity, "observation mask for the sweep"),
    "carleman.ensemble": (20, int, "number of random sources in the sweep"),
    "carleman.refine": (False, _parse_bool, "also run a 2x refined sweep"),
    "inverse.omega": (
        "annulus:0.5,0.8,0.0,1.5707963267948966",
        _identity,
        "interior observation mask",
    ),
    "inverse.bulk_radial": (8, int, "radial bulk basis size"),
    "inverse.bulk_angular": (8, int, "angular bulk basis size"),
    "inverse.surface_basis": (16, int, "surface basis size"),
    "inverse.cap_bulk": (64, int, "bulk basis cap"),
    "inverse.cap_surface": (16, int, "surface basis cap"),
    "inverse.epsilon": (1e-10, float, "Tikhonov regularization weight"),
    "inverse.noise_levels": ((), _parse_float_list, "noise sweep levels (empty = none)"),
    "inverse.ensemble": (50, int, "stability ensemble size"),
    "inverse.diff_pairs": (25, int, "number of difference pairs"),
    "inverse.refine": (False, _parse_bool, "also run a 2x refined ensemble"),
    "forward.initial": ("constant:1.0", _identity, "zero | constant:<v> | radial"),
    "forward.source": ("decay", _identity, "none | constant:<v> | decay"),
    "forward.snapshots": ((), _parse_float_list, "snapshot times (empty = t_end)"),
    "convergence.levels": (
        ((16, 32), (32, 64), (64, 128)),
        _parse_levels,
        "mesh levels for the spatial study",
    ),
    "convergence.temporal_steps": (
        (25, 50, 100, 200),
        _parse_int_list,
        "step counts for the temporal study",
    ),
    "convergence.kind": ("both", _identity, "temporal | spatial | both"),
    "run.seed": (1, int, "master seed"),
    "run.out": ("out", _identity, "output directory"),
}


def _canonical(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, tuple):
        return ",".join(
            "x".join(str(p) for p in v) if isinstance(v, tuple) else _canonical(v)
            for v in value
        )
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved configuration: every key present, values typed."""

    values: dict

    @staticmethod
    def from_text(text: str) -> "ExperimentConfig":
        raw: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            key, eq, value = body.partition("=")
            if not eq:
                raise ConfigError(key.strip() or f"line {lineno}", "expected 'key = value'")
            raw[key.strip()] = value.strip()
        values = {}
        for key, (default, parser, _help) in DEFAULTS.items():
            if key in raw:
                try:
                    values[key] = parser(raw.pop(key))
                except (ValueError, TypeError) as exc:
                    raise ConfigError(key, f"invalid value: {exc}") from exc
            else:
                values[key] = default
        if raw:
            unknown = sorted(raw)[0]
            raise ConfigError(unknown, "unknown configuration key")
        cfg = ExperimentConfig(values)
        cfg._validate()
        return cfg

    @staticmethod
    def from_file(path: str | None) -> "ExperimentConfig":
        if path is None:
            return ExperimentConfig.from_text("")
        with open(path, "r", encoding="utf-8") as fh:
            return ExperimentConfig.from_text(fh.read())

    def _validate(self) -> None:
        v = self.values
        if v["mesh.nth"] % 2 != 0 or v["mesh.nth"] < 4:
            raise ConfigError("mesh.nth", "must be even and at least 4")
        if v["mesh.nr"] < 2:
            raise ConfigError("mesh.nr", "must be at least 2")
        if v["mesh.radius"] <= 0:
            raise ConfigError("mesh.radius", "must be positive")
        if v["time.scheme"] not in ("implicit_euler", "trapezoidal"):
            raise ConfigError("time.scheme", f"unknown scheme {v['time.scheme']!r}")
        if v["time.steps"] < 1:
            raise ConfigError("time.steps", "must be at least 1")
        if not 0.0 < v["window.t0"] < v["time.t_end"]:
            raise ConfigError("window.t0", "must lie strictly inside (0, time.t_end)")
        if v["convergence.kind"] not in ("temporal", "spatial", "both"):
            raise ConfigError("convergence.kind", "must be temporal, spatial or both")
        s_grid = v["carleman.s_grid"]
        if s_grid and (list(s_grid) != sorted(s_grid) or s_grid[0] < 1.0):
            raise ConfigError("carleman.s_grid", "must be increasing with entries >= 1")

    def __getitem__(self, key: str):
        return self.values[key]

    def override(self, **updates) -> "ExperimentConfig":
        """Replace dotted keys (spelled with underscores not allowed; pass a dict)."""
        values = dict(self.values)
        for key, val in updates.items():
            if key not in values:
                raise ConfigError(key, "unknown configuration key")
            values[key] = val
        cfg = ExperimentConfig(values)
        cfg._validate()
        return cfg

    # -- derived objects ----------------------------------------------------

    def build_mesh(self, nr: int | None = None, nth: int | None = None) -> DiskMesh:
        return build_disk_mesh(
            self["mesh.radius"],
            nr if nr is not None else self["mesh.nr"],
            nth if nth is not None else self["mesh.nth"],
        )

    def build_coefficients(self, mesh: DiskMesh) -> ProblemCoefficients:
        name = self["coeff.preset"]
        if name == "radial_scalar":
            return preset(name, mesh, a0=self["coeff.a0"], a1=self["coeff.a1"])
        if name == "drifted":
            return preset(name, mesh, strength=self["coeff.strength"])
        if name == "random_smooth":
            return preset(name, mesh, seed=self["coeff.seed"], amplitude=self["coeff.amplitude"])
        try:
            return preset(name, mesh)
        except ValueError as exc:
            raise ConfigError("coeff.preset", str(exc)) from exc

    def mask(self, mesh: DiskMesh, key: str) -> np.ndarray:
        spec = self[key]
        kind, _, rest = spec.partition(":")
        try:
            if kind == "disk":
                return disk_mask(mesh, float(rest))
            if kind == "annulus":
                r_lo, r_hi, th_lo, th_hi = (float(x) for x in rest.split(","))
                return annular_sector_mask(mesh, r_lo, r_hi, th_lo, th_hi)
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, f"invalid mask spec {spec!r}: {exc}") from exc
        raise ConfigError(key, f"unknown mask kind {kind!r} (use disk: or annulus:)")

    def window_on_grid(self) -> tuple[float, float, int]:
        """(t0, t_end, steps) with t0 and T0 verified to lie on the time grid."""
        t0, t_end, steps = self["window.t0"], self["time.t_end"], self["time.steps"]
        dt = t_end / steps
        k0 = t0 / dt
        if abs(k0 - round(k0)) > 1e-9:
            raise ConfigError("window.t0", "must land on the time grid")
        if (steps - round(k0)) % 2 != 0:
            raise ConfigError(
                "time.steps", "window must span an even number of steps so T0 is on the grid"
            )
        return t0, t_end, steps

    def resolved(self) -> dict[str, str]:
        return {k: _canonical(v) for k, v in self.values.items()}

    def hash(self) -> str:
        return config_hash(self.resolved())

    def output_dir(self, cli_out: str | None = None) -> str:
        if cli_out:
            return cli_out
        env = os.environ.get("BSLAB_OUT")
        if env:
            return env
        return self["run.out"]


def describe_defaults() -> str:
    """Human-readable key table (used by the CLI help epilogue and README)."""
    lines = []
    for key, (default, _parser, help_text) in DEFAULTS.items():
        lines.append(f"{key:32s} {_canonical(default):40s} {help_text}")
    return "\n".join(lines)

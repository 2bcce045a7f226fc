"""Physical constants, aperture regions, targets and scenario assembly.

All lengths are in metres and all internal power figures in A^2.  The two
apertures lie on the z = 0 plane; targets sit in front of it (z > 0).
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 2.998e8
ETA0_DEFAULT = 376.73
MIN_TARGET_SEPARATION = 1e-6
# targets closer than this many wavelengths to the origin may sit in the reactive zone
REACTIVE_WAVELENGTHS = 3.0


class NearFieldWarning(UserWarning):
    """A target falls outside the radiating near-field region."""


@dataclass(frozen=True)
class PhysicalConstants:
    frequency_hz: float
    impedance_eta0: float = ETA0_DEFAULT
    num_targets: int = 1

    def __post_init__(self):
        if not self.frequency_hz > 0:
            raise ValueError("frequency must be positive")
        if not self.impedance_eta0 > 0:
            raise ValueError("wave impedance must be positive")
        if self.num_targets < 1:
            raise ValueError("need at least one target")

    @classmethod
    def from_wavelength(cls, wavelength_m: float, **kwargs) -> "PhysicalConstants":
        return cls(frequency_hz=SPEED_OF_LIGHT / wavelength_m, **kwargs)

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.frequency_hz

    @property
    def wavenumber_k0(self) -> float:
        return 2.0 * math.pi * self.frequency_hz / SPEED_OF_LIGHT

    @property
    def coupling_c0(self) -> float:
        """eta0^2 k0^2 / (16 pi^2 sqrt(N))."""
        k0 = self.wavenumber_k0
        return self.impedance_eta0**2 * k0**2 / (16.0 * math.pi**2 * math.sqrt(self.num_targets))

    @property
    def tx_prefactor(self) -> complex:
        """j eta0 k0 / (4 pi), the scalar Green's function amplitude."""
        return 1j * self.impedance_eta0 * self.wavenumber_k0 / (4.0 * math.pi)


@dataclass(frozen=True)
class Aperture:
    """Axis-aligned rectangle on the z = 0 plane."""

    w_min: float
    w_max: float
    h_min: float
    h_max: float

    def __post_init__(self):
        if not (self.w_min < self.w_max and self.h_min < self.h_max):
            raise ValueError(f"degenerate aperture {self}")

    @property
    def width(self) -> float:
        return self.w_max - self.w_min

    @property
    def height(self) -> float:
        return self.h_max - self.h_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    @property
    def center(self) -> np.ndarray:
        return np.array([0.5 * (self.w_min + self.w_max), 0.5 * (self.h_min + self.h_max), 0.0])

    @classmethod
    def centered(cls, cx: float, cy: float, width: float, height: float) -> "Aperture":
        return cls(cx - width / 2, cx + width / 2, cy - height / 2, cy + height / 2)


@dataclass(frozen=True)
class Target:
    position: tuple[float, float, float]
    reflection: complex = 10 + 10j

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3:
            raise ValueError("target position must be a 3-vector")
        if not pos[2] > 0:
            raise ValueError(f"target must lie in front of the array plane, got z={pos[2]}")
        if not np.isfinite(self.reflection):
            raise ValueError("reflection coefficient must be finite")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "reflection", complex(self.reflection))

    @property
    def r(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)


@dataclass(frozen=True)
class Scenario:
    constants: PhysicalConstants
    tx: Aperture
    rx: Aperture
    targets: tuple[Target, ...]
    power_budget_A2: float = 1e-4
    noise_power: float = 5.6e-3
    quad_points_x: int = 300
    quad_points_y: int = 300
    name: str = field(default="scenario", compare=False)

    def __post_init__(self):
        targets = tuple(self.targets)
        object.__setattr__(self, "targets", targets)
        if len(targets) < 1:
            raise ValueError("scenario needs at least one target")
        if self.constants.num_targets != len(targets):
            object.__setattr__(self, "constants", replace(self.constants, num_targets=len(targets)))
        if not self.power_budget_A2 > 0:
            raise ValueError("power budget must be positive")
        if not self.noise_power > 0:
            raise ValueError("noise power must be positive")
        if self.quad_points_x < 2 or self.quad_points_y < 2:
            raise ValueError("need at least 2 quadrature points per axis")
        pos = np.array([t.position for t in targets])
        for i in range(len(targets)):
            for j in range(i + 1, len(targets)):
                if np.linalg.norm(pos[i] - pos[j]) < MIN_TARGET_SEPARATION:
                    raise ValueError(f"targets {i} and {j} coincide; the configuration is unidentifiable")
        for diag in admissibility_check(self):
            if not diag.in_near_field:
                warnings.warn(
                    f"target {diag.index} at {diag.range_m:.1f} m is beyond the Fraunhofer distance "
                    f"{diag.fraunhofer_m:.1f} m",
                    NearFieldWarning,
                    stacklevel=3,
                )
            elif diag.possibly_reactive:
                warnings.warn(
                    f"target {diag.index} at {diag.range_m:.3g} m may lie in the reactive near field",
                    NearFieldWarning,
                    stacklevel=3,
                )

    @property
    def num_targets(self) -> int:
        return len(self.targets)

    @property
    def positions(self) -> np.ndarray:
        return np.array([t.position for t in self.targets], dtype=float)

    @property
    def reflections(self) -> np.ndarray:
        return np.array([t.reflection for t in self.targets], dtype=complex)

    def with_targets(self, targets: Sequence[Target]) -> "Scenario":
        consts = replace(self.constants, num_targets=len(targets))
        return replace(self, targets=tuple(targets), constants=consts)

    def with_positions(self, positions) -> "Scenario":
        """Same reflections, new positions (one row per target)."""
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        refl = [t.reflection for t in self.targets]
        if len(refl) != len(positions):
            refl = [self.targets[0].reflection] * len(positions)
        return self.with_targets([Target(tuple(p), a) for p, a in zip(positions, refl)])

    def with_frequency(self, frequency_hz: float) -> "Scenario":
        return replace(self, constants=replace(self.constants, frequency_hz=frequency_hz))

    def with_apertures(self, tx: Aperture, rx: Aperture) -> "Scenario":
        return replace(self, tx=tx, rx=rx)

    def with_gl_points(self, n: int) -> "Scenario":
        return replace(self, quad_points_x=n, quad_points_y=n)


@dataclass(frozen=True)
class NearFieldDiagnostic:
    index: int
    range_m: float
    fraunhofer_m: float
    in_near_field: bool
    possibly_reactive: bool


def fraunhofer_distance(s: Scenario) -> float:
    """2 D^2 / lambda with D the larger aperture diagonal."""
    d = max(s.tx.diagonal, s.rx.diagonal)
    return 2.0 * d**2 / s.constants.wavelength_m


def admissibility_check(s: Scenario) -> list[NearFieldDiagnostic]:
    bound = fraunhofer_distance(s)
    lam = s.constants.wavelength_m
    out = []
    for i, t in enumerate(s.targets):
        r = float(np.linalg.norm(t.r))
        out.append(
            NearFieldDiagnostic(
                index=i,
                range_m=r,
                fraunhofer_m=bound,
                in_near_field=r <= bound,
                possibly_reactive=r < REACTIVE_WAVELENGTHS * lam,
            )
        )
    return out


def scenario_from_table1(**overrides) -> Scenario:
    """Default two-target configuration at 28 GHz with 1 m x 1 m apertures."""
    kwargs = dict(
        constants=PhysicalConstants(frequency_hz=28e9, impedance_eta0=ETA0_DEFAULT, num_targets=2),
        tx=Aperture(-1.0, 0.0, -0.5, 0.5),
        rx=Aperture(0.0, 1.0, -0.5, 0.5),
        targets=(Target((-5.0, 0.0, 5.0), 10 + 10j), Target((5.0, 0.0, 5.0), 10 + 10j)),
        power_budget_A2=100e-6,  # 100 mA^2
        noise_power=5.6e-3,
        quad_points_x=300,
        quad_points_y=300,
        name="table1",
    )
    kwargs.update(overrides)
    return Scenario(**kwargs)


def square_apertures(area: float, gap: float = 0.0) -> tuple[Aperture, Aperture]:
    """Adjacent square Tx (x <= -gap/2) and Rx (x >= gap/2) apertures of a given area each."""
    side = math.sqrt(area)
    tx = Aperture(-gap / 2 - side, -gap / 2, -side / 2, side / 2)
    rx = Aperture(gap / 2, gap / 2 + side, -side / 2, side / 2)
    return tx, rx


# ---------------------------------------------------------------------------
# config files

_APERTURE_KEYS = ("w_min", "w_max", "h_min", "h_max")


def scenario_from_dict(cfg: dict, base: Scenario | None = None) -> Scenario:
    """Build a scenario from a flat key-value mapping; missing keys fall back to ``base``.

    Recognised keys: ``frequency_ghz``, ``eta0``, ``tx_w_min`` ... ``rx_h_max``,
    ``targets`` (list of ``{position, reflection_re, reflection_im}``),
    ``power_mA2``, ``noise_power``, ``gl_points`` (or ``gl_points_x``/``gl_points_y``).
    """
    base = base or scenario_from_table1()
    known = {"frequency_ghz", "eta0", "targets", "power_mA2", "noise_power", "gl_points",
             "gl_points_x", "gl_points_y", "name"}
    known |= {f"{side}_{k}" for side in ("tx", "rx") for k in _APERTURE_KEYS}
    unknown = set(cfg) - known
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")

    freq = float(cfg["frequency_ghz"]) * 1e9 if "frequency_ghz" in cfg else base.constants.frequency_hz
    eta0 = float(cfg.get("eta0", base.constants.impedance_eta0))

    def aperture(side, default):
        vals = [float(cfg.get(f"{side}_{k}", getattr(default, k))) for k in _APERTURE_KEYS]
        return Aperture(*vals)

    if "targets" in cfg:
        targets = []
        for t in cfg["targets"]:
            refl = complex(float(t.get("reflection_re", 10.0)), float(t.get("reflection_im", 10.0)))
            targets.append(Target(tuple(t["position"]), refl))
    else:
        targets = list(base.targets)

    nx = int(cfg.get("gl_points_x", cfg.get("gl_points", base.quad_points_x)))
    ny = int(cfg.get("gl_points_y", cfg.get("gl_points", base.quad_points_y)))
    return Scenario(
        constants=PhysicalConstants(freq, eta0, len(targets)),
        tx=aperture("tx", base.tx),
        rx=aperture("rx", base.rx),
        targets=tuple(targets),
        power_budget_A2=float(cfg["power_mA2"]) / 1e6 if "power_mA2" in cfg else base.power_budget_A2,
        noise_power=float(cfg.get("noise_power", base.noise_power)),
        quad_points_x=nx,
        quad_points_y=ny,
        name=str(cfg.get("name", base.name)),
    )


def scenario_to_dict(s: Scenario) -> dict:
    out = {
        "name": s.name,
        "frequency_ghz": s.constants.frequency_hz / 1e9,
        "eta0": s.constants.impedance_eta0,
        "power_mA2": round(s.power_budget_A2 * 1e6, 12),
        "noise_power": s.noise_power,
        "gl_points_x": s.quad_points_x,
        "gl_points_y": s.quad_points_y,
        "targets": [
            {"position": list(t.position), "reflection_re": t.reflection.real, "reflection_im": t.reflection.imag}
            for t in s.targets
        ],
    }
    for side, ap in (("tx", s.tx), ("rx", s.rx)):
        for k in _APERTURE_KEYS:
            out[f"{side}_{k}"] = getattr(ap, k)
    return out


def load_config(path) -> dict:
    """Read a JSON or TOML config file into a dict."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


def load_scenario(path) -> Scenario:
    cfg = load_config(path)
    return scenario_from_dict(cfg.get("scenario", cfg))

"""Closed-form steady-state response of a driven three-level lambda system.

Conventions used throughout the package:

* every rate / Rabi frequency / detuning is stored in MHz,
* ``delta`` is the two-photon detuning (probe minus control detuning),
* scan axes are reported as the dimensionless ratio ``omega_c / gamma13``.

The off-diagonal matrix elements carry a convention-dependent overall sign.
``steady_state_rho13`` keeps the textbook sign (negative imaginary part on
absorption), while synthesized absorption spectra flip it so that absorption
is positive, matching how such profiles are plotted and fitted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DegeneratePoles, InvalidCorrection, NonFiniteResult

__all__ = [
    "SystemParams",
    "Populations",
    "SpectrumKind",
    "RealSpectrum",
    "ComplexSpectrum",
    "PoleDecomposition",
    "steady_state_rho12",
    "steady_state_rho13",
    "dressed_poles",
    "residues",
    "pole_sum_rho12",
    "pole_sum_rho13",
    "POLE_SUM_SIGN_RHO12",
    "POLE_SUM_SIGN_RHO13",
    "corrected_rho12",
    "corrected_rho13",
    "synthesize_spectrum",
    "default_delta_grid",
    "threshold_omega_c",
]

# Global signs relating the two-pole superposition forms to the closed forms,
# fixed once by a numerical check (see tests): the printed residue formulas
# reproduce rho12 directly but rho13 only up to an overall minus sign.
POLE_SUM_SIGN_RHO12 = 1.0
POLE_SUM_SIGN_RHO13 = -1.0

# |delta_plus - delta_minus| below this multiple of gamma13 makes the
# residues numerically meaningless.
DEGENERATE_POLE_RTOL = 1e-9


@dataclass(frozen=True)
class SystemParams:
    """Physical rates and detunings of the lambda system, all in MHz.

    ``gamma13``/``gamma23`` are the decay rates of the excited state into the
    probe and control ground states; ``gamma12`` is the ground-state
    decoherence rate. ``omega_p`` may be complex; real spectra use its
    magnitude.
    """

    gamma13: float
    gamma12: float
    omega_p: complex
    omega_c: float
    delta_c: float = 0.0
    gamma23: float = 0.0

    def __post_init__(self):
        if not (self.gamma13 > 0):
            raise ValueError(f"gamma13 must be > 0, got {self.gamma13}")
        if self.gamma12 < 0:
            raise ValueError(f"gamma12 must be >= 0, got {self.gamma12}")
        if self.gamma23 < 0:
            raise ValueError(f"gamma23 must be >= 0, got {self.gamma23}")
        if self.omega_c < 0:
            raise ValueError(f"omega_c must be >= 0, got {self.omega_c}")
        if not (self.gamma12 < self.gamma13):
            # the EIT/ATS threshold (gamma13 - gamma12)/2 must be positive
            raise ValueError("gamma12 must be strictly smaller than gamma13")

    def with_omega_c(self, omega_c: float) -> "SystemParams":
        return replace(self, omega_c=float(omega_c))


@dataclass(frozen=True)
class Populations:
    """Zeroth-order steady-state populations feeding the corrected spectra."""

    rho11_0: float
    rho22_0: float
    rho33_0: float = 0.0

    def __post_init__(self):
        for name in ("rho11_0", "rho22_0", "rho33_0"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        total = self.rho11_0 + self.rho22_0 + self.rho33_0
        if total > 1.0 + 1e-12:
            raise ValueError(f"populations must sum to <= 1, got {total}")


class SpectrumKind(enum.Enum):
    IM_RHO13 = "im_rho13"
    ABS_RHO12 = "abs_rho12"
    QUANTIFIER_C = "quantifier_c"


def _as_grid(delta_grid) -> np.ndarray:
    grid = np.asarray(delta_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("delta grid must be a non-empty 1-d array")
    if not np.all(np.isfinite(grid)):
        raise ValueError("delta grid must be finite")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise ValueError("delta grid must be strictly increasing")
    return grid


@dataclass(frozen=True)
class RealSpectrum:
    """Real-valued samples on a strictly increasing two-photon detuning grid.

    Nonnegativity of ABS_RHO12 / QUANTIFIER_C values is guaranteed at
    synthesis time; the container itself stays permissive so that noisy
    copies of a spectrum remain representable.
    """

    delta_grid: np.ndarray
    values: np.ndarray
    kind: SpectrumKind

    def __post_init__(self):
        grid = _as_grid(self.delta_grid)
        values = np.asarray(self.values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError("values must match the grid shape")
        if not np.all(np.isfinite(values)):
            raise ValueError("spectrum values must be finite")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "delta_grid", grid)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.delta_grid.size


@dataclass(frozen=True)
class ComplexSpectrum:
    """Complex amplitude samples on a strictly increasing detuning grid."""

    delta_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = _as_grid(self.delta_grid)
        values = np.asarray(self.values, dtype=complex)
        if values.shape != grid.shape:
            raise ValueError("values must match the grid shape")
        if not np.all(np.isfinite(values)):
            raise ValueError("spectrum values must be finite")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "delta_grid", grid)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.delta_grid.size


@dataclass(frozen=True)
class PoleDecomposition:
    """Dressed poles and residue strengths of the two-resonance expansion."""

    delta_plus: complex
    delta_minus: complex
    a_plus: complex
    a_minus: complex
    b_plus: complex
    b_minus: complex


def _denominator(p: SystemParams, delta):
    """(delta + dc - i g13)(delta - i g12) - |wc|^2.

    The closed forms are evaluated multiplied through by (delta - i gamma12),
    which removes the removable singularity at gamma12 = 0, delta = 0.
    """
    d = np.asarray(delta, dtype=float)
    return (d + p.delta_c - 1j * p.gamma13) * (d - 1j * p.gamma12) - abs(p.omega_c) ** 2


def _check_finite(out):
    if not np.all(np.isfinite(out)):
        raise NonFiniteResult("steady-state denominator vanished")
    return out


def steady_state_rho12(params: SystemParams, delta):
    """Ground-state coherence rho12 at two-photon detuning ``delta`` (MHz).

    Accepts a scalar or an array of detunings.
    """
    num = np.conjugate(params.omega_p) * params.omega_c
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / _denominator(params, delta)
    return _check_finite(out)


def steady_state_rho13(params: SystemParams, delta):
    """Optical coherence rho13; its imaginary part is negative on absorption."""
    d = np.asarray(delta, dtype=float)
    num = -np.conjugate(params.omega_p) * (d - 1j * params.gamma12)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / _denominator(params, delta)
    return _check_finite(out)


def dressed_poles(params: SystemParams) -> tuple[complex, complex]:
    """Complex dressed-state poles (delta_plus, delta_minus).

    Principal branch of the complex square root; the +/- labels follow the
    sign in front of the root.
    """
    g13, g12, dc = params.gamma13, params.gamma12, params.delta_c
    root = np.sqrt(complex(4 * abs(params.omega_c) ** 2
                           + (dc - 1j * (g13 - g12)) ** 2))
    base = -dc + 1j * (g13 + g12)
    return 0.5 * (base + root), 0.5 * (base - root)


def residues(params: SystemParams) -> PoleDecomposition:
    """Poles plus residue strengths A+-, B+- of the two-resonance expansion.

    Raises DegeneratePoles when the pole spacing is below
    ``DEGENERATE_POLE_RTOL * gamma13``.
    """
    dp, dm = dressed_poles(params)
    gap = dp - dm
    if abs(gap) < DEGENERATE_POLE_RTOL * params.gamma13:
        raise DegeneratePoles(
            f"|delta_plus - delta_minus| = {abs(gap):.3e} MHz is degenerate")
    b_plus = params.omega_c / gap
    a_plus = (dp - 1j * params.gamma12) / gap
    a_minus = -(dm - 1j * params.gamma12) / gap
    return PoleDecomposition(dp, dm, a_plus, a_minus, b_plus, -b_plus)


def pole_sum_rho12(params: SystemParams, delta):
    """rho12 rebuilt from the printed residue superposition (no sign fix).

    Multiply by POLE_SUM_SIGN_RHO12 to recover ``steady_state_rho12``.
    """
    r = residues(params)
    d = np.asarray(delta, dtype=float)
    wp = np.conjugate(params.omega_p)
    return wp * (r.b_plus / (d - r.delta_plus) + r.b_minus / (d - r.delta_minus))


def pole_sum_rho13(params: SystemParams, delta):
    """rho13 from the residue superposition; differs from the closed form by
    the global sign POLE_SUM_SIGN_RHO13."""
    r = residues(params)
    d = np.asarray(delta, dtype=float)
    wp = np.conjugate(params.omega_p)
    return wp * (r.a_plus / (d - r.delta_plus) + r.a_minus / (d - r.delta_minus))


def _check_correction_defined(params: SystemParams):
    if params.gamma23 == 0.0 and params.delta_c == 0.0:
        raise InvalidCorrection(
            "population correction needs gamma23 > 0 or delta_c != 0")


def corrected_rho12(params: SystemParams, pops: Populations, delta):
    """rho12 with the first-order optical-pumping population correction."""
    _check_correction_defined(params)
    d = np.asarray(delta, dtype=float)
    d13 = pops.rho11_0 - pops.rho33_0
    d23 = pops.rho22_0 - pops.rho33_0
    bracket = d13 - (d + params.delta_c - 1j * params.gamma13) \
        / (params.delta_c + 1j * params.gamma23) * d23
    return _check_finite(steady_state_rho12(params, delta) * bracket)


def corrected_rho13(params: SystemParams, pops: Populations, delta):
    """rho13 with the first-order population correction.

    Evaluated with the (delta - i gamma12) factor cancelled against the
    bracket's second term so the gamma12 = 0, delta = 0 point stays finite.
    """
    _check_correction_defined(params)
    d = np.asarray(delta, dtype=float)
    d13 = pops.rho11_0 - pops.rho33_0
    d23 = pops.rho22_0 - pops.rho33_0
    wp = np.conjugate(params.omega_p)
    num = -wp * (d - 1j * params.gamma12) * d13 \
        + wp * abs(params.omega_c) ** 2 * d23 / (params.delta_c + 1j * params.gamma23)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / _denominator(params, delta)
    return _check_finite(out)


def default_delta_grid(params: SystemParams, n: int = 2001,
                       span: float = 5.0) -> np.ndarray:
    """Uniform grid of ``n`` detunings over +-``span`` * gamma13."""
    return np.linspace(-span * params.gamma13, span * params.gamma13, n)


def threshold_omega_c(params: SystemParams) -> float:
    """Control strength (MHz) where the dressed poles degenerate at dc = 0."""
    return 0.5 * (params.gamma13 - params.gamma12)


def synthesize_spectrum(params: SystemParams, delta_grid,
                        kind: SpectrumKind,
                        pops: Optional[Populations] = None) -> RealSpectrum:
    """Sample the analytic response on a detuning grid.

    IM_RHO13 spectra are returned with the absorption-positive sign
    (``-Im rho13`` under this package's rho13 convention); ABS_RHO12 gives
    ``|rho12|``. Real spectra use the magnitude of ``omega_p``. The corrected
    forms are used when ``pops`` is supplied.
    """
    grid = _as_grid(delta_grid)
    p = replace(params, omega_p=abs(params.omega_p))
    if kind is SpectrumKind.IM_RHO13:
        rho = corrected_rho13(p, pops, grid) if pops is not None \
            else steady_state_rho13(p, grid)
        values = -np.imag(rho)
    elif kind is SpectrumKind.ABS_RHO12:
        rho = corrected_rho12(p, pops, grid) if pops is not None \
            else steady_state_rho12(p, grid)
        values = np.abs(rho)
    else:
        raise ValueError("QUANTIFIER_C spectra come from the dynamics module")
    return RealSpectrum(grid, values, kind)

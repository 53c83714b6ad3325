"""Pulsed-control time dynamics and the ground-state-coherence quantifier.

The lambda system is integrated as a 3x3 density-matrix master equation in
the rotating frame: Hamiltonian couplings (probe on 1-3, control on 2-3,
both without the 1/2 convention so the closed-form spectra are matched),
decay of the excited state into both ground states, and pure ground-state
dephasing. Quantities stored in MHz are converted to angular rates
(rad/us) internally; the steady-state coherences are scale-free, so they
agree exactly with the closed forms of :mod:`eitats.spectra` regardless of
that convention.

The sign convention here makes Im(rho13) positive on absorption, so the
transmitted fraction exp(-alpha * Im rho13) lies in (0, 1]. This is the
mirror image of the closed-form ``steady_state_rho13`` sign; the
consistency tests compare against its negated imaginary part.

Integration uses a fixed-step 4th-order Runge-Kutta scheme for bit-exact
reproducibility. Step sizes snap to ``0.01 us / 2**k`` so halving a
requested step exactly halves the effective one and sample times align.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (InvariantViolation, NonPhysicalParams, ParseError,
                     SchemaError, StepTooLarge, WindowTooShort)
from .spectra import RealSpectrum, SpectrumKind, SystemParams

__all__ = [
    "PulseSchedule",
    "TransientTrace",
    "LevelExtraction",
    "QuantifierProfile",
    "IntegrationDiagnostics",
    "integrate_obe",
    "extract_levels",
    "quantifier",
    "quantifier_profile",
    "ingest_trace",
    "write_trace",
    "default_dt",
]

_TWO_PI = 2.0 * math.pi
# sample-time quantum (us); effective steps are this over a power of two
_QUANTUM_US = 0.01
# hard error thresholds for trace / positivity violations
_TRACE_TOL = 1e-6
_EIG_TOL = 1e-6


@dataclass(frozen=True)
class PulseSchedule:
    """Step-edged control pulse: on during [t_start, t_start + t_width)."""

    t_start: float
    t_width: float
    t_total: float

    def __post_init__(self):
        if self.t_start < 0:
            raise ValueError("t_start must be >= 0")
        if self.t_width <= 0:
            raise ValueError("t_width must be > 0")
        if not self.t_start + self.t_width < self.t_total:
            raise ValueError("pulse must end before t_total")

    @property
    def t_off(self) -> float:
        return self.t_start + self.t_width


@dataclass(frozen=True)
class IntegrationDiagnostics:
    dt: float
    trace_dev: float
    herm_dev: float
    eig_min: float


@dataclass(frozen=True)
class TransientTrace:
    """Normalized probe transmission versus time for one (delta, omega_c)."""

    times: np.ndarray
    transmission: np.ndarray
    schedule: PulseSchedule
    alpha: float
    delta: float
    omega_p: float
    omega_c: float
    populations: Optional[np.ndarray] = None
    diagnostics: Optional[IntegrationDiagnostics] = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.transmission, dtype=float)
        if t.ndim != 1 or t.shape != y.shape or t.size < 2:
            raise ValueError("times and transmission must be matching 1-d arrays")
        if not np.all(np.diff(t) > 0):
            raise InvariantViolation("times must be strictly increasing")
        # switching transients may overshoot unity by rounding-level amounts
        if np.any(y <= 0.0) or np.any(y > 1.0 + 1e-9):
            raise InvariantViolation("transmission must lie in (0, 1]")
        t.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "transmission", y)


@dataclass(frozen=True)
class LevelExtraction:
    h_i: float
    h_s: float
    h_f: float
    windows: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class QuantifierProfile:
    spectrum: RealSpectrum
    rho11_i: float
    control_free: bool = False


def default_dt(params: SystemParams, delta_max: float = 0.0) -> float:
    """Step satisfying dt <= 0.05 / (fastest angular rate), snapped."""
    rate = max(params.gamma13, params.gamma23, params.gamma12,
               abs(params.omega_p), params.omega_c,
               abs(params.delta_c) + abs(delta_max), 1e-3)
    return _snap_dt(0.05 / (_TWO_PI * rate))


def _snap_dt(dt: float) -> float:
    """Largest 0.01 / 2**k that is <= dt (k >= 0)."""
    if dt <= 0 or not math.isfinite(dt):
        raise NonPhysicalParams(f"dt must be positive and finite, got {dt}")
    k = max(0, math.ceil(math.log2(_QUANTUM_US / dt)))
    return _QUANTUM_US / 2 ** k


def _hamiltonian(params: SystemParams, delta: np.ndarray,
                 control_on: bool) -> np.ndarray:
    """(B, 3, 3) rotating-frame Hamiltonian in rad/us."""
    d = np.atleast_1d(np.asarray(delta, dtype=float)) * _TWO_PI
    dc = params.delta_c * _TWO_PI
    wp = complex(params.omega_p) * _TWO_PI
    wc = (params.omega_c if control_on else 0.0) * _TWO_PI
    b = d.size
    h = np.zeros((b, 3, 3), dtype=complex)
    h[:, 1, 1] = -d
    h[:, 2, 2] = -(d + dc)
    h[:, 0, 2] = np.conjugate(wp)
    h[:, 2, 0] = wp
    h[:, 1, 2] = np.conjugate(wc)
    h[:, 2, 1] = wc
    return h


def _liouvillian(params: SystemParams, delta: np.ndarray,
                 control_on: bool) -> np.ndarray:
    """(B, 9, 9) superoperator for row-major vectorized rho."""
    h = _hamiltonian(params, delta, control_on)
    eye = np.eye(3)
    b = h.shape[0]
    lv = np.empty((b, 9, 9), dtype=complex)
    for i in range(b):
        lv[i] = -1j * (np.kron(h[i], eye) - np.kron(eye, h[i].T))
    ops = []
    if params.gamma13 > 0:
        l1 = np.zeros((3, 3))
        l1[0, 2] = math.sqrt(params.gamma13 * _TWO_PI)
        ops.append(l1)
    if params.gamma23 > 0:
        l2 = np.zeros((3, 3))
        l2[1, 2] = math.sqrt(params.gamma23 * _TWO_PI)
        ops.append(l2)
    if params.gamma12 > 0:
        ld = np.zeros((3, 3))
        ld[1, 1] = math.sqrt(2.0 * params.gamma12 * _TWO_PI)
        ops.append(ld)
    diss = np.zeros((9, 9), dtype=complex)
    for op in ops:
        opd = op.conj().T @ op
        diss += np.kron(op, op.conj()) \
            - 0.5 * (np.kron(opd, eye) + np.kron(eye, opd.T))
    return lv + diss


def _min_eigenvalue_hermitian3(rho: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of a batch of Hermitian 3x3 matrices, closed form."""
    q = np.real(rho[:, 0, 0] + rho[:, 1, 1] + rho[:, 2, 2]) / 3.0
    a = np.real(rho[:, 0, 0]) - q
    b = np.real(rho[:, 1, 1]) - q
    c = np.real(rho[:, 2, 2]) - q
    p1 = (np.abs(rho[:, 0, 1]) ** 2 + np.abs(rho[:, 0, 2]) ** 2
          + np.abs(rho[:, 1, 2]) ** 2)
    p2 = a * a + b * b + c * c + 2.0 * p1
    p = np.sqrt(np.maximum(p2 / 6.0, 0.0))
    safe = np.maximum(p, 1e-300)
    m01, m02, m12 = rho[:, 0, 1] / safe, rho[:, 0, 2] / safe, rho[:, 1, 2] / safe
    # determinant of the shifted, scaled matrix via cofactor expansion
    det = np.real((a / safe) * ((b / safe) * (c / safe) - np.abs(m12) ** 2)
                  - m01 * (np.conj(m01) * (c / safe) - m12 * np.conj(m02))
                  + m02 * (np.conj(m01) * np.conj(m12) - (b / safe) * np.conj(m02)))
    r = np.clip(det / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    lam = q + 2.0 * p * np.cos(phi + 2.0 * math.pi / 3.0)
    return np.where(p > 0, lam, q)


def _integrate(params: SystemParams, schedule: PulseSchedule,
               deltas: np.ndarray, dt: float, rho11_initial: float,
               keep_populations: bool):
    """Fixed-step RK4 over the three pulse segments for a batch of deltas.

    Returns (times, im_rho13 (B, nt), populations or None, diagnostics).
    """
    if not (0.0 <= rho11_initial <= 1.0):
        raise NonPhysicalParams(f"rho11_initial must be in [0, 1]")
    limit = 0.1 / (_TWO_PI * max(params.gamma13, params.omega_c, 1e-300))
    if dt > limit * (1 + 1e-12):
        raise NonPhysicalParams(
            f"dt = {dt} us does not resolve the fastest rate (need <= {limit:.3g})")
    dt = _snap_dt(dt)
    deltas = np.atleast_1d(np.asarray(deltas, dtype=float))
    b = deltas.size

    n_on = round(schedule.t_start / dt)
    n_off = round(schedule.t_off / dt)
    n_end = round(schedule.t_total / dt)
    if not 0 <= n_on < n_off <= n_end:
        raise NonPhysicalParams("schedule does not resolve onto the step grid")

    l_off = _liouvillian(params, deltas, control_on=False)
    l_on = _liouvillian(params, deltas, control_on=True)

    rho0 = np.zeros((b, 3, 3), dtype=complex)
    rho0[:, 0, 0] = rho11_initial
    rho0[:, 1, 1] = 1.0 - rho11_initial
    y = rho0.reshape(b, 9, 1)

    nt = n_end + 1
    im13 = np.empty((b, nt))
    pops = np.empty((b, nt, 3)) if keep_populations else None
    trace_dev = 0.0
    herm_dev = 0.0
    eig_min = np.inf

    def record(step, rho):
        nonlocal trace_dev, herm_dev, eig_min
        im13[:, step] = rho[:, 0, 2].imag
        if pops is not None:
            pops[:, step, 0] = rho[:, 0, 0].real
            pops[:, step, 1] = rho[:, 1, 1].real
            pops[:, step, 2] = rho[:, 2, 2].real
        tr = np.abs(rho[:, 0, 0] + rho[:, 1, 1] + rho[:, 2, 2] - 1.0)
        hd = np.abs(rho - np.conj(np.swapaxes(rho, 1, 2))).max()
        em = float(_min_eigenvalue_hermitian3(rho).min())
        trace_dev = max(trace_dev, float(tr.max()))
        herm_dev = max(herm_dev, hd)
        eig_min = min(eig_min, em)
        if trace_dev > _TRACE_TOL or eig_min < -_EIG_TOL:
            raise StepTooLarge(
                f"physicality violated at step {step}: trace deviation "
                f"{trace_dev:.2e}, min eigenvalue {eig_min:.2e}")

    record(0, y.reshape(b, 3, 3))
    step = 0
    for lv, n_seg in ((l_off, n_on), (l_on, n_off - n_on), (l_off, n_end - n_off)):
        for _ in range(n_seg):
            k1 = lv @ y
            k2 = lv @ (y + (0.5 * dt) * k1)
            k3 = lv @ (y + (0.5 * dt) * k2)
            k4 = lv @ (y + dt * k3)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            step += 1
            record(step, y.reshape(b, 3, 3))

    times = np.arange(nt) * dt
    diag = IntegrationDiagnostics(dt=dt, trace_dev=trace_dev,
                                  herm_dev=herm_dev, eig_min=eig_min)
    return times, im13, pops, diag


def integrate_obe(params: SystemParams, schedule: PulseSchedule, delta: float,
                  dt: Optional[float] = None, alpha: float = 1.0,
                  rho11_initial: float = 0.5,
                  keep_populations: bool = True) -> TransientTrace:
    """Integrate the master equation for one two-photon detuning.

    The control Rabi frequency follows the step schedule; transmission is
    exp(-alpha * Im rho13(t)).
    """
    if alpha < 0:
        raise NonPhysicalParams("alpha must be >= 0")
    if dt is None:
        dt = default_dt(params, delta_max=abs(delta))
    times, im13, pops, diag = _integrate(
        params, schedule, np.array([delta]), dt, rho11_initial,
        keep_populations)
    transmission = np.exp(-alpha * im13[0])
    return TransientTrace(
        times=times, transmission=transmission, schedule=schedule,
        alpha=alpha, delta=float(delta), omega_p=abs(params.omega_p),
        omega_c=params.omega_c,
        populations=pops[0] if pops is not None else None,
        diagnostics=diag)


def _window_mean(times: np.ndarray, values: np.ndarray, lo: float,
                 hi: float, label: str) -> float:
    i0, i1 = np.searchsorted(times, [lo, hi + 1e-12])
    if i1 - i0 < 10:
        raise WindowTooShort(
            f"{label} window [{lo:.4g}, {hi:.4g}] us holds {i1 - i0} samples "
            "(need >= 10)")
    return float(values[i0:i1].mean())


def extract_levels(trace: TransientTrace,
                   settle_fraction: float = 0.02) -> LevelExtraction:
    """Average the transmission over the three diagnostic windows.

    h_i: last 20% of the pre-pulse span; h_s: last 20% of the control-on
    span; h_f: a window of a tenth of the pulse width starting
    ``settle_fraction * t_width`` after switch-off, i.e. after the fast
    optical transient but before slow population drifts.
    """
    s = trace.schedule
    wins = (
        (0.8 * s.t_start, s.t_start),
        (s.t_start + 0.8 * s.t_width, s.t_off),
        (s.t_off + settle_fraction * s.t_width,
         s.t_off + settle_fraction * s.t_width + 0.1 * s.t_width),
    )
    if wins[2][1] > s.t_total:
        raise WindowTooShort("fall-end window extends past the trace")
    h_i = _window_mean(trace.times, trace.transmission, *wins[0], "initial")
    h_s = _window_mean(trace.times, trace.transmission, *wins[1], "steady")
    h_f = _window_mean(trace.times, trace.transmission, *wins[2], "fall-end")
    return LevelExtraction(h_i=h_i, h_s=h_s, h_f=h_f, windows=wins)


def quantifier(lv: LevelExtraction, omega_p: float, omega_c: float,
               rho11_i: float = 0.5) -> float:
    """Coherence quantifier from the three transmission levels.

    |ln h_s - ln h_f| / |ln h_i| * (|omega_p| / |omega_c|) * rho11_i.
    """
    if omega_c <= 0:
        raise NonPhysicalParams("quantifier needs omega_c > 0")
    for name, h in (("h_i", lv.h_i), ("h_s", lv.h_s), ("h_f", lv.h_f)):
        if not 0.0 < h <= 1.0:
            raise NonPhysicalParams(f"{name} must lie in (0, 1], got {h}")
    log_hi = math.log(lv.h_i)
    if log_hi == 0.0:
        raise ZeroDivisionError(
            "no initial absorption (h_i = 1): quantifier undefined")
    return abs(math.log(lv.h_s) - math.log(lv.h_f)) / abs(log_hi) \
        * abs(omega_p) / abs(omega_c) * rho11_i


def quantifier_profile(params: SystemParams, schedule: PulseSchedule,
                       delta_grid, alpha: float = 1.0,
                       dt: Optional[float] = None,
                       settle_fraction: float = 0.02,
                       rho11_initial: float = 0.5) -> QuantifierProfile:
    """C(delta) from one synthetic transient per grid point.

    With the control off the quantifier is undefined; the profile is then
    identically zero and flagged ``control_free``.
    """
    grid = np.asarray(delta_grid, dtype=float)
    if params.omega_c == 0.0:
        spec = RealSpectrum(grid, np.zeros(grid.size), SpectrumKind.QUANTIFIER_C)
        return QuantifierProfile(spec, rho11_i=rho11_initial, control_free=True)
    if dt is None:
        dt = default_dt(params, delta_max=float(np.max(np.abs(grid))))
    times, im13, _, _ = _integrate(params, schedule, grid, dt,
                                   rho11_initial, keep_populations=False)
    values = np.empty(grid.size)
    for i in range(grid.size):
        trans = np.exp(-alpha * im13[i])
        trace = TransientTrace(
            times=times, transmission=trans, schedule=schedule, alpha=alpha,
            delta=float(grid[i]), omega_p=abs(params.omega_p),
            omega_c=params.omega_c)
        levels = extract_levels(trace, settle_fraction)
        values[i] = quantifier(levels, abs(params.omega_p), params.omega_c,
                               rho11_initial)
    spec = RealSpectrum(grid, values, SpectrumKind.QUANTIFIER_C)
    return QuantifierProfile(spec, rho11_i=rho11_initial)


# -- trace persistence ----------------------------------------------------------

_TRACE_HEADER = ["time_us", "transmission"]
_SIDECAR_KEYS = ("t_start_us", "t_width_us", "t_total_us", "alpha",
                 "delta_mhz", "omega_p_mhz", "omega_c_mhz")


def write_trace(trace: TransientTrace, csv_path, sidecar_path=None) -> None:
    """Write a trace as CSV plus a JSON sidecar with schedule and drive."""
    csv_path = Path(csv_path)
    sidecar_path = Path(sidecar_path) if sidecar_path is not None \
        else csv_path.with_suffix(".json")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(_TRACE_HEADER) + "\n")
        for t, y in zip(trace.times, trace.transmission):
            fh.write(f"{t:.17g},{y:.17g}\n")
    sidecar = {
        "t_start_us": trace.schedule.t_start,
        "t_width_us": trace.schedule.t_width,
        "t_total_us": trace.schedule.t_total,
        "alpha": trace.alpha,
        "delta_mhz": trace.delta,
        "omega_p_mhz": trace.omega_p,
        "omega_c_mhz": trace.omega_c,
    }
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def ingest_trace(csv_path, sidecar_path=None) -> TransientTrace:
    """Load a measured trace (CSV + JSON sidecar) as a TransientTrace.

    Raises ParseError (with line number) for malformed CSV, SchemaError for
    bad sidecars, InvariantViolation for unphysical samples.
    """
    csv_path = Path(csv_path)
    sidecar_path = Path(sidecar_path) if sidecar_path is not None \
        else csv_path.with_suffix(".json")
    times, trans = [], []
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty trace file", line=1) from None
        if [c.strip() for c in header] != _TRACE_HEADER:
            raise ParseError(
                f"expected header {','.join(_TRACE_HEADER)!r}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 columns, got {len(row)}",
                                 line=lineno)
            try:
                times.append(float(row[0]))
                trans.append(float(row[1]))
            except ValueError:
                raise ParseError(f"non-numeric value in {row!r}",
                                 line=lineno) from None
    if len(times) < 2:
        raise ParseError("trace needs at least two samples", line=2)

    try:
        with open(sidecar_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"sidecar is not valid JSON: {exc}") from None
    missing = [k for k in _SIDECAR_KEYS if k not in meta]
    if missing:
        raise SchemaError(f"sidecar missing keys: {', '.join(missing)}")
    try:
        vals = {k: float(meta[k]) for k in _SIDECAR_KEYS}
    except (TypeError, ValueError):
        raise SchemaError("sidecar fields must be numeric") from None

    t = np.asarray(times)
    y = np.asarray(trans)
    if not np.all(np.diff(t) > 0):
        raise InvariantViolation("times must be strictly increasing")
    if np.any(y <= 0.0) or np.any(y > 1.0):
        raise InvariantViolation("transmission must lie in (0, 1]")
    try:
        schedule = PulseSchedule(vals["t_start_us"], vals["t_width_us"],
                                 vals["t_total_us"])
    except ValueError as exc:
        raise SchemaError(str(exc)) from None
    return TransientTrace(times=t, transmission=y, schedule=schedule,
                          alpha=vals["alpha"], delta=vals["delta_mhz"],
                          omega_p=vals["omega_p_mhz"],
                          omega_c=vals["omega_c_mhz"])

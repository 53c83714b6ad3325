"""Control-strength sweeps, noise injection, and transition location.

A scan walks ``omega_c / gamma13`` over a grid, synthesizes the family's
spectrum at each point, optionally perturbs it with seeded Gaussian noise,
runs the EIT-vs-ATS model comparison, and finally locates the EIT-to-ATS
transition with a persistence rule: the transition is the smallest grid
value from which the ATS model wins at every larger grid value. Transient
crossings in noisy weight tracks therefore do not count.

Determinism: the noise PRNG and the fit multi-start PRNG are both derived
from (seed, grid-index), so results are bit-identical for a given config no
matter how the work is scheduled.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .fitting import FAMILY_MODELS, FitOptions, fit_batch
from .spectra import (Populations, RealSpectrum, SpectrumKind, SystemParams,
                      synthesize_spectrum)

__all__ = [
    "DeltaGridSpec",
    "ScanConfig",
    "ScanRow",
    "ScanResult",
    "add_noise",
    "run_scan",
    "find_transition",
    "population_study",
]


@dataclass(frozen=True)
class DeltaGridSpec:
    """Uniform detuning grid: ``n_points`` over +- ``span`` * gamma13."""

    n_points: int = 2001
    span: float = 5.0

    def build(self, params: SystemParams) -> np.ndarray:
        return np.linspace(-self.span * params.gamma13,
                           self.span * params.gamma13, self.n_points)


@dataclass(frozen=True)
class ScanConfig:
    base: SystemParams
    omega_c_grid: tuple[float, ...]
    family: str
    pops: Optional[Populations] = None
    noise_sigma: float = 0.0
    seeds: tuple[int, ...] = ()
    grid: DeltaGridSpec = field(default_factory=DeltaGridSpec)
    fit_options: FitOptions = field(default_factory=FitOptions)

    def __post_init__(self):
        object.__setattr__(self, "omega_c_grid",
                           tuple(float(x) for x in self.omega_c_grid))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        xs = self.omega_c_grid
        if not xs:
            raise ValueError("omega_c_grid must not be empty")
        if any(x <= 0 for x in xs) or any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("omega_c_grid must be strictly increasing and > 0")
        if self.family not in FAMILY_MODELS:
            raise ValueError(f"unknown family {self.family!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.noise_sigma > 0 and not self.seeds:
            raise ValueError("noisy scans need at least one seed")


@dataclass(frozen=True)
class ScanRow:
    omega_c_over_gamma13: float
    w_eit: float
    w_ats: float
    wbar_eit: float
    wbar_ats: float
    seed_w_eit: Optional[tuple[float, ...]] = None
    seed_wbar_eit: Optional[tuple[float, ...]] = None


@dataclass(frozen=True)
class ScanResult:
    config: ScanConfig
    rows: tuple[ScanRow, ...]
    transition: Optional[float]
    per_seed_transitions: Optional[tuple[Optional[float], ...]] = None


def add_noise(data: RealSpectrum, sigma: float, seed: int) -> RealSpectrum:
    """Unit-peak-normalize the spectrum, then add i.i.d. Gaussian noise.

    The noise amplitude is only meaningful relative to the signal scale,
    hence the normalization. Same seed, same output, bit for bit.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    peak = float(np.max(np.abs(data.values)))
    values = data.values / peak if peak > 0 else data.values.copy()
    if sigma > 0:
        rng = np.random.default_rng(seed)
        values = values + rng.normal(0.0, sigma, values.size)
    return RealSpectrum(data.delta_grid, values, data.kind)


def _child_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(
        1, dtype=np.uint64)[0])


def _pair_weights(aic_eit, aic_ats):
    """Akaike weight of the EIT model for (arrays of) AIC pairs."""
    a, b = np.asarray(aic_eit, dtype=float), np.asarray(aic_ats, dtype=float)
    m = np.minimum(a, b)
    we = np.exp(-0.5 * (a - m))
    wa = np.exp(-0.5 * (b - m))
    return we / (we + wa)


def _scan_point(cfg: ScanConfig, index: int) -> ScanRow:
    x = cfg.omega_c_grid[index]
    params = cfg.base.with_omega_c(x * cfg.base.gamma13)
    kind = SpectrumKind.IM_RHO13 if cfg.family == "A" else SpectrumKind.ABS_RHO12
    spectrum = synthesize_spectrum(params, cfg.grid.build(cfg.base), kind,
                                   pops=cfg.pops)
    kind_eit, kind_ats = FAMILY_MODELS[cfg.family]
    n = len(spectrum)

    if cfg.noise_sigma == 0.0 or not cfg.seeds:
        y = spectrum.values[None, :]
        seeds = [cfg.fit_options.seed]
    else:
        seeds = [_child_seed(s, index) for s in cfg.seeds]
        y = np.stack([
            add_noise(spectrum, cfg.noise_sigma, s).values for s in seeds])

    _, _, aic_e, _, _ = fit_batch(spectrum.delta_grid, y, kind_eit,
                                  cfg.fit_options, seeds=seeds)
    _, _, aic_a, _, _ = fit_batch(spectrum.delta_grid, y, kind_ats,
                                  cfg.fit_options, seeds=seeds)
    w_eit = _pair_weights(aic_e, aic_a)
    wbar_eit = _pair_weights(aic_e / n, aic_a / n)

    if cfg.noise_sigma == 0.0 or not cfg.seeds:
        return ScanRow(x, float(w_eit[0]), float(1 - w_eit[0]),
                       float(wbar_eit[0]), float(1 - wbar_eit[0]))
    med_w, med_wbar = float(np.median(w_eit)), float(np.median(wbar_eit))
    return ScanRow(x, med_w, 1 - med_w, med_wbar, 1 - med_wbar,
                   seed_w_eit=tuple(w_eit), seed_wbar_eit=tuple(wbar_eit))


def _scan_point_star(args):
    return _scan_point(*args)


def run_scan(cfg: ScanConfig, workers: Optional[int] = None) -> ScanResult:
    """Run the sweep; noisy rows report the median weight across seeds."""
    indices = range(len(cfg.omega_c_grid))
    if workers is None:
        workers = os.cpu_count() or 1
    if workers > 1 and len(cfg.omega_c_grid) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_scan_point_star,
                                 [(cfg, i) for i in indices], chunksize=4))
    else:
        rows = [_scan_point(cfg, i) for i in indices]

    per_seed = None
    if cfg.noise_sigma > 0.0 and cfg.seeds:
        per_seed = []
        for j in range(len(cfg.seeds)):
            track = [(r.omega_c_over_gamma13,
                      r.seed_w_eit[j], 1 - r.seed_w_eit[j]) for r in rows]
            per_seed.append(_transition_from_track(track))
        per_seed = tuple(per_seed)
    return ScanResult(config=cfg, rows=tuple(rows),
                      transition=find_transition(rows),
                      per_seed_transitions=per_seed)


def _transition_from_track(track) -> Optional[float]:
    """track: sequence of (x, w_eit, w_ats)."""
    start = None
    for x, w_eit, w_ats in track:
        if w_ats > w_eit:
            if start is None:
                start = x
        else:
            start = None
    return start


def find_transition(rows: Sequence[ScanRow]) -> Optional[float]:
    """Smallest grid value from which the ATS model wins persistently."""
    return _transition_from_track(
        [(r.omega_c_over_gamma13, r.w_eit, r.w_ats) for r in rows])


def population_study(cfg: ScanConfig, ratio_grid,
                     workers: Optional[int] = None):
    """Transitions of both families versus ground-state population ratio.

    Each ratio r = rho22/rho11 is expanded into populations with
    rho11 + rho22 = 1 and rho33 = 0, the corrected spectra are scanned for
    family A and family B, and the two transitions are recorded.
    """
    out = []
    for ratio in ratio_grid:
        if not 0.0 <= ratio <= 1.0:
            raise ValueError(f"population ratio must lie in [0, 1], got {ratio}")
        rho11 = 1.0 / (1.0 + ratio)
        pops = Populations(rho11_0=rho11, rho22_0=1.0 - rho11, rho33_0=0.0)
        transitions = {}
        for family in ("A", "B"):
            sub = ScanConfig(base=cfg.base, omega_c_grid=cfg.omega_c_grid,
                             family=family, pops=pops,
                             noise_sigma=cfg.noise_sigma, seeds=cfg.seeds,
                             grid=cfg.grid, fit_options=cfg.fit_options)
            transitions[family] = run_scan(sub, workers=workers).transition
        out.append((float(ratio), transitions["A"], transitions["B"]))
    return out

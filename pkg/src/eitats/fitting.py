"""Damped nonlinear least squares and Akaike-weight model comparison.

The fitter is a plain Levenberg-Marquardt loop in the log-reparameterized
space of each model: numerical Jacobian by forward differences, damping
scaled up tenfold on a failed step and down tenfold on success, multi-start
from the peak-geometry heuristic plus seeded log-space perturbations.

Everything runs batched: a single call can minimize hundreds of independent
rows (different noise realizations and different starts) at once, which is
what makes seed sweeps affordable. ``fit`` is the single-spectrum wrapper.

AIC uses the Gaussian-residual likelihood with the noise variance estimated
at the optimum, ``aic = n * ln(rss / n) + 2 * (K + 1)``; the additive
constant ``n (ln 2pi + 1)`` is dropped since only differences matter.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateData, FitDiverged, MismatchedSampleSize
from .lineshapes import (ModelKind, ModelParams, eval_model_many,
                         from_unconstrained, initial_guess, to_unconstrained)
from .spectra import RealSpectrum, SpectrumKind

__all__ = [
    "FitOptions",
    "FitResult",
    "ComparisonResult",
    "fit",
    "fit_batch",
    "akaike_weights",
    "per_point_weights",
    "compare",
    "FAMILY_MODELS",
    "family_for_kind",
]

_RSS_FLOOR = 1e-300

FAMILY_MODELS = {
    "A": (ModelKind.A_EIT, ModelKind.A_ATS),
    "B": (ModelKind.B_EIT, ModelKind.B_ATS),
}

_FAMILY_KINDS = {
    "A": (SpectrumKind.IM_RHO13,),
    "B": (SpectrumKind.ABS_RHO12, SpectrumKind.QUANTIFIER_C),
}


def family_for_kind(kind: SpectrumKind) -> str:
    return "A" if kind is SpectrumKind.IM_RHO13 else "B"


@dataclass(frozen=True)
class FitOptions:
    """Tunables of the damped least-squares engine (all overridable)."""

    max_iter: int = 500
    rss_rtol: float = 1e-10
    step_tol: float = 1e-8
    fd_rel_step: float = 1e-6
    n_starts: int = 5
    perturb_low: float = 0.5
    perturb_high: float = 2.0
    seed: int = 0
    lambda_init: float = 1e-3
    lambda_factor: float = 10.0
    lambda_max: float = 1e14


@dataclass(frozen=True)
class FitResult:
    model: ModelParams
    rss: float
    n: int
    k_total: int
    aic: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class ComparisonResult:
    i_eit: float
    i_ats: float
    w_eit: float
    w_ats: float
    wbar_eit: float
    wbar_ats: float
    fit_eit: Optional[FitResult] = None
    fit_ats: Optional[FitResult] = None


def _aic(rss: float, n: int, k_total: int) -> float:
    return n * np.log(max(rss, _RSS_FLOOR) / n) + 2.0 * k_total


def _lm_minimize(kind: ModelKind, delta: np.ndarray, y: np.ndarray,
                 u0: np.ndarray, opts: FitOptions):
    """Minimize RSS for a batch of rows; returns (u, rss, iters, converged).

    ``y`` is (m, n), ``u0`` is (m, k) in the unconstrained space. Rows whose
    residuals never become finite come back with rss = inf.
    """
    m, k = u0.shape
    u = u0.copy()
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        f = eval_model_many(kind, from_unconstrained(kind, u), delta)
    r = y - f
    rss = np.einsum("mn,mn->m", r, r)
    bad = ~np.isfinite(rss)
    rss[bad] = np.inf
    lam = np.full(m, opts.lambda_init)
    iters = np.zeros(m, dtype=int)
    converged = np.zeros(m, dtype=bool)
    active = np.where(~bad)[0]

    for _ in range(opts.max_iter):
        if active.size == 0:
            break
        ua, fa, ra = u[active], f[active], y[active] - f[active]
        h = opts.fd_rel_step * np.maximum(np.abs(ua), 1.0)
        jac = np.empty((active.size, k, delta.size))
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            for j in range(k):
                up = ua.copy()
                up[:, j] += h[:, j]
                fj = eval_model_many(kind, from_unconstrained(kind, up), delta)
                fj -= fa
                fj /= h[:, j, None]
                jac[:, j, :] = fj
        a = jac @ jac.transpose(0, 2, 1)
        g = (jac @ ra[..., None])[..., 0]
        diag = np.einsum("mkk->mk", a).copy()
        diag = np.maximum(diag, 1e-12 * diag.max(axis=1, keepdims=True))
        diag = np.maximum(diag, _RSS_FLOOR)
        eye = np.eye(k)

        pending = np.arange(active.size)
        accepted = np.zeros(active.size, dtype=bool)
        step_small = np.zeros(active.size, dtype=bool)
        rss_new = rss[active].copy()
        while pending.size:
            lam_p = lam[active[pending]]
            damp = a[pending] + lam_p[:, None, None] * \
                (diag[pending][:, :, None] * eye) + 1e-30 * eye
            try:
                du = np.linalg.solve(damp, g[pending][..., None])[..., 0]
            except np.linalg.LinAlgError:
                du = np.stack([np.linalg.lstsq(dm, gv, rcond=None)[0]
                               for dm, gv in zip(damp, g[pending])])
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                ut = u[active[pending]] + du
                ft = eval_model_many(kind, from_unconstrained(kind, ut), delta)
                rt = y[active[pending]] - ft
                rsst = np.einsum("mn,mn->m", rt, rt)
            rsst = np.where(np.isfinite(rsst), rsst, np.inf)
            better = rsst < rss[active[pending]]
            idx_b = pending[better]
            u[active[idx_b]] = ut[better]
            f[active[idx_b]] = ft[better]
            rss_new[idx_b] = rsst[better]
            lam[active[idx_b]] = np.maximum(
                lam[active[idx_b]] / opts.lambda_factor, 1e-15)
            accepted[idx_b] = True
            step_small[idx_b] = np.max(np.abs(du[better]), axis=1) < opts.step_tol
            idx_w = pending[~better]
            lam[active[idx_w]] *= opts.lambda_factor
            stalled = lam[active[idx_w]] > opts.lambda_max
            # a stall at maximum damping means no finite step can improve
            converged[active[idx_w[stalled]]] = True
            pending = idx_w[~stalled]

        iters[active[accepted]] += 1
        rel_change = np.abs(rss[active] - rss_new) <= \
            opts.rss_rtol * np.maximum(rss[active], _RSS_FLOOR)
        rss[active] = rss_new
        converged[active[accepted & (rel_change | step_small)]] = True
        # every row either accepted a step or stalled at maximum damping;
        # only accepted-but-unconverged rows keep iterating
        active = active[accepted & ~converged[active]]

    return u, rss, iters, converged


def _expand_starts(kind: ModelKind, theta0: np.ndarray, seeds: Sequence[int],
                   opts: FitOptions) -> np.ndarray:
    """(m, k) heuristic starts -> (m * n_starts, k) unconstrained starts."""
    m, k = theta0.shape
    u0 = np.empty((m, opts.n_starts, k))
    lo, hi = np.log(opts.perturb_low), np.log(opts.perturb_high)
    for i in range(m):
        base = to_unconstrained(ModelParams(kind, tuple(theta0[i])))
        u0[i, 0] = base
        rng = np.random.default_rng(seeds[i])
        u0[i, 1:] = base + rng.uniform(lo, hi, size=(opts.n_starts - 1, k))
    return u0.reshape(m * opts.n_starts, k)


def fit_batch(delta: np.ndarray, y: np.ndarray, kind: ModelKind,
              options: FitOptions = FitOptions(),
              seeds: Optional[Sequence[int]] = None,
              starts: Optional[np.ndarray] = None):
    """Fit many spectra sharing one grid; returns per-row result arrays.

    ``y`` is (m, n). ``seeds`` (one per row) drive the multi-start
    perturbations; ``starts`` optionally overrides the heuristic guesses.
    Returns (theta, rss, aic, iterations, converged) with theta (m, K).
    """
    delta = np.asarray(delta, dtype=float)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    m = y.shape[0]
    k = kind.parameter_count
    if seeds is None:
        seeds = [options.seed] * m
    if starts is None:
        starts = np.empty((m, k))
        for i in range(m):
            starts[i] = _guess_theta(kind, delta, y[i])
    u0 = _expand_starts(kind, np.asarray(starts, dtype=float), seeds, options)

    u, rss, iters, conv = _lm_minimize(
        kind, delta, np.repeat(y, options.n_starts, axis=0), u0, options)

    rss_g = rss.reshape(m, options.n_starts)
    best = np.argmin(rss_g, axis=1)
    rows = np.arange(m) * options.n_starts + best
    if not np.all(np.isfinite(rss_g[np.arange(m), best])):
        raise FitDiverged("every start produced non-finite residuals")
    theta = from_unconstrained(kind, u[rows])
    n = delta.size
    aic = np.array([_aic(r, n, k + 1) for r in rss_g[np.arange(m), best]])
    return theta, rss_g[np.arange(m), best], aic, iters[rows], conv[rows]


def _guess_theta(kind: ModelKind, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    guess = initial_guess(kind, RealSpectrum(x, y, _any_kind_for(kind)))
    return np.asarray(guess.theta)


def _any_kind_for(kind: ModelKind) -> SpectrumKind:
    return SpectrumKind.IM_RHO13 if kind.value.startswith("A") \
        else SpectrumKind.ABS_RHO12


def fit(data: RealSpectrum, kind: ModelKind,
        start: Optional[ModelParams] = None,
        options: FitOptions = FitOptions()) -> FitResult:
    """Fit one lineshape model to one spectrum by damped least squares."""
    n = len(data)
    k_total = kind.parameter_count + 1
    if n < k_total + 2:
        raise ValueError(f"need at least {k_total + 2} points, got {n}")
    if np.ptp(data.values) <= 0.0:
        raise DegenerateData("constant data cannot constrain a lineshape")
    starts = None
    if start is not None:
        if start.kind is not kind:
            raise ValueError("start parameters belong to a different model")
        starts = np.asarray(start.theta)[None, :]
    theta, rss, aic, iters, conv = fit_batch(
        data.delta_grid, data.values[None, :], kind, options,
        seeds=[options.seed], starts=starts)
    return FitResult(model=ModelParams(kind, tuple(theta[0])),
                     rss=float(rss[0]), n=n, k_total=k_total,
                     aic=float(aic[0]), converged=bool(conv[0]),
                     iterations=int(iters[0]))


def akaike_weights(i_values) -> np.ndarray:
    """Akaike weights of a set of AIC values, overflow-safe."""
    vals = np.asarray(i_values, dtype=float)
    if vals.size < 2:
        raise ValueError("need at least two AIC values to compare")
    if not np.all(np.isfinite(vals)):
        raise ValueError("AIC values must be finite")
    w = np.exp(-0.5 * (vals - vals.min()))
    return w / w.sum()


def per_point_weights(fits: Sequence[FitResult]) -> np.ndarray:
    """Akaike weights computed from per-point AIC values ``aic / n``."""
    ns = {f.n for f in fits}
    if len(ns) != 1:
        raise MismatchedSampleSize(f"fits disagree on sample size: {sorted(ns)}")
    n = ns.pop()
    return akaike_weights([f.aic / n for f in fits])


def compare(data: RealSpectrum, family: str,
            options: FitOptions = FitOptions()) -> ComparisonResult:
    """Fit the EIT and ATS models of one family and weigh them."""
    if family not in FAMILY_MODELS:
        raise ValueError(f"unknown model family {family!r}")
    if data.kind not in _FAMILY_KINDS[family]:
        raise ValueError(
            f"family {family} does not apply to {data.kind.value} data")
    kind_eit, kind_ats = FAMILY_MODELS[family]
    fit_eit = fit(data, kind_eit, options=options)
    fit_ats = fit(data, kind_ats, options=options)
    w = akaike_weights([fit_eit.aic, fit_ats.aic])
    wbar = per_point_weights([fit_eit, fit_ats])
    return ComparisonResult(
        i_eit=fit_eit.aic, i_ats=fit_ats.aic,
        w_eit=float(w[0]), w_ats=float(w[1]),
        wbar_eit=float(wbar[0]), wbar_ats=float(wbar[1]),
        fit_eit=fit_eit, fit_ats=fit_ats)

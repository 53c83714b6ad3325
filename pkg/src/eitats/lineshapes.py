"""The four candidate lineshape models and their starting-value heuristics.

Two model families are compared per spectrum kind: ``A_EIT``/``A_ATS`` for
absorption profiles and ``B_EIT``/``B_ATS`` for ground-state-coherence
profiles (including measured coherence-quantifier profiles). Parameter
vectors use a fixed, documented ordering so serialized fits stay portable:

* A_EIT: (s_plus, s_minus, gamma_plus, gamma_minus)
* A_ATS: (s, delta0, gamma)
* B_EIT: (p1, gamma_plus, gamma_minus)
* B_ATS: (p2, omega, gamma)
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData
from .spectra import RealSpectrum

__all__ = [
    "ModelKind",
    "ModelParams",
    "eval_model",
    "eval_model_many",
    "initial_guess",
    "interior_maxima",
    "to_unconstrained",
    "from_unconstrained",
]


class ModelKind(enum.Enum):
    A_EIT = "A_EIT"
    A_ATS = "A_ATS"
    B_EIT = "B_EIT"
    B_ATS = "B_ATS"

    @property
    def parameter_count(self) -> int:
        return _PARAM_COUNT[self]

    @property
    def parameter_names(self) -> tuple[str, ...]:
        return _PARAM_NAMES[self]


_PARAM_COUNT = {
    ModelKind.A_EIT: 4,
    ModelKind.A_ATS: 3,
    ModelKind.B_EIT: 3,
    ModelKind.B_ATS: 3,
}

_PARAM_NAMES = {
    ModelKind.A_EIT: ("s_plus", "s_minus", "gamma_plus", "gamma_minus"),
    ModelKind.A_ATS: ("s", "delta0", "gamma"),
    ModelKind.B_EIT: ("p1", "gamma_plus", "gamma_minus"),
    ModelKind.B_ATS: ("p2", "omega", "gamma"),
}


@dataclass(frozen=True)
class ModelParams:
    kind: ModelKind
    theta: tuple[float, ...]

    def __post_init__(self):
        theta = tuple(float(t) for t in self.theta)
        object.__setattr__(self, "theta", theta)
        if len(theta) != self.kind.parameter_count:
            raise ValueError(
                f"{self.kind.value} expects {self.kind.parameter_count} "
                f"parameters, got {len(theta)}")
        if self.kind is ModelKind.A_EIT:
            sp, sm, gp, gm = theta
            ok = sp >= 0 and sm >= 0 and gp > 0 and gm > 0
        elif self.kind is ModelKind.A_ATS:
            s, d0, g = theta
            ok = s >= 0 and d0 >= 0 and g > 0
        elif self.kind is ModelKind.B_EIT:
            p1, gp, gm = theta
            ok = p1 >= 0 and gm > 0 and gp > gm
        else:
            p2, om, g = theta
            ok = p2 >= 0 and om >= 0 and g > 0
        if not ok:
            raise ValueError(f"invalid {self.kind.value} parameters {theta}")

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind.value, "theta": list(self.theta)})

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        obj = json.loads(text)
        return cls(ModelKind(obj["kind"]), tuple(obj["theta"]))


def eval_model_many(kind: ModelKind, theta: np.ndarray, delta) -> np.ndarray:
    """Evaluate a batch of parameter vectors, broadcasting over ``delta``.

    ``theta`` has shape (..., K); the result has shape (..., len(delta)).
    Written with in-place updates on the large broadcast temporaries; this
    loop carries the bulk of the fitter's cost.
    """
    th = np.asarray(theta, dtype=float)
    d = np.atleast_1d(np.asarray(delta, dtype=float))
    d2 = d * d
    cols = [th[..., j, None] for j in range(th.shape[-1])]
    if kind is ModelKind.A_EIT:
        sp, sm, gp, gm = cols
        t1 = d2 + gp * gp
        np.divide(sp * sp, t1, out=t1)
        t2 = d2 + gm * gm
        np.divide(sm * sm, t2, out=t2)
        t1 -= t2
        return t1
    if kind is ModelKind.A_ATS:
        s, d0, g = cols
        g2 = g * g
        t1 = d - d0
        t1 *= t1
        t1 += g2
        np.divide(1.0, t1, out=t1)
        t2 = d + d0
        t2 *= t2
        t2 += g2
        np.divide(1.0, t2, out=t2)
        t1 += t2
        t1 *= s * s
        return t1
    if kind is ModelKind.B_EIT:
        p1, gp, gm = cols
        t1 = d2 + gp * gp
        t2 = d2 + gm * gm
        t1 *= t2
        np.sqrt(t1, out=t1)
        np.divide(p1 * (gp - gm), t1, out=t1)
        return t1
    p2, om, g = cols
    g2, om2 = g * g, om * om
    t1 = (2.0 * d2) * (g2 - om2)
    t1 += d2 * d2
    t1 += (g2 + om2) ** 2
    np.sqrt(t1, out=t1)
    np.divide(p2 * om, t1, out=t1)
    return t1


def eval_model(mp: ModelParams, delta):
    """Evaluate one model; scalar in, scalar out."""
    out = eval_model_many(mp.kind, np.asarray(mp.theta)[None, :], delta)[0]
    if np.isscalar(delta) or np.ndim(delta) == 0:
        return float(out[0])
    return out


# -- log-space reparameterization used by the fitter ---------------------------
#
# All strictly positive parameters are fitted through their logarithms, which
# keeps the damped least-squares step unconstrained while honoring the
# positivity invariants. B_EIT additionally stores log(gamma_plus -
# gamma_minus) so the width ordering can never invert mid-fit.

_LOG_FLOOR = 1e-12


def to_unconstrained(mp: ModelParams) -> np.ndarray:
    th = np.maximum(np.asarray(mp.theta, dtype=float), _LOG_FLOOR)
    if mp.kind is ModelKind.B_EIT:
        p1, gp, gm = th
        return np.log([p1, gm, max(gp - gm, _LOG_FLOOR)])
    return np.log(th)


def from_unconstrained(kind: ModelKind, u: np.ndarray) -> np.ndarray:
    """Map unconstrained vectors (..., K) back to admissible theta."""
    e = np.exp(np.asarray(u, dtype=float))
    if kind is ModelKind.B_EIT:
        p1, gm, gap = np.moveaxis(e, -1, 0)
        return np.stack([p1, gm + gap, gm], axis=-1)
    return e


# -- starting-value heuristics --------------------------------------------------


def interior_maxima(values) -> np.ndarray:
    """Indices of strict interior local maxima."""
    y = np.asarray(values, dtype=float)
    if y.size < 3:
        return np.empty(0, dtype=int)
    return np.where((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:]))[0] + 1


def _half_width(x, y, peak: int, floor: float) -> float:
    """Half-width of the peak at half prominence, interpolated linearly."""
    half = floor + 0.5 * (y[peak] - floor)
    widths = []
    for step in (-1, 1):
        i = peak
        while 0 < i + step < y.size - 1 and half < y[i + step] < y[i]:
            i += step
        j = i + step
        if 0 <= j < y.size and y[j] <= half:
            frac = (y[i] - half) / max(y[i] - y[j], 1e-300)
            widths.append(abs(x[i] - x[peak]) + frac * abs(x[j] - x[i]))
        elif i != peak:
            widths.append(abs(x[i] - x[peak]))
    if not widths:
        widths.append(abs(x[min(peak + 1, y.size - 1)] - x[peak]))
    return max(float(np.mean(widths)), 1e-6 * (x[-1] - x[0]))


def initial_guess(kind: ModelKind, data: RealSpectrum) -> ModelParams:
    """Heuristic starting parameters from peak geometry.

    Doublet locations come from the two largest interior maxima, widths from
    half-width-at-half-maximum estimates, amplitudes from peak heights.
    Single-peaked data falls back to a split of a tenth of the grid
    half-span for the doublet models.
    """
    x, y = data.delta_grid, data.values
    if x.size < 8:
        raise DegenerateData("need at least 8 points for a starting guess")
    ymax, ymin = float(y.max()), float(y.min())
    if ymax - ymin <= 0.0:
        raise DegenerateData("constant data carries no lineshape information")

    half_span = 0.5 * (x[-1] - x[0])
    spacing = (x[-1] - x[0]) / (x.size - 1)
    peaks = interior_maxima(y)
    peaks = peaks[np.argsort(y[peaks])[::-1]]
    main = int(peaks[0]) if peaks.size else int(np.argmax(y))
    floor = max(ymin, 0.0)
    amp = max(ymax - floor, 1e-300)
    gw = _half_width(x, y, main, floor)

    half_sep = 0.0
    second = None
    if peaks.size >= 2:
        cand = int(peaks[1])
        if y[cand] > floor + 0.2 * amp and abs(x[cand] - x[main]) > 2 * spacing:
            second = cand
            half_sep = 0.5 * abs(x[cand] - x[main])

    tiny = 1e-9
    if kind is ModelKind.B_ATS:
        g0 = gw
        if second is not None:
            om0 = float(np.hypot(half_sep, g0))
            p20 = 2.0 * g0 * amp
        else:
            om0 = 0.1 * half_span
            p20 = ymax * (g0 * g0 + om0 * om0) / max(om0, tiny)
        theta = (max(p20, tiny), max(om0, tiny), g0)
    elif kind is ModelKind.A_ATS:
        g0 = gw
        if second is not None:
            d00 = max(half_sep, spacing)
        else:
            d00 = 0.1 * half_span
        s0 = np.sqrt(max(ymax, tiny)) * g0
        theta = (max(s0, tiny), d00, g0)
    elif kind is ModelKind.B_EIT:
        gm0 = gw
        gp0 = max(4.0 * gw, 0.2 * half_span, 1.5 * gm0)
        center = float(y[main])
        p10 = center * gp0 * gm0 / max(gp0 - gm0, tiny)
        theta = (max(p10, tiny), gp0, gm0)
    else:  # A_EIT
        if second is not None:
            # two lobes around a dip: broad positive part spans the whole
            # structure, narrow negative part carves the dip between them
            gp0 = 2.0 * gw + half_sep
            gm0 = max(0.7 * half_sep, spacing)
            lo, hi = min(main, second), max(main, second)
            dip = lo + int(np.argmin(y[lo:hi + 1]))
            sp0 = np.sqrt(max(ymax, tiny) * (half_sep ** 2 + gp0 ** 2))
            depth = max(sp0 ** 2 / (x[dip] ** 2 + gp0 ** 2) - y[dip], 1e-3 * ymax)
            sm0 = gm0 * np.sqrt(depth)
        else:
            gp0 = gw
            gm0 = 0.1 * gw
            sp0 = np.sqrt(max(ymax, tiny)) * gp0
            sm0 = 0.1 * np.sqrt(max(ymax, tiny)) * gm0
        theta = (max(sp0, tiny), max(sm0, tiny), gp0, gm0)
    return ModelParams(kind, theta)

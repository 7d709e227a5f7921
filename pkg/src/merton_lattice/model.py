"""Continuous Merton jump-diffusion market and Markovian payoffs."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import BadProbabilities, JumpBelowMinusOne, ModelError, NonPositiveSpot, SingularVol

PROB_TOL = 1e-9
SAMPLER_MEAN_DRAWS = 100_000
DET_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# jump laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteLaw:
    """Finite-support jump law: ``values[m]`` occurs with probability ``probs[m]``.

    ``origin`` is ``"native"`` for user-supplied laws and ``"discretized"`` for laws
    produced by :func:`merton_lattice.lattice.discretize_jumps`, in which case
    ``n`` and ``levels`` record the step count and truncation level used.
    """

    values: np.ndarray
    probs: np.ndarray
    origin: str = "native"
    n: Optional[int] = None
    levels: Optional[int] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        probs = np.array(self.probs, dtype=float).ravel()
        if values.ndim != 2 or values.shape[0] == 0:
            raise BadProbabilities("jump law needs at least one support point")
        if probs.shape[0] != values.shape[0]:
            raise BadProbabilities(
                f"{values.shape[0]} jump values but {probs.shape[0]} probabilities"
            )
        if not np.all(np.isfinite(values)):
            raise JumpBelowMinusOne("jump values must be finite")
        if np.any(values <= -1.0):
            raise JumpBelowMinusOne(f"jump values must exceed -1, got min {values.min()!r}")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise BadProbabilities("jump probabilities must be nonnegative")
        total = sum(Fraction(float(p)) for p in probs)
        if abs(float(total) - 1.0) > PROB_TOL:
            raise BadProbabilities(f"jump probabilities sum to {float(total)!r}, not 1")
        if total != 1:
            probs = np.array([float(Fraction(float(p)) / total) for p in probs])
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "probs", _frozen(probs))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def mean_exact(self) -> list[Fraction]:
        """Per-coordinate mean as exact rationals of the stored floats."""
        ps = [Fraction(float(p)) for p in self.probs]
        return [
            sum((p * Fraction(float(v)) for p, v in zip(ps, self.values[:, i])), Fraction(0))
            for i in range(self.dim)
        ]

    def mean(self) -> np.ndarray:
        return np.array([float(m) for m in self.mean_exact()])

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.choice(self.size, size=size, p=self.probs)
        return self.values[idx]

    def to_raw(self) -> dict:
        return {
            "type": "discrete",
            "values": self.values.tolist(),
            "probs": self.probs.tolist(),
        }


def _uniform_draw(params: Mapping[str, Any]) -> tuple[int, Callable]:
    low = np.asarray(params["low"], dtype=float).ravel()
    high = np.asarray(params["high"], dtype=float).ravel()
    if low.shape != high.shape or np.any(high <= low):
        raise ModelError("uniform sampler needs low < high coordinatewise")
    if np.any(low < -1.0):
        raise JumpBelowMinusOne("uniform sampler support must lie above -1")

    def draw(rng, size):
        return low + (high - low) * rng.random((size, low.size))

    return low.size, draw


def _lognormal_draw(params: Mapping[str, Any]) -> tuple[int, Callable]:
    # 1 + U = exp(mean + std * Z) coordinatewise, the classical Merton jump.
    mean = np.asarray(params["mean"], dtype=float).ravel()
    std = np.asarray(params["std"], dtype=float).ravel()
    if mean.shape != std.shape or np.any(std < 0):
        raise ModelError("lognormal sampler needs matching mean/std with std >= 0")

    def draw(rng, size):
        return np.expm1(mean + std * rng.standard_normal((size, mean.size)))

    return mean.size, draw


SAMPLERS: dict[str, Callable[[Mapping[str, Any]], tuple[int, Callable]]] = {
    "uniform": _uniform_draw,
    "lognormal": _lognormal_draw,
}


@dataclass(frozen=True)
class SamplerLaw:
    """Jump law available only through a seedable generator.

    The caller guarantees finite second moments; the engine cannot check it.
    ``draw(rng, size)`` must return an array of shape ``(size, dim)``.
    """

    name: str
    params: Mapping[str, Any]
    seed: int = 0
    draw_fn: Optional[Callable[[np.random.Generator, int], np.ndarray]] = field(
        default=None, compare=False, repr=False
    )
    dim_hint: Optional[int] = None

    def __post_init__(self):
        if self.draw_fn is None:
            if self.name not in SAMPLERS:
                raise ModelError(f"unknown sampler {self.name!r}; known: {sorted(SAMPLERS)}")
            dim, fn = SAMPLERS[self.name](self.params)
            object.__setattr__(self, "draw_fn", fn)
            object.__setattr__(self, "dim_hint", dim)
        elif self.dim_hint is None:
            raise ModelError("custom samplers must declare dim_hint")

    @property
    def dim(self) -> int:
        return int(self.dim_hint)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.asarray(self.draw_fn(rng, size), dtype=float).reshape(size, self.dim)
        if np.any(out <= -1.0):
            raise JumpBelowMinusOne(f"sampler {self.name!r} produced a jump <= -1")
        return out

    def reference_sample(self, count: int = SAMPLER_MEAN_DRAWS, seed: Optional[int] = None):
        rng = np.random.Generator(np.random.Philox(self.seed if seed is None else seed))
        return self.draw(rng, count)

    def mean(self) -> np.ndarray:
        return self.reference_sample().mean(axis=0)

    def to_raw(self) -> dict:
        return {
            "type": "sampler",
            "name": self.name,
            "params": copy.deepcopy(dict(self.params)),
            "seed": self.seed,
        }


JumpLaw = Union[DiscreteLaw, SamplerLaw]


def jump_law_from_raw(raw: Union[Mapping[str, Any], JumpLaw]) -> JumpLaw:
    if isinstance(raw, (DiscreteLaw, SamplerLaw)):
        return raw
    kind = raw.get("type")
    if kind == "discrete":
        return DiscreteLaw(raw["values"], raw["probs"])
    if kind == "sampler":
        return SamplerLaw(raw["name"], dict(raw.get("params", {})), int(raw.get("seed", 0)))
    raise ModelError(f"unknown jump law type {kind!r}")


# ---------------------------------------------------------------------------
# market
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MertonModel:
    """Validated d-asset Merton market under the martingale measure.

    Construct through :func:`validate_model`; ``drift`` is always derived from
    the jump law (``-intensity * E[U]``) and is never user supplied.
    """

    spot: np.ndarray
    rate: float
    horizon: float
    vol: np.ndarray
    intensity: float
    jumps: JumpLaw
    drift: np.ndarray
    drift_samples: Optional[int]
    raw: dict = field(compare=False, repr=False)

    @property
    def d(self) -> int:
        return self.spot.shape[0]

    def jump_mean(self) -> np.ndarray:
        return self.jumps.mean()


def _check_vol(vol: np.ndarray) -> None:
    scale = np.max(np.abs(vol), axis=1)
    if np.any(scale == 0) or not np.all(np.isfinite(vol)):
        raise SingularVol("volatility matrix has a zero or non-finite row")
    det = np.linalg.det(vol / scale[:, None])
    if not abs(det) > DET_TOL:
        raise SingularVol(f"volatility matrix is singular (row-scaled det {det:.3e})")


def validate_model(raw: Mapping[str, Any]) -> MertonModel:
    """Build a :class:`MertonModel` from raw parameters.

    ``raw`` holds ``spot``, ``rate``, ``horizon``, ``vol``, ``intensity`` and
    ``jumps`` (a dict in the config format or a jump-law object).  ``jumps`` may
    be omitted when ``intensity`` is zero.
    """
    for key in ("spot", "rate", "horizon", "vol"):
        if key not in raw:
            raise ModelError(f"missing model field {key!r}")
    spot = np.array(raw["spot"], dtype=float).ravel()
    d = spot.size
    if d < 1:
        raise ModelError("need at least one asset")
    if not np.all(np.isfinite(spot)) or np.any(spot <= 0):
        raise NonPositiveSpot(f"spot prices must be positive, got {spot.tolist()}")
    rate = float(raw["rate"])
    horizon = float(raw["horizon"])
    intensity = float(raw.get("intensity", 0.0))
    if not horizon > 0:
        raise ModelError("horizon must be positive")
    if not rate >= 0:
        raise ModelError("rate must be nonnegative")
    if not intensity >= 0:
        raise ModelError("intensity must be nonnegative")
    vol = np.array(raw["vol"], dtype=float)
    if vol.ndim == 0:
        vol = vol.reshape(1, 1)
    if vol.shape != (d, d):
        raise SingularVol(f"vol must be {d}x{d}, got shape {vol.shape}")
    _check_vol(vol)

    jumps_raw = raw.get("jumps")
    if jumps_raw is None:
        if intensity != 0:
            raise ModelError("jumps are required when intensity > 0")
        jumps_raw = {"type": "discrete", "values": [[0.0] * d], "probs": [1.0]}
    jumps = jump_law_from_raw(jumps_raw)
    if jumps.dim != d:
        raise ModelError(f"jump law has dimension {jumps.dim}, model has {d}")

    if isinstance(jumps, DiscreteLaw):
        lam = Fraction(intensity)
        drift = np.array([-float(lam * m) for m in jumps.mean_exact()])
        samples = None
    else:
        drift = -intensity * jumps.mean()
        samples = SAMPLER_MEAN_DRAWS
    drift = drift + 0.0  # normalise -0.0

    normalized = {
        "spot": spot.tolist(),
        "rate": rate,
        "horizon": horizon,
        "vol": vol.tolist(),
        "intensity": intensity,
        "jumps": jumps.to_raw(),
    }
    return MertonModel(
        spot=_frozen(spot),
        rate=rate,
        horizon=horizon,
        vol=_frozen(vol),
        intensity=intensity,
        jumps=jumps,
        drift=_frozen(drift),
        drift_samples=samples,
        raw=normalized,
    )


# ---------------------------------------------------------------------------
# payoffs
# ---------------------------------------------------------------------------

FAMILIES = ("BasketPut", "BasketCall", "MaxCall", "MinPut", "Constant")


@dataclass(frozen=True)
class Payoff:
    """Markovian payoff ``F(s, t)`` from a closed set of Lipschitz families."""

    family: str
    strike: float
    weights: tuple = (1.0,)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown payoff family {self.family!r}; known: {FAMILIES}")
        if not self.strike >= 0:
            raise ModelError("strike must be nonnegative")
        w = tuple(float(x) for x in np.ravel(self.weights))
        if not w or any(x < 0 or not math.isfinite(x) for x in w):
            raise ModelError("weights must be a nonempty nonnegative vector")
        object.__setattr__(self, "strike", float(self.strike))
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return len(self.weights)

    @property
    def lipschitz(self) -> float:
        return max(1.0, math.fsum(self.weights))

    def __call__(self, s, t=0.0):
        return payoff_eval(self, s, t)

    def to_raw(self) -> dict:
        return {"family": self.family, "strike": self.strike, "weights": list(self.weights)}


def payoff_eval(payoff: Payoff, s, t=0.0):
    """Evaluate the payoff on prices ``s`` of shape ``(..., d)``.

    Returns a float for a single price vector and an array otherwise.
    """
    s = np.asarray(s, dtype=float)
    fam, K = payoff.family, payoff.strike
    if fam == "Constant":
        out = np.full(s.shape[:-1], K)
    elif fam == "BasketPut":
        out = np.maximum(K - s @ np.asarray(payoff.weights), 0.0)
    elif fam == "BasketCall":
        out = np.maximum(s @ np.asarray(payoff.weights) - K, 0.0)
    elif fam == "MaxCall":
        out = np.maximum(s.max(axis=-1) - K, 0.0)
    else:
        out = np.maximum(K - s.min(axis=-1), 0.0)
    return float(out) if out.ndim == 0 else out


def lipschitz_probe(payoff: Payoff, pairs: int, seed: int = 0, box: Optional[float] = None) -> float:
    """Largest observed Lipschitz ratio over random pairs of (price, time) points.

    Prices are drawn uniformly on ``[0, box]^d`` (default ``2 * max(K, 1) + 2``),
    times on ``[0, 1]``.
    """
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    d = payoff.d
    box = 2.0 * max(payoff.strike, 1.0) + 2.0 if box is None else float(box)
    rng = np.random.default_rng(seed)
    s1 = rng.uniform(0.0, box, (pairs, d))
    s2 = rng.uniform(0.0, box, (pairs, d))
    t1 = rng.uniform(0.0, 1.0, pairs)
    t2 = rng.uniform(0.0, 1.0, pairs)
    num = np.abs(np.atleast_1d(payoff_eval(payoff, s1)) - np.atleast_1d(payoff_eval(payoff, s2)))
    den = np.abs(s1 - s2).sum(axis=1) + np.abs(t1 - t2) * (1.0 + np.abs(s1).sum(axis=1))
    ok = den > 0
    if not np.any(ok):
        return 0.0
    return float(np.max(num[ok] / den[ok]))


def make_model(
    spot: Sequence[float],
    rate: float,
    horizon: float,
    vol,
    intensity: float = 0.0,
    jumps: Union[Mapping[str, Any], JumpLaw, None] = None,
) -> MertonModel:
    """Keyword front end to :func:`validate_model`."""
    raw = {"spot": spot, "rate": rate, "horizon": horizon, "vol": vol, "intensity": intensity}
    if jumps is not None:
        raw["jumps"] = jumps
    return validate_model(raw)

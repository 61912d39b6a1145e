"""
Mobility classification from two channel snapshots and the speed-to-order map.

The statistic is the real part of the normalized inner product of two
consecutive channel vectors. Slow UEs keep it close to one; fast UEs
decorrelate the snapshots and push it towards (or below) zero. Speed classes
are assigned by comparing it with descending thresholds, which can be
calibrated from random geometries.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonSeparable, ShapeMismatch, ZeroVector
from .scm import ChannelTrace, MeasurementTrace, generate_trace, ls_estimate, sample_scenario

__all__ = [
    "MobilityThresholds",
    "OrderPolicy",
    "Calibration",
    "satc",
    "estimate_speed_class",
    "snapshot_satc",
    "calibrate_thresholds",
    "order_for_speed",
    "fit_order_policy",
]


def satc(h_prev, h_curr) -> float:
    """
    Spatial average of temporal correlation between two snapshots.

    Parameters
    ----------
    h_prev, h_curr : array_like
        Channel vectors (or matrices, which are flattened) of equal size.

    Returns
    -------
    float
        ``Re(h_prev^H h_curr) / (||h_prev|| ||h_curr||)``, clipped to
        ``[-1, 1]`` against rounding.

    Raises
    ------
    ZeroVector
        If either snapshot has zero norm.
    """
    a = np.asarray(h_prev, dtype=np.complex128).reshape(-1, order="F")
    b = np.asarray(h_curr, dtype=np.complex128).reshape(-1, order="F")
    if a.shape != b.shape:
        raise ShapeMismatch(f"snapshot sizes differ: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cannot correlate a zero snapshot")
    eta = float(np.real(np.vdot(a, b)) / (na * nb))
    return min(1.0, max(-1.0, eta))


@dataclass(frozen=True)
class MobilityThresholds:
    """
    Ordered ``(eta_threshold, speed_class_kmh)`` pairs.

    A statistic strictly above ``pairs[k][0]`` (and not above any earlier
    threshold) maps to ``pairs[k][1]``. Anything at or below the last
    threshold falls into the last (fastest) class.
    """

    pairs: tuple

    def __post_init__(self):
        pairs = tuple((float(t), float(v)) for t, v in self.pairs)
        if not pairs:
            raise ValueError("at least one threshold is required")
        etas = [t for t, _ in pairs]
        speeds = [v for _, v in pairs]
        if any(not -1.0 <= t <= 1.0 for t in etas):
            raise ValueError("thresholds must lie in [-1, 1]")
        if any(b >= a for a, b in zip(etas, etas[1:])):
            raise ValueError("thresholds must be strictly decreasing")
        if any(b <= a for a, b in zip(speeds, speeds[1:])):
            raise ValueError("speed classes must be strictly increasing")
        object.__setattr__(self, "pairs", pairs)

    @property
    def speeds(self):
        return [v for _, v in self.pairs]

    def classify(self, eta):
        for threshold, speed in self.pairs:
            if eta > threshold:
                return speed
        return self.pairs[-1][1]

    def to_text(self):
        lines = [f"classes={len(self.pairs)}"]
        for k, (t, v) in enumerate(self.pairs):
            lines.append(f"threshold.{k}={t!r}")
            lines.append(f"speed_kmh.{k}={v!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kv = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"malformed threshold line: {raw!r}")
            kv[key.strip()] = value.strip()
        try:
            n = int(kv["classes"])
            pairs = [(float(kv[f"threshold.{k}"]), float(kv[f"speed_kmh.{k}"])) for k in range(n)]
        except KeyError as exc:
            raise ValueError(f"threshold file is missing key {exc.args[0]}") from None
        return cls(tuple(pairs))


@dataclass(frozen=True)
class OrderPolicy:
    """Linear speed-to-order rule ``ceil(slope * v)`` clamped to ``[min_order, max_order]``."""

    slope: float = 0.3
    min_order: int = 1
    max_order: int = 16

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError("slope must be positive")
        if not 1 <= self.min_order <= self.max_order:
            raise ValueError("need 1 <= min_order <= max_order")


def order_for_speed(speed_kmh, policy: OrderPolicy = OrderPolicy()) -> int:
    """Prediction order for a UE moving at `speed_kmh`."""
    if speed_kmh < 0:
        raise ValueError("speed must be non-negative")
    # Round away float noise first so that 0.3 * 10 gives 3, not 4.
    raw = math.ceil(round(policy.slope * speed_kmh, 9))
    return int(min(policy.max_order, max(policy.min_order, raw)))


def fit_order_policy(speeds, orders, min_order=1, max_order=None) -> OrderPolicy:
    """
    Smallest slope whose ceiling rule meets every measured order.

    Useful for re-deriving the order map from effective-order measurements
    on a given simulator.
    """
    speeds = np.asarray(speeds, dtype=float)
    orders = np.asarray(orders, dtype=float)
    if speeds.shape != orders.shape or speeds.size == 0:
        raise ValueError("speeds and orders must be equal-length and nonempty")
    positive = speeds > 0
    if not positive.any():
        raise ValueError("need at least one positive speed")
    slope = float(np.max(orders[positive] / speeds[positive]))
    max_order = int(np.max(orders)) if max_order is None else max_order
    return OrderPolicy(slope=slope, min_order=min_order, max_order=max(max_order, min_order))


def snapshot_satc(source, slot=1):
    """
    Statistic between slots ``slot - 1`` and ``slot`` of a trace.

    `source` may be a ``ChannelTrace`` (true channels), a
    ``MeasurementTrace`` (LS channel estimates are used), or an array of
    channel vectors of shape ``(slots, d)``.
    """
    if isinstance(source, MeasurementTrace):
        if source.y.shape[0] <= slot:
            raise ShapeMismatch("need at least two measurement snapshots")
        h = ls_estimate(source.pilot, source.y[slot - 1:slot + 1])
    elif isinstance(source, ChannelTrace):
        h = source.vectors[slot - 1:slot + 1]
    else:
        h = np.asarray(source)[slot - 1:slot + 1]
    if h.shape[0] < 2:
        raise ShapeMismatch("need at least two snapshots")
    return satc(h[0], h[1])


def estimate_speed_class(source, thresholds: MobilityThresholds, slot=1):
    """Speed class (km/h) of the UE behind `source`; see :func:`snapshot_satc`."""
    return thresholds.classify(snapshot_satc(source, slot))


@dataclass(frozen=True, eq=False)
class Calibration:
    """Calibrated thresholds plus the per-speed samples behind them."""

    thresholds: MobilityThresholds
    medians: dict
    samples: dict = field(repr=False)


def _default_sampler(seed, speed_kmh):
    return sample_scenario(seed, speed_kmh=speed_kmh)


def calibrate_thresholds(speeds, sampler=None, trials=100, base_seed=0, overlap_quantile=0.25,
                         measure_fn=None):
    """
    Place thresholds at midpoints between per-speed medians of the statistic.

    Parameters
    ----------
    speeds : sequence of float
        Speed classes in km/h. Sorted internally.
    sampler : callable ``(seed, speed_kmh) -> ScmScenario``, optional
        Geometry generator; defaults to :func:`sample_scenario`. Seeds
        ``base_seed .. base_seed + trials - 1`` are passed, and the same
        seed is reused across speeds so each geometry is seen at every
        speed.
    trials : int
        Geometries per speed. At least 30 when two or more speeds are given.
    overlap_quantile : float
        Adjacent classes are rejected when more than this fraction of
        either class lands on the wrong side of their midpoint.
    measure_fn : callable ``ChannelTrace -> float``, optional
        How the statistic is computed from a two-slot trace; defaults to the
        true channels.

    Returns
    -------
    Calibration

    Raises
    ------
    NonSeparable
        If adjacent medians are not strictly decreasing in speed or the
        classes overlap beyond `overlap_quantile`.
    """
    speeds = sorted(float(v) for v in speeds)
    if not speeds:
        raise ValueError("need at least one speed")
    if len(speeds) >= 2 and trials < 30:
        raise ValueError("calibrating two or more speeds needs at least 30 trials")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    sampler = _default_sampler if sampler is None else sampler
    measure_fn = snapshot_satc if measure_fn is None else measure_fn

    samples = {}
    for v in speeds:
        etas = np.empty(trials)
        for i in range(trials):
            etas[i] = measure_fn(generate_trace(sampler(base_seed + i, v), 2))
        samples[v] = etas
    medians = {v: float(np.median(samples[v])) for v in speeds}

    for slow, fast in zip(speeds, speeds[1:]):
        if slow == fast or medians[slow] <= medians[fast]:
            raise NonSeparable(
                f"median statistic at {slow:g} km/h ({medians[slow]:.4f}) is not above "
                f"{fast:g} km/h ({medians[fast]:.4f})"
            )
        cut = 0.5 * (medians[slow] + medians[fast])
        miss_slow = float(np.mean(samples[slow] <= cut))
        miss_fast = float(np.mean(samples[fast] > cut))
        if max(miss_slow, miss_fast) > overlap_quantile:
            raise NonSeparable(
                f"{slow:g} and {fast:g} km/h overlap: {miss_slow:.0%} / {miss_fast:.0%} of trials "
                f"fall on the wrong side of {cut:.4f} (limit {overlap_quantile:.0%})"
            )

    pairs = [(0.5 * (medians[a] + medians[b]), a) for a, b in zip(speeds, speeds[1:])]
    pairs.append((-1.0, speeds[-1]))
    return Calibration(thresholds=MobilityThresholds(tuple(pairs)), medians=medians, samples=samples)

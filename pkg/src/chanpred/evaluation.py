"""
Baselines, error metrics, zero-forcing combining, sum-rate and the experiment runner.

The runner reproduces the usual prediction protocol: the first ``N_s``
measurement slots are used for fitting (autocorrelation estimates, LMMSE
covariance, network training) and the following ``slots`` slots are
predicted one step ahead and scored against the true channel.
"""

import csv
import dataclasses
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import mobility
from .arfit import sample_autocorr, yule_walker
from .errors import ExperimentError, RankDeficient, ShapeMismatch, ZeroTruth
from .linalg import pseudo_inverse
from .mlp import MlpConfig, build_lmmse, predict_mlp, preprocess, train, windows
from .scm import dft_pilot, generate_trace, ls_estimate, measure, sample_scenario
from .vkf import run_vkf

__all__ = [
    "METHODS",
    "nmse",
    "to_db",
    "aggregate_db",
    "outdated_baseline",
    "extrapolation_baseline",
    "zf_combiner",
    "sum_rate",
    "complexity_estimate",
    "ExperimentConfig",
    "ResultRow",
    "ResultTable",
    "run_experiment",
    "effective_order",
]

METHODS = ("outdated", "extrapolation", "vkf", "mlp", "mlp_raw")
CSV_HEADER = ("method", "snr_db", "slot", "nmse_db", "rate_bps_hz", "wallclock_s")


# --------------------------------------------------------------------------- metrics

def nmse(pred, truth):
    """
    Normalized squared error ``||pred - truth||^2 / ||truth||^2``.

    Both arguments may be single vectors or ``(slots, d)`` stacks, in which
    case one value per row is returned.

    Raises
    ------
    ZeroTruth
        If any reference vector has zero norm.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"prediction {pred.shape} and truth {truth.shape} differ")
    num = np.sum(np.abs(pred - truth) ** 2, axis=-1)
    den = np.sum(np.abs(truth) ** 2, axis=-1)
    if np.any(den == 0):
        raise ZeroTruth("reference channel has zero norm")
    out = num / den
    return float(out) if np.ndim(out) == 0 else out


def to_db(value):
    return 10.0 * np.log10(value)


def aggregate_db(values):
    """Average linear values, then convert to dB."""
    return float(to_db(np.mean(np.asarray(values, dtype=float))))


def outdated_baseline(pilot, y):
    """Latest LS estimate used as the next-slot prediction."""
    return ls_estimate(pilot, y)


def extrapolation_baseline(y_prev, y_curr, pilot):
    """First-order extrapolation ``2 h_n - h_{n-1}`` of the LS estimates."""
    y_prev, y_curr = np.asarray(y_prev), np.asarray(y_curr)
    if y_prev.shape != y_curr.shape:
        raise ShapeMismatch(f"measurement shapes differ: {y_prev.shape} vs {y_curr.shape}")
    return 2.0 * ls_estimate(pilot, y_curr) - ls_estimate(pilot, y_prev)


# --------------------------------------------------------------------------- ZF and rate

def _stack_channels(channels):
    if isinstance(channels, np.ndarray) and channels.ndim == 2:
        return channels.astype(np.complex128), [channels.shape[1]]
    mats = [np.atleast_2d(np.asarray(h, dtype=np.complex128)) for h in channels]
    mats = [m.T if m.shape[0] == 1 and m.shape[1] > 1 else m for m in mats]
    rows = {m.shape[0] for m in mats}
    if len(rows) != 1:
        raise ShapeMismatch(f"channel matrices have different antenna counts {sorted(rows)}")
    return np.concatenate(mats, axis=1), [m.shape[1] for m in mats]


def zf_combiner(predicted):
    """
    Zero-forcing combiner from predicted channels.

    Parameters
    ----------
    predicted : list of array_like, each ``(M_r, N_k)``, or one ``(M_r, N_t)`` array

    Returns
    -------
    numpy.ndarray, shape (M_r, N_t)
        Column ``j`` is the unit-norm combiner ``f`` applied as ``f^T y``
        for stream ``j``; before normalization ``F^T`` is the
        pseudo-inverse of the stacked prediction.

    Raises
    ------
    RankDeficient
        If the stacked prediction does not have full column rank.
    """
    h, _ = _stack_channels(predicted)
    m_r, n_t = h.shape
    if m_r < n_t:
        raise RankDeficient(f"{n_t} streams cannot be separated with {m_r} antennas")
    sv = np.linalg.svd(h, compute_uv=False)
    if sv[0] == 0 or sv[-1] <= sv[0] * max(m_r, n_t) * np.finfo(float).eps:
        raise RankDeficient("predicted channel matrix is rank deficient")
    f_t = pseudo_inverse(h)
    f_t = f_t / np.linalg.norm(f_t, axis=1, keepdims=True)
    return f_t.T


def sum_rate(true_channels, combiner, rho, noise="expectation", rng=None):
    """
    Achievable sum-rate in bit/s/Hz for one slot.

    Parameters
    ----------
    true_channels : list of ``(M_r, N_k)`` arrays, or one ``(M_r, N_t)`` array
    combiner : numpy.ndarray, shape (M_r, N_t)
        Unit-norm columns as returned by :func:`zf_combiner`.
    rho : float
        Linear SNR.
    noise : {"expectation", "realization"}
        ``"expectation"`` uses the mean noise power ``||f||^2 = 1``; the
        other choice draws one unit-variance noise vector per call.
    rng : numpy.random.Generator, optional
        Source for the noise realization.

    Notes
    -----
    Interference from other UEs sums over all of their streams.
    """
    h, sizes = _stack_channels(true_channels)
    f = np.asarray(combiner, dtype=np.complex128)
    if f.shape != h.shape:
        raise ShapeMismatch(f"combiner {f.shape} does not match channels {h.shape}")
    if rho < 0:
        raise ValueError("rho must be non-negative")
    gains = np.abs(f.T @ h) ** 2  # gains[j, i] = |f_j^T h_i|^2
    if noise == "expectation":
        noise_pow = np.sum(np.abs(f) ** 2, axis=0)
    elif noise == "realization":
        rng = np.random.default_rng() if rng is None else rng
        w = (rng.standard_normal(h.shape[0]) + 1j * rng.standard_normal(h.shape[0])) * np.sqrt(0.5)
        noise_pow = np.abs(f.T @ w) ** 2
    else:
        raise ValueError(f"unknown noise mode {noise!r}")
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    sinr = rho * signal / (rho * interference + noise_pow)
    return float(np.sum(np.log2(1.0 + sinr)))


# --------------------------------------------------------------------------- complexity

def complexity_estimate(method, m_r, n, p=0, i=3, l=2, alpha=1, n_epoch=1, n_train=1):
    """
    Leading-term operation counts of the predictors (unit constants).

    Parameters
    ----------
    method : {"vkf", "lmmse", "mlp_train", "mlp_test", "mlp"}
        ``"mlp"`` is the total of pre-processing, training and one test pass.
    m_r, n : int
        BS antennas and UE antennas; the channel dimension is ``m_r * n``.
    p : int
        AR order for the Kalman predictor.
    i, l, alpha : int
        Input order, hidden layers and width factor (``f_l = alpha m_r n``).
    n_epoch, n_train : int
    """
    d = m_r * n
    layer_term = alpha * (i + (l - 1) * alpha + 1) * d**2
    if method == "vkf":
        return (p**3 + 1) * d**3
    if method == "lmmse":
        return d**3
    if method == "mlp_test":
        return layer_term
    if method == "mlp_train":
        return n_epoch * n_train * layer_term
    if method == "mlp":
        return (n_epoch * n_train + 1) * layer_term + d**3
    raise ValueError(f"unknown method {method!r}")


# --------------------------------------------------------------------------- config and results

def _parse_list(text, cast):
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        text = text[1:-1]
    return tuple(cast(x.strip()) for x in text.split(",") if x.strip())


def _parse_order(text):
    text = str(text).strip()
    return "adaptive" if text == "adaptive" else int(text)


def _parse_optional_int(text):
    text = str(text).strip()
    return None if text in ("", "none", "None") else int(text)


def _parse_optional_float(text):
    text = str(text).strip()
    return None if text in ("", "none", "None") else float(text)


def _parse_eps(text):
    text = str(text).strip()
    return "auto" if text == "auto" else _parse_optional_float(text)


def _parse_bool(text):
    text = str(text).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything :func:`run_experiment` needs; serializable as key=value text.

    ``n_samples`` is shared by the autocorrelation fit and the network
    training set. ``ar_order`` and ``input_order`` accept ``"adaptive"``,
    which maps each UE's estimated speed class through :class:`OrderPolicy`.
    ``vkf_lead`` bounds how many slots before the test window the Kalman
    filter is run from (``None`` filters the whole record).
    """

    preset: str = "umi_like"
    bs_rows: int = 4
    bs_cols: int = 4
    n_ue: int = 1
    tau: int = 2
    snr_grid_db: tuple = (20.0,)
    slots: int = 100
    n_samples: int = 512
    ar_order: object = 3
    input_order: object = 3
    methods: tuple = METHODS
    ue_speeds_kmh: tuple = (3.0,)
    trials: int = 1
    seed: int = 0
    eps: object = "auto"
    noise_var: float = 1.0
    vkf_lead: int | None = 200
    mlp_epochs: int = 100
    mlp_hidden_layers: int = 2
    mlp_nodes: int = 512
    mlp_learning_rate: float = 1e-3
    mlp_batch_size: int = 128
    order_slope: float = 0.3
    min_order: int = 1
    max_order: int = 16
    calibration_speeds_kmh: tuple | None = None
    calibration_trials: int = 100
    calibration_overlap: float = 0.25
    sinr_noise: str = "expectation"
    record_wallclock: bool = False

    _CASTS = {
        "preset": str, "bs_rows": int, "bs_cols": int, "n_ue": int, "tau": int,
        "snr_grid_db": lambda s: _parse_list(s, float), "slots": int, "n_samples": int,
        "ar_order": _parse_order, "input_order": _parse_order,
        "methods": lambda s: _parse_list(s, str),
        "ue_speeds_kmh": lambda s: _parse_list(s, float), "trials": int, "seed": int,
        "eps": _parse_eps, "noise_var": float, "vkf_lead": _parse_optional_int,
        "mlp_epochs": int, "mlp_hidden_layers": int, "mlp_nodes": int,
        "mlp_learning_rate": float, "mlp_batch_size": int, "order_slope": float,
        "min_order": int, "max_order": int,
        "calibration_speeds_kmh": lambda s: None if s.strip() in ("", "none") else _parse_list(s, float),
        "calibration_trials": int, "calibration_overlap": float, "sinr_noise": str, "record_wallclock": _parse_bool,
    }

    def __post_init__(self):
        for name in ("snr_grid_db", "methods", "ue_speeds_kmh"):
            value = getattr(self, name)
            if isinstance(value, (str, bytes)):
                raise TypeError(f"{name} must be a sequence")
            object.__setattr__(self, name, tuple(value))
        if self.calibration_speeds_kmh is not None:
            object.__setattr__(self, "calibration_speeds_kmh", tuple(self.calibration_speeds_kmh))
        if not self.snr_grid_db or not self.methods or not self.ue_speeds_kmh:
            raise ValueError("SNR grid, methods and UE speeds must be nonempty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        for name in ("ar_order", "input_order"):
            value = getattr(self, name)
            if value != "adaptive" and (not isinstance(value, int) or value < 1):
                raise ValueError(f"{name} must be a positive integer or 'adaptive'")
        if self.slots < 1 or self.n_samples < 2 or self.trials < 1:
            raise ValueError("slots, n_samples and trials must be positive")
        if self.tau < self.n_ue:
            raise ValueError("pilot length tau must be >= n_ue")
        if self.sinr_noise not in ("expectation", "realization"):
            raise ValueError("sinr_noise must be 'expectation' or 'realization'")

    @property
    def ue_count(self):
        return len(self.ue_speeds_kmh)

    @property
    def order_policy(self):
        return mobility.OrderPolicy(self.order_slope, self.min_order, self.max_order)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif value is None:
                value = "none"
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kwargs = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in cls._CASTS:
                raise ValueError(f"unrecognized config line: {raw!r}")
            kwargs[key] = cls._CASTS[key](value.strip())
        return cls(**kwargs)

    @classmethod
    def parse_value(cls, key, text):
        return cls._CASTS[key](text)


@dataclass(frozen=True)
class ResultRow:
    method: str
    snr_db: float
    slot: object  # int slot offset within the test window, or "all"
    nmse_db: float
    rate_bps_hz: float
    wallclock_s: float = 0.0


def _row_key(row):
    slot = row.slot
    return (row.method, row.snr_db, 1 if slot == "all" else 0, slot if slot != "all" else 0)


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def add(self, row: ResultRow):
        for value in (row.nmse_db, row.rate_bps_hz, row.wallclock_s):
            if not math.isfinite(value):
                raise ValueError(f"non-finite entry in result row {row}")
        self.rows.append(row)

    def sorted_rows(self):
        return sorted(self.rows, key=_row_key)

    def aggregate(self, method, snr_db=None):
        """The ``slot == "all"`` row for `method` (and `snr_db` when several exist)."""
        for row in self.rows:
            if row.method == method and row.slot == "all" and (snr_db is None or row.snr_db == snr_db):
                return row
        raise KeyError(f"no aggregate row for {method!r}")

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.sorted_rows():
            writer.writerow([r.method, f"{r.snr_db:.6g}", r.slot, f"{r.nmse_db:.12g}",
                             f"{r.rate_bps_hz:.12g}", f"{r.wallclock_s:.6f}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        table = cls()
        for rec in reader:
            slot = rec[2] if rec[2] == "all" else int(rec[2])
            table.add(ResultRow(rec[0], float(rec[1]), slot, float(rec[3]), float(rec[4]), float(rec[5])))
        return table


# --------------------------------------------------------------------------- experiment

def _child_seed(*keys):
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


class _UeRun:
    """One UE's trace, measurements and test window for one (trial, SNR) cell."""

    def __init__(self, config, trial, ue, speed, snr_db):
        self.config = config
        self.speed = speed
        geom_seed = _child_seed(config.seed, trial, ue)
        scenario = sample_scenario(geom_seed, preset=config.preset, speed_kmh=speed,
                                   bs_rows=config.bs_rows, bs_cols=config.bs_cols, n_ue=config.n_ue)
        self.n_s = config.n_samples
        total = self.n_s + config.slots + 1
        self.trace = generate_trace(scenario, total)
        rho = 10.0 ** (snr_db / 10.0)
        self.rho = rho
        self.pilot = dft_pilot(config.tau, config.n_ue, rho, m_r=scenario.m_r)
        noise_seed = _child_seed(config.seed, trial, ue, 1, int(round(snr_db * 1000)))
        self.meas = measure(self.trace, self.pilot, noise_seed=noise_seed)
        self.h = self.trace.vectors
        # Predictions target slots n_s .. n_s + slots - 1 from measurements up to n - 1.
        self.targets = np.arange(self.n_s, self.n_s + config.slots)

    @property
    def truth(self):
        return self.h[self.targets]

    def predict(self, method, ar_order, input_order):
        cfg, y, pilot = self.config, self.meas.y, self.pilot
        tgt = self.targets
        if method == "outdated":
            return outdated_baseline(pilot, y[tgt - 1])
        if method == "extrapolation":
            return extrapolation_baseline(y[tgt - 2], y[tgt - 1], pilot)
        if method == "vkf":
            acorr = sample_autocorr(self.meas, ar_order, eps=cfg.eps, n_samples=self.n_s,
                                    noise_var=cfg.noise_var, check_condition=False)
            model = yule_walker(acorr)
            start = 0 if cfg.vkf_lead is None else max(0, self.n_s - cfg.vkf_lead)
            out = run_vkf(model, pilot, y[start:tgt[-1]], acorr=acorr)
            # out.predictions[k] predicts slot start + k + 1.
            return out.predictions[tgt - 1 - start]
        if method in ("mlp", "mlp_raw"):
            mcfg = MlpConfig(input_order=input_order, hidden_layers=cfg.mlp_hidden_layers,
                             nodes_per_layer=cfg.mlp_nodes, learning_rate=cfg.mlp_learning_rate,
                             batch_size=cfg.mlp_batch_size, epochs=cfg.mlp_epochs,
                             seed=_child_seed(cfg.seed, 7, input_order))
            win = windows(y[tgt[0] - input_order:tgt[-1]], input_order)
            if method == "mlp":
                ctx = build_lmmse(pilot, self.meas, n_samples=self.n_s, noise_var=cfg.noise_var)
                model = train(mcfg, preprocess(ctx, y), n_train=self.n_s)
                return predict_mlp(model, ctx, win)
            # Without pre-processing the network sees raw measurements and is
            # trained towards the LS estimate of the next slot.
            model = train(mcfg, y, n_train=self.n_s, targets=ls_estimate(pilot, y))
            model.raw_input = True
            return predict_mlp(model, None, win)
        raise ValueError(f"unknown method {method!r}")


def _resolve_orders(config, runs, snr_db, calibration_cache):
    needs = "adaptive" in (config.ar_order, config.input_order)
    if not needs:
        return [(config.ar_order, config.input_order)] * len(runs)
    speeds = config.calibration_speeds_kmh or tuple(sorted(set(config.ue_speeds_kmh)))
    key = (snr_db, speeds)
    if key not in calibration_cache:
        ref = runs[0]
        pilot = ref.pilot

        def sampler(seed, speed):
            return sample_scenario(_child_seed(config.seed, 99, seed), preset=config.preset,
                                   speed_kmh=speed, bs_rows=config.bs_rows,
                                   bs_cols=config.bs_cols, n_ue=config.n_ue)

        def measure_fn(trace):
            meas = measure(trace, pilot, noise_seed=_child_seed(config.seed, 98, trace.scenario.seed or 0))
            return mobility.snapshot_satc(meas)

        trials = config.calibration_trials if len(speeds) > 1 else 1
        calibration_cache[key] = mobility.calibrate_thresholds(
            speeds, sampler=sampler, trials=trials, measure_fn=measure_fn,
            overlap_quantile=config.calibration_overlap).thresholds
    thresholds = calibration_cache[key]
    policy = config.order_policy
    orders = []
    for run in runs:
        # Speed class from the last two fitting-window measurements.
        speed_class = mobility.estimate_speed_class(run.meas, thresholds, slot=run.n_s - 1)
        order = mobility.order_for_speed(speed_class, policy)
        orders.append((order if config.ar_order == "adaptive" else config.ar_order,
                       order if config.input_order == "adaptive" else config.input_order))
    return orders


def run_experiment(config: ExperimentConfig) -> ResultTable:
    """
    Run every method of `config` over its SNR grid, UEs and trials.

    Per-slot rows average NMSE (linear) over UEs and trials; the ``"all"``
    row averages over the test window too. Sum-rates come from a ZF
    combiner built on the stacked predictions of all UEs.

    Raises
    ------
    ExperimentError
        Wrapping the first method failure; ``partial`` carries the table of
        everything finished before it.
    """
    table = ResultTable()
    calibration_cache = {}
    for snr_db in config.snr_grid_db:
        cells = []
        for trial in range(config.trials):
            runs = [_UeRun(config, trial, k, v, snr_db) for k, v in enumerate(config.ue_speeds_kmh)]
            cells.append((runs, _resolve_orders(config, runs, snr_db, calibration_cache)))
        for method in config.methods:
            started = time.perf_counter()
            try:
                nmse_acc = np.zeros(config.slots)
                rate_acc = np.zeros(config.slots)
                for trial, (runs, orders) in enumerate(cells):
                    preds = [run.predict(method, *orders[k]) for k, run in enumerate(runs)]
                    for run, pred in zip(runs, preds):
                        nmse_acc += nmse(pred, run.truth)
                    rng = np.random.default_rng(_child_seed(config.seed, trial, 55))
                    for s in range(config.slots):
                        est = [p[s].reshape(config.n_ue, -1).T for p in preds]
                        true = [run.truth[s].reshape(config.n_ue, -1).T for run in runs]
                        comb = zf_combiner(est)
                        rate_acc[s] += sum_rate(true, comb, runs[0].rho, noise=config.sinr_noise,
                                                rng=rng)
            except Exception as exc:
                raise ExperimentError(f"method {method!r} failed at SNR {snr_db} dB: {exc}",
                                      method=method, partial=table) from exc
            elapsed = time.perf_counter() - started if config.record_wallclock else 0.0
            per_slot = nmse_acc / (config.trials * config.ue_count)
            rates = rate_acc / config.trials
            for s in range(config.slots):
                table.add(ResultRow(method, float(snr_db), s, float(to_db(per_slot[s])),
                                    float(rates[s]), 0.0))
            table.add(ResultRow(method, float(snr_db), "all", aggregate_db(per_slot),
                                float(np.mean(rates)), float(elapsed)))
    return table


def effective_order(config: ExperimentConfig, speed_kmh, max_order=12, threshold_db=-20.0):
    """
    Smallest AR order whose Kalman prediction NMSE falls below `threshold_db`.

    Orders ``1 .. max_order`` are tried in turn with `config` (its first SNR,
    ``trials`` geometries, one UE at `speed_kmh`). Returns
    ``(order, nmse_by_order)``; `order` is ``max_order + 1`` when no order
    reaches the threshold.
    """
    cfg = config.replace(ue_speeds_kmh=(float(speed_kmh),), methods=("vkf",),
                         snr_grid_db=(config.snr_grid_db[0],))
    history = {}
    for p in range(1, max_order + 1):
        row = run_experiment(cfg.replace(ar_order=p)).aggregate("vkf")
        history[p] = row.nmse_db
        if row.nmse_db < threshold_db:
            return p, history
    return max_order + 1, history

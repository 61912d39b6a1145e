"""
Simplified spatial channel model (SCM) traces and pilot measurements.

Each path is a cluster of ``L_s`` subpaths; every subpath contributes a BS
array phase, a UE array phase, a random initial phase and a Doppler phase
that advances by ``k |v| cos(AoD - theta_v) dt`` per slot. Pathloss and
shadowing are not modelled: traces are globally rescaled so that the mean
squared norm of the vectorized channel equals ``M_r * N``.
"""

from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import BadShape, InvalidScenario, ShapeMismatch
from .linalg import kronecker, vec

__all__ = [
    "SPEED_OF_LIGHT",
    "PRESETS",
    "ScmScenario",
    "ChannelTrace",
    "PilotBlock",
    "MeasurementTrace",
    "generate_trace",
    "sample_scenario",
    "dft_pilot",
    "measure",
    "ls_estimate",
    "kmh_to_ms",
]

SPEED_OF_LIGHT = 299_792_458.0


def kmh_to_ms(speed_kmh):
    return speed_kmh / 3.6


@dataclass(frozen=True, eq=False)
class ScmScenario:
    """
    Geometry, mobility and timing that fully determine a channel trace.

    Angle arrays have shape ``(T, L_s)``: one entry per subpath. The BS is a
    ``bs_rows x bs_cols`` planar array (``bs_rows=1`` gives a ULA); the UE
    is a ULA with ``n_ue`` elements. Element spacings are in metres.
    """

    bs_rows: int
    bs_cols: int
    n_ue: int
    path_powers: np.ndarray
    aoa_deg: np.ndarray
    aod_deg: np.ndarray
    phase: np.ndarray
    speed_kmh: float = 3.0
    travel_angle_deg: float = 0.0
    carrier_hz: float = 2.3e9
    slot_seconds: float = 0.040
    bs_spacing: float | None = None
    ue_spacing: float | None = None
    # Elevation of arrival at the BS; zero reduces the planar array to
    # azimuth-only phases along the horizontal axis.
    eoa_deg: np.ndarray | None = None
    ue_phase_uses_aoa: bool = False
    seed: int | None = None

    def __post_init__(self):
        powers = np.atleast_1d(np.asarray(self.path_powers, dtype=float))
        object.__setattr__(self, "path_powers", powers)
        for name in ("aoa_deg", "aod_deg", "phase"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            object.__setattr__(self, name, arr)
        if self.eoa_deg is None:
            object.__setattr__(self, "eoa_deg", np.zeros_like(self.aoa_deg))
        else:
            arr = np.asarray(self.eoa_deg, dtype=float)
            object.__setattr__(self, "eoa_deg", arr[:, None] if arr.ndim == 1 else arr)
        wavelength = SPEED_OF_LIGHT / self.carrier_hz if self.carrier_hz > 0 else np.nan
        if self.bs_spacing is None:
            object.__setattr__(self, "bs_spacing", 0.5 * wavelength)
        if self.ue_spacing is None:
            object.__setattr__(self, "ue_spacing", 0.5 * wavelength)
        self.validate()

    def validate(self):
        if self.bs_rows < 1 or self.bs_cols < 1 or self.n_ue < 1:
            raise InvalidScenario("array sizes must be >= 1")
        if self.path_powers.size < 1:
            raise InvalidScenario("scenario needs at least one path")
        if np.any(self.path_powers < 0) or not np.all(np.isfinite(self.path_powers)):
            raise InvalidScenario("path powers must be finite and non-negative")
        if not np.any(self.path_powers > 0):
            raise InvalidScenario("total path power is zero")
        shape = (self.path_powers.size, self.aoa_deg.shape[1])
        if shape[1] < 1:
            raise InvalidScenario("need at least one subpath per path")
        for name in ("aoa_deg", "aod_deg", "phase", "eoa_deg"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise InvalidScenario(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidScenario(f"{name} contains non-finite values")
        if not np.isfinite(self.speed_kmh) or self.speed_kmh < 0:
            raise InvalidScenario("speed must be finite and >= 0")
        if self.carrier_hz <= 0 or self.slot_seconds <= 0:
            raise InvalidScenario("carrier frequency and slot duration must be positive")

    @property
    def m_r(self):
        return self.bs_rows * self.bs_cols

    @property
    def path_count(self):
        return self.path_powers.size

    @property
    def subpaths(self):
        return self.aoa_deg.shape[1]

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def wavenumber(self):
        return 2.0 * np.pi / self.wavelength

    def with_speed(self, speed_kmh):
        return replace(self, speed_kmh=float(speed_kmh))

    # key=value serialization -------------------------------------------------

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, np.ndarray):
                shape = "x".join(str(s) for s in value.shape)
                body = ",".join(repr(float(x)) for x in value.ravel())
                lines.append(f"{f.name}={shape}:{body}")
            elif isinstance(value, bool):
                lines.append(f"{f.name}={'true' if value else 'false'}")
            elif value is None:
                lines.append(f"{f.name}=none")
            elif isinstance(value, float):
                lines.append(f"{f.name}={value!r}")
            else:
                lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        raw = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
        kwargs = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            value = raw[f.name]
            if ":" in value and value.split(":", 1)[0].replace("x", "").isdigit():
                shape_txt, body = value.split(":", 1)
                shape = tuple(int(s) for s in shape_txt.split("x"))
                data = np.array([float(x) for x in body.split(",")]) if body else np.empty(0)
                kwargs[f.name] = data.reshape(shape)
            elif value == "none":
                kwargs[f.name] = None
            elif value in ("true", "false"):
                kwargs[f.name] = value == "true"
            elif f.name in ("bs_rows", "bs_cols", "n_ue", "seed"):
                kwargs[f.name] = int(value)
            else:
                kwargs[f.name] = float(value)
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class ChannelTrace:
    """Sequence of ``M_r x N`` channel matrices, one per slot."""

    matrices: np.ndarray
    normalization_gain: float = 1.0
    scenario: ScmScenario | None = None

    @property
    def slots(self):
        return self.matrices.shape[0]

    @property
    def m_r(self):
        return self.matrices.shape[1]

    @property
    def n_ue(self):
        return self.matrices.shape[2]

    @property
    def vectors(self):
        """``(slots, M_r*N)`` array of column-major vectorized channels."""
        return vec(self.matrices)


@dataclass(frozen=True, eq=False)
class PilotBlock:
    """
    DFT pilot matrix ``psi`` (tau x N) and its vectorized measurement operator
    ``psi_bar = sqrt(rho) * kron(psi, I_{M_r})``.
    """

    tau: int
    n_ue: int
    rho: float
    m_r: int
    psi: np.ndarray
    psi_bar: np.ndarray

    @property
    def d(self):
        return self.m_r * self.n_ue

    @property
    def meas_dim(self):
        return self.m_r * self.tau

    def ls_inverse(self):
        """Closed-form pseudo-inverse ``psi_bar^H / (rho tau)`` for orthogonal pilots."""
        if self.rho <= 0:
            return np.zeros((self.d, self.meas_dim), dtype=np.complex128)
        return self.psi_bar.conj().T / (self.rho * self.tau)


@dataclass(frozen=True, eq=False)
class MeasurementTrace:
    pilot: PilotBlock
    y: np.ndarray
    noise_seed: int | None = None

    @property
    def slots(self):
        return self.y.shape[0]


def generate_trace(scenario, slots, normalize=True):
    """
    Generate a channel trace of `slots` consecutive slots.

    Parameters
    ----------
    scenario : ScmScenario
    slots : int
        Number of slots, >= 1.
    normalize : bool
        Rescale so that the sample mean of ``||vec(H_n)||^2`` over the
        trace equals ``M_r * N``.

    Returns
    -------
    ChannelTrace
    """
    if slots < 1:
        raise InvalidScenario("slots must be >= 1")
    scenario.validate()
    k = scenario.wavenumber
    n_paths, n_sub = scenario.path_count, scenario.subpaths
    aoa = np.deg2rad(scenario.aoa_deg).ravel()
    aod = np.deg2rad(scenario.aod_deg).ravel()
    eoa = np.deg2rad(scenario.eoa_deg).ravel()
    phi = scenario.phase.ravel()

    # BS element m sits at column c, row r; vec order runs rows fastest.
    cols, rows = np.meshgrid(np.arange(scenario.bs_cols), np.arange(scenario.bs_rows))
    cols, rows = cols.T.ravel(), rows.T.ravel()
    bs_arg = (
        np.outer(cols, np.sin(aoa) * np.cos(eoa)) + np.outer(rows, np.sin(eoa))
    ) * (k * scenario.bs_spacing)
    a_bs = np.exp(1j * bs_arg)  # (M_r, T*L)

    ue_angle = aoa if scenario.ue_phase_uses_aoa else aod
    a_ue = np.exp(1j * k * scenario.ue_spacing * np.outer(np.arange(scenario.n_ue), np.sin(ue_angle)))

    amp = np.repeat(np.sqrt(scenario.path_powers / n_sub), n_sub) * np.exp(1j * phi)

    speed = kmh_to_ms(scenario.speed_kmh)
    step = k * speed * np.cos(aod - np.deg2rad(scenario.travel_angle_deg)) * scenario.slot_seconds
    n = np.arange(slots)
    if speed == 0.0:
        doppler = np.ones((slots, n_paths * n_sub), dtype=np.complex128)
    else:
        doppler = np.exp(1j * np.outer(n, step))

    coeff = doppler * amp  # (slots, T*L)
    h = np.einsum("ml,sl,ul->smu", a_bs, coeff, a_ue, optimize=True)

    gain = 1.0
    if normalize:
        power = np.mean(np.sum(np.abs(h) ** 2, axis=(1, 2)))
        if power <= 0:
            raise InvalidScenario("scenario produces an all-zero channel")
        gain = float(np.sqrt(scenario.m_r * scenario.n_ue / power))
        h = h * gain
    return ChannelTrace(matrices=h, normalization_gain=gain, scenario=scenario)


@dataclass(frozen=True)
class _Preset:
    bs_rows: int = 8
    bs_cols: int = 8
    n_ue: int = 2
    paths: int = 6
    subpaths: int = 20
    bs_sector_deg: float = 60.0
    ue_sector_deg: float = 180.0
    bs_spread_deg: float = 2.0
    ue_spread_deg: float = 2.0
    elevation_range_deg: tuple = (-15.0, 5.0)
    elevation_spread_deg: float = 1.0
    power_decay: float = 0.5
    carrier_hz: float = 2.3e9
    slot_seconds: float = 0.040


PRESETS = {
    "umi_like": _Preset(),
    # More clusters with a flat power profile: snapshot correlation then
    # separates speeds more reliably across geometries.
    "umi_dense": _Preset(paths=10, power_decay=0.0),
    # Twice the clusters again. Snapshot correlation is then a steadier speed
    # indicator, but the channel is too rich for low-order prediction, so
    # this preset suits mobility studies rather than predictor comparisons.
    "umi_rich": _Preset(paths=20, power_decay=0.0),
}


def sample_scenario(seed, preset="umi_like", speed_kmh=3.0, **overrides):
    """
    Draw a random scenario deterministically from `seed`.

    Path-mean angles are uniform in the preset sectors (BS azimuth
    ``+-bs_sector_deg``, UE ``+-ue_sector_deg``), with Gaussian subpath
    offsets of the configured spread. Subpath phases are uniform on
    ``[0, 2 pi)`` and path powers decay as ``exp(-power_decay * t)``.

    Keyword overrides replace preset fields (``bs_rows``, ``ue_spread_deg``,
    ...) or scenario fields (``travel_angle_deg``, ``ue_phase_uses_aoa``).
    """
    if speed_kmh < 0:
        raise InvalidScenario("speed must be >= 0")
    base = PRESETS[preset] if isinstance(preset, str) else preset
    preset_keys = {f.name for f in fields(_Preset)}
    cfg = replace(base, **{k: v for k, v in overrides.items() if k in preset_keys})
    extra = {k: v for k, v in overrides.items() if k not in preset_keys}

    rng = np.random.default_rng(seed)
    t, l = cfg.paths, cfg.subpaths
    aoa_mean = rng.uniform(-cfg.bs_sector_deg, cfg.bs_sector_deg, size=t)
    aod_mean = rng.uniform(-cfg.ue_sector_deg, cfg.ue_sector_deg, size=t)
    eoa_mean = rng.uniform(*cfg.elevation_range_deg, size=t)
    aoa = aoa_mean[:, None] + cfg.bs_spread_deg * rng.standard_normal((t, l))
    aod = aod_mean[:, None] + cfg.ue_spread_deg * rng.standard_normal((t, l))
    eoa = eoa_mean[:, None] + cfg.elevation_spread_deg * rng.standard_normal((t, l))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(t, l))
    travel = rng.uniform(-180.0, 180.0)
    powers = np.exp(-cfg.power_decay * np.arange(t))
    powers = powers / powers.sum()

    kwargs = dict(
        bs_rows=cfg.bs_rows,
        bs_cols=cfg.bs_cols,
        n_ue=cfg.n_ue,
        path_powers=powers,
        aoa_deg=aoa,
        aod_deg=aod,
        phase=phase,
        eoa_deg=eoa,
        speed_kmh=float(speed_kmh),
        travel_angle_deg=float(travel),
        carrier_hz=cfg.carrier_hz,
        slot_seconds=cfg.slot_seconds,
        seed=seed,
    )
    kwargs.update(extra)
    return ScmScenario(**kwargs)


def _dft_columns(tau, n):
    """First `n` columns of the tau-point DFT matrix, exact at quarter-turn angles."""
    idx = np.outer(np.arange(tau), np.arange(n)) % tau
    angle = -2.0 * np.pi * idx / tau
    re, im = np.cos(angle), np.sin(angle)
    re[np.abs(re) < 1e-15] = 0.0
    im[np.abs(im) < 1e-15] = 0.0
    return re + 1j * im


def dft_pilot(tau, n_ue, rho, m_r=1):
    """
    Orthogonal pilot block built from the tau-point DFT matrix.

    Raises
    ------
    BadShape
        If ``tau < n_ue``.
    """
    if tau < n_ue or n_ue < 1:
        raise BadShape(f"pilot length tau={tau} must be >= N={n_ue} >= 1")
    if rho < 0:
        raise ValueError("rho must be non-negative")
    psi = _dft_columns(tau, n_ue)
    psi_bar = np.sqrt(rho) * kronecker(psi, np.eye(m_r))
    return PilotBlock(tau=tau, n_ue=n_ue, rho=float(rho), m_r=m_r, psi=psi, psi_bar=psi_bar)


def measure(trace, pilot, noise_seed=None, noise_scale=1.0):
    """
    Noisy vectorized pilot observations ``y_n = psi_bar h_n + w_n``.

    `trace` may be a :class:`ChannelTrace` or a ``(slots, d)`` array of
    vectorized channels. Noise is ``CN(0, noise_scale**2 I)``; the default
    unit variance matches the SNR convention where ``rho`` lives in the
    pilot. ``noise_scale=0`` is a test hook for noise-free observations.
    """
    h = trace.vectors if isinstance(trace, ChannelTrace) else np.asarray(trace)
    if isinstance(trace, ChannelTrace) and (trace.n_ue != pilot.n_ue or trace.m_r != pilot.m_r):
        raise ShapeMismatch(
            f"trace is {trace.m_r}x{trace.n_ue}, pilot expects {pilot.m_r}x{pilot.n_ue}"
        )
    if h.ndim != 2 or h.shape[1] != pilot.d:
        raise ShapeMismatch(f"channel vectors have shape {h.shape}, pilot expects d={pilot.d}")
    rng = np.random.default_rng(noise_seed)
    shape = (h.shape[0], pilot.meas_dim)
    w = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(0.5)
    y = h @ pilot.psi_bar.T + noise_scale * w
    return MeasurementTrace(pilot=pilot, y=y, noise_seed=noise_seed)


def ls_estimate(pilot, y):
    """Least-squares channel estimate ``psi_bar^+ y`` (rows of `y` are slots)."""
    y = np.asarray(y)
    if y.shape[-1] != pilot.meas_dim:
        raise ShapeMismatch(f"measurement length {y.shape[-1]} != M_r*tau = {pilot.meas_dim}")
    return y @ pilot.ls_inverse().T

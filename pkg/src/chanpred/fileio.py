"""
Binary containers for traces, measurements, AR models and network models.

All numbers are little-endian. Every file starts with a four-byte magic and
a ``u32`` format version (currently 1). Complex values are stored as
``(real, imag)`` f64 pairs.

* ``SCMT`` channel traces: ``M_r, N, slots`` as ``u32``, then each slot's
  ``vec(H_n)`` (column-major).
* ``SCMY`` measurements: ``M_r, tau, slots`` as ``u32``, then each slot's
  ``M_r * tau`` vector. The pilot parameters live in a ``<file>.meta``
  key=value sidecar.
* ``ARMX`` AR models: ``d, p`` as ``u32``, then ``Phi_1 .. Phi_p`` and
  ``Sigma``, each ``d x d`` in column-major order.
* ``MLPX`` network models: layer count, layer sizes, input order, an
  activation code and an input-kind flag (0 denoised, 1 raw) as ``u32``;
  then, per layer, the weight matrix (row-major, ``out x in``) and the
  bias as f64; then a ``u32`` flag and,
  when set, the Adam step (``u64``) and moment buffers in the same layout.
"""

import os
import struct

import numpy as np

from .arfit import ArModel
from .errors import FormatError
from .linalg import unvec, vec
from .mlp import MlpModel
from .scm import ChannelTrace, MeasurementTrace, dft_pilot

__all__ = [
    "VERSION",
    "write_trace",
    "read_trace",
    "write_measurements",
    "read_measurements",
    "write_ar_model",
    "read_ar_model",
    "write_mlp_model",
    "read_mlp_model",
    "read_key_values",
    "write_key_values",
]

VERSION = 1
_ACTIVATIONS = {None: 0, "relu": 1, "tanh": 2}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATIONS.items()}


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated file (needed {n} bytes at offset {self.pos})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(float)

    def complex(self, count):
        pairs = self.f64(2 * count)
        return pairs[0::2] + 1j * pairs[1::2]

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.path}: {len(self.data) - self.pos} trailing bytes")


def _open(path, magic):
    with open(path, "rb") as fh:
        data = fh.read()
    reader = _Reader(data, path)
    got = reader.take(4)
    if got != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, found {got!r}")
    version = reader.u32()
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    return reader


def _complex_bytes(arr):
    arr = np.asarray(arr, dtype=np.complex128).reshape(-1)
    pairs = np.empty(2 * arr.size, dtype="<f8")
    pairs[0::2] = arr.real
    pairs[1::2] = arr.imag
    return pairs.tobytes()


def _write(path, chunks):
    with open(path, "wb") as fh:
        for chunk in chunks:
            fh.write(chunk)


# --------------------------------------------------------------------------- key=value helpers

def write_key_values(path, items):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in items.items():
            fh.write(f"{key}={value!r}\n" if isinstance(value, float) else f"{key}={value}\n")


def read_key_values(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FormatError(f"{path}: malformed line {raw!r}")
            out[key.strip()] = value.strip()
    return out


# --------------------------------------------------------------------------- traces

def write_trace(path, trace):
    """Write a ``ChannelTrace`` (or an ``(slots, M_r, N)`` array) as SCMT."""
    mats = trace.matrices if isinstance(trace, ChannelTrace) else np.asarray(trace)
    if mats.ndim != 3:
        raise FormatError("trace must have shape (slots, M_r, N)")
    slots, m_r, n = mats.shape
    header = b"SCMT" + struct.pack("<4I", VERSION, m_r, n, slots)
    _write(path, [header, _complex_bytes(vec(mats))])


def read_trace(path) -> ChannelTrace:
    r = _open(path, b"SCMT")
    m_r, n, slots = r.u32(3)
    data = r.complex(slots * m_r * n).reshape(slots, m_r * n)
    r.finish()
    return ChannelTrace(matrices=unvec(data, m_r, n))


# --------------------------------------------------------------------------- measurements

def write_measurements(path, meas: MeasurementTrace):
    """Write SCMY data plus the ``.meta`` sidecar describing the pilot."""
    pilot = meas.pilot
    slots = meas.y.shape[0]
    header = b"SCMY" + struct.pack("<4I", VERSION, pilot.m_r, pilot.tau, slots)
    _write(path, [header, _complex_bytes(meas.y)])
    meta = {"m_r": pilot.m_r, "tau": pilot.tau, "n_ue": pilot.n_ue, "rho": float(pilot.rho),
            "pilot": "dft", "noise_seed": "none" if meas.noise_seed is None else meas.noise_seed}
    write_key_values(str(path) + ".meta", meta)


def read_measurements(path) -> MeasurementTrace:
    r = _open(path, b"SCMY")
    m_r, tau, slots = r.u32(3)
    y = r.complex(slots * m_r * tau).reshape(slots, m_r * tau)
    r.finish()
    meta_path = str(path) + ".meta"
    if not os.path.exists(meta_path):
        raise FormatError(f"{path}: missing pilot sidecar {meta_path}")
    meta = read_key_values(meta_path)
    try:
        if int(meta["m_r"]) != m_r or int(meta["tau"]) != tau:
            raise FormatError(f"{path}: sidecar dimensions disagree with the data header")
        if meta.get("pilot", "dft") != "dft":
            raise FormatError(f"{path}: unsupported pilot kind {meta['pilot']!r}")
        pilot = dft_pilot(tau, int(meta["n_ue"]), float(meta["rho"]), m_r=m_r)
        seed = meta.get("noise_seed", "none")
    except KeyError as exc:
        raise FormatError(f"{meta_path}: missing key {exc.args[0]}") from None
    return MeasurementTrace(pilot=pilot, y=y, noise_seed=None if seed == "none" else int(seed))


# --------------------------------------------------------------------------- AR models

def write_ar_model(path, model: ArModel):
    d, p = model.d, model.order
    chunks = [b"ARMX" + struct.pack("<3I", VERSION, d, p)]
    chunks += [_complex_bytes(np.asarray(c).reshape(-1, order="F")) for c in model.coeffs]
    chunks.append(_complex_bytes(np.asarray(model.innovation_cov).reshape(-1, order="F")))
    _write(path, chunks)


def read_ar_model(path) -> ArModel:
    r = _open(path, b"ARMX")
    d, p = r.u32(2)
    coeffs = np.stack([r.complex(d * d).reshape(d, d, order="F") for _ in range(p)]) if p else \
        np.zeros((0, d, d), dtype=np.complex128)
    sigma = r.complex(d * d).reshape(d, d, order="F")
    r.finish()
    return ArModel(coeffs=coeffs, innovation_cov=sigma)


# --------------------------------------------------------------------------- network models

def _f64_bytes(arr):
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def write_mlp_model(path, model: MlpModel, include_optimizer=True):
    dims = model.dims
    chunks = [b"MLPX", struct.pack("<2I", VERSION, len(dims)), struct.pack(f"<{len(dims)}I", *dims),
              struct.pack("<3I", model.input_order, _ACTIVATIONS[model.activation],
                          1 if model.raw_input else 0)]
    for w, b in zip(model.weights, model.biases):
        chunks += [_f64_bytes(w), _f64_bytes(b)]
    if include_optimizer:
        chunks.append(struct.pack("<IQ", 1, model.step))
        for group in (model.m_w, model.v_w, model.m_b, model.v_b):
            chunks += [_f64_bytes(x) for x in group]
    else:
        chunks.append(struct.pack("<I", 0))
    _write(path, chunks)


def read_mlp_model(path) -> MlpModel:
    r = _open(path, b"MLPX")
    n_dims = r.u32()
    if n_dims < 2:
        raise FormatError(f"{path}: need at least two layer sizes")
    dims = tuple(r.u32(n_dims))
    input_order, act_code, raw = r.u32(3)
    if act_code not in _ACTIVATION_NAMES:
        raise FormatError(f"{path}: unknown activation code {act_code}")
    if raw not in (0, 1):
        raise FormatError(f"{path}: bad input-kind flag {raw}")
    shapes = list(zip(dims[1:], dims[:-1]))

    def read_group():
        return [r.f64(o * i).reshape(o, i) for o, i in shapes]

    weights, biases = [], []
    for o, i in shapes:
        weights.append(r.f64(o * i).reshape(o, i))
        biases.append(r.f64(o))
    has_opt = r.u32()
    model = MlpModel(weights=weights, biases=biases, input_order=input_order,
                     activation=_ACTIVATION_NAMES[act_code], raw_input=bool(raw))
    if has_opt == 1:
        model.step = r.u64()
        model.m_w = read_group()
        model.v_w = read_group()
        model.m_b = [r.f64(o) for o, _ in shapes]
        model.v_b = [r.f64(o) for o, _ in shapes]
    elif has_opt != 0:
        raise FormatError(f"{path}: bad optimizer flag {has_opt}")
    r.finish()
    return model

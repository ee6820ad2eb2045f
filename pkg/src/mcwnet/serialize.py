"""Binary weight files (little-endian float32) with a JSON config sidecar.

Layout: ``MCWW`` magic, u32 version, u32 entry count, then per entry a u16
name length, the UTF-8 name, a u8 rank, ``rank`` u32 dims and the values.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .network import ConfigError, Model, NetworkConfig, param_shapes
from .tensor import Tensor

MAGIC = b"MCWW"
VERSION = 1


class WeightFileError(Exception):
    """Base class; ``code`` is a stable identifier for each failure kind."""

    code = "weight_file"


class BadMagicError(WeightFileError):
    code = "bad_magic"


class UnsupportedVersionError(WeightFileError):
    code = "bad_version"


class TruncatedFileError(WeightFileError):
    code = "truncated"


class WeightShapeError(WeightFileError):
    code = "shape_mismatch"


class EmptyWeightsError(WeightFileError):
    code = "empty"


class SidecarError(WeightFileError):
    code = "bad_config"


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def encode_arrays(arrays: "OrderedDict[str, np.ndarray]") -> bytes:
    if not arrays:
        raise EmptyWeightsError("refusing to write an empty parameter list")
    out = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"file ends inside {what} (offset {self.pos}, need {n} bytes, "
                                     f"{len(self.buf) - self.pos} left)")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_arrays(buf: bytes) -> "OrderedDict[str, np.ndarray]":
    r = _Reader(buf)
    if len(buf) < 4:
        raise TruncatedFileError(f"file is {len(buf)} bytes, too short for a header")
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError(f"not a weight file (magic {buf[:4]!r}, expected {MAGIC!r})")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported weight file version {version}")
    (count,) = r.unpack("<I", "entry count")
    if count == 0:
        raise EmptyWeightsError("weight file holds no parameters")
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    for i in range(count):
        (n,) = r.unpack("<H", f"name length of entry {i}")
        name = r.take(n, f"name of entry {i}").decode("utf-8")
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}I", f"dims of {name}")
        size = int(np.prod(dims, dtype=np.int64))
        vals = np.frombuffer(r.take(4 * size, f"values of {name}"), dtype="<f4")
        arrays[name] = vals.astype(np.float64).reshape(dims)
    if r.pos != len(buf):
        raise WeightFileError(f"{len(buf) - r.pos} unexpected trailing bytes")
    return arrays


def save_weights(model: Model, path: str | Path) -> Path:
    """Write the weights to ``path`` and the config to ``path + '.json'``."""
    path = Path(path)
    arrays = OrderedDict((k, p.data) for k, p in model.params.items())
    data = encode_arrays(arrays)
    path.write_bytes(data)
    sidecar_path(path).write_text(json.dumps(model.config.to_dict(), indent=2) + "\n")
    return path


def load_config(path: str | Path) -> NetworkConfig:
    try:
        return NetworkConfig.from_dict(json.loads(Path(path).read_text()))
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, ConfigError, TypeError, ValueError) as e:
        raise SidecarError(f"invalid config file {path}: {e}") from e


def load_weights(path: str | Path, config: NetworkConfig | None = None) -> Model:
    """Load a model; the config comes from the sidecar unless given.

    The whole file is validated before a model is constructed, so a failure
    never yields a partially loaded model.
    """
    path = Path(path)
    arrays = decode_arrays(path.read_bytes())
    if config is None:
        config = load_config(sidecar_path(path))
    expected = param_shapes(config)
    if list(arrays) != list(expected):
        missing = [k for k in expected if k not in arrays]
        extra = [k for k in arrays if k not in expected]
        raise WeightShapeError(f"parameter names do not match config "
                               f"(missing {missing[:3]}, extra {extra[:3]})")
    for name, shape in expected.items():
        if arrays[name].shape != tuple(shape):
            raise WeightShapeError(f"{name}: file has {arrays[name].shape}, config expects {shape}")
    params = OrderedDict((k, Tensor(v, requires_grad=True, name=k)) for k, v in arrays.items())
    return Model(config, params)

"""
Binary adapter files.

Layout (all integers little-endian)::

    b"RDAD" | version u32 | variant u8 | d2 u32 | layer_count u32
    per layer: name_len u32 | UTF-8 name | theta f32[n] | alpha f32[n]
    crc32 u32 over every preceding byte

with ``n = variant * d2 / 2``. Values are stored as float32 and widened to
float64 on load.
"""

import logging
import struct
import zlib
from pathlib import Path
from typing import Dict, List, Mapping, Tuple, Union

import numpy as np

from .exceptions import AdapterFileError, CorruptFileError
from .road import RoadAdapter, RoadVariant

logger = logging.getLogger(__name__)

MAGIC = b"RDAD"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIBII")
U32 = struct.Struct("<I")
MIN_SIZE = HEADER.size + U32.size

PathLike = Union[str, Path]


def _as_float32(values: np.ndarray, what: str, name: str) -> bytes:
    with np.errstate(over="ignore", invalid="ignore"):
        narrowed = values.astype("<f4")
    if not np.isfinite(narrowed).all():
        raise AdapterFileError(
            f"{name}.{what} has values that are not finite in float32"
        )
    return narrowed.tobytes()


def encode_adapters(layers: Mapping[str, RoadAdapter]) -> bytes:
    """
    Serialize named adapters that share one variant and ``d2``.

    Raises:
        AdapterFileError: If there are no layers, the layers disagree on
            variant or ``d2``, or a value overflows float32
    """
    if not layers:
        raise AdapterFileError("Nothing to encode: no adapter layers given")
    items = list(layers.items())
    first = items[0][1]
    for name, adapter in items:
        if adapter.variant is not first.variant or adapter.d2 != first.d2:
            raise AdapterFileError(
                f"Layer {name!r} is {adapter.variant.name}/d2={adapter.d2}, "
                f"file holds {first.variant.name}/d2={first.d2}"
            )
    parts = [
        HEADER.pack(MAGIC, FORMAT_VERSION, first.variant.value, first.d2, len(items))
    ]
    for name, adapter in items:
        raw_name = name.encode("utf-8")
        parts.append(U32.pack(len(raw_name)))
        parts.append(raw_name)
        parts.append(_as_float32(adapter.theta, "theta", name))
        parts.append(_as_float32(adapter.alpha, "alpha", name))
    body = b"".join(parts)
    return body + U32.pack(zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, data: bytes, start: int, end: int) -> None:
        self.data = data
        self.pos = start
        self.end = end

    def take(self, size: int, field: str) -> bytes:
        if size < 0 or self.pos + size > self.end:
            raise CorruptFileError(
                f"needs {size} bytes at offset {self.pos}, "
                f"file body ends at {self.end}",
                field,
            )
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk


def decode_adapters(data: bytes) -> Dict[str, RoadAdapter]:
    """
    Parse and validate an adapter file image.

    Checks run in order: size, magic, CRC, version, variant, ``d2``, then
    per-layer lengths, and finally that no bytes trail the last layer.

    Raises:
        CorruptFileError: Naming the first field that fails validation
    """
    data = bytes(data)
    if len(data) < MIN_SIZE:
        raise CorruptFileError(
            f"{len(data)} bytes is shorter than the {MIN_SIZE}-byte minimum", "length"
        )
    magic, version, variant_code, d2, layer_count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptFileError(f"expected {MAGIC!r}, found {magic!r}", "magic")
    (stored_crc,) = U32.unpack_from(data, len(data) - U32.size)
    actual_crc = zlib.crc32(data[: -U32.size]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CorruptFileError(
            f"stored {stored_crc:#010x}, computed {actual_crc:#010x}", "crc"
        )
    if version != FORMAT_VERSION:
        raise CorruptFileError(f"unsupported version {version}", "version")
    try:
        variant = RoadVariant(variant_code)
    except ValueError:
        raise CorruptFileError(
            f"unknown variant code {variant_code}", "variant"
        ) from None
    if d2 == 0 or d2 % 2:
        raise CorruptFileError(f"d2={d2} is not a positive even count", "d2")

    n = variant.params_per_block * d2 // 2
    reader = _Reader(data, HEADER.size, len(data) - U32.size)
    min_layer = U32.size + 8 * n
    if layer_count * min_layer > reader.end - reader.pos:
        raise CorruptFileError(
            f"{layer_count} layers cannot fit in the file body", "layer_count"
        )

    layers: Dict[str, RoadAdapter] = {}
    for _ in range(layer_count):
        (name_len,) = U32.unpack(reader.take(U32.size, "name"))
        try:
            name = reader.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorruptFileError(
                f"layer name is not UTF-8 ({e.reason})", "name"
            ) from None
        if name in layers:
            raise CorruptFileError(f"duplicate layer {name!r}", "name")
        theta = np.frombuffer(reader.take(4 * n, "theta"), dtype="<f4")
        alpha = np.frombuffer(reader.take(4 * n, "alpha"), dtype="<f4")
        theta, alpha = theta.astype(np.float64), alpha.astype(np.float64)
        layers[name] = RoadAdapter(variant, d2, theta, alpha)
    if reader.pos != reader.end:
        raise CorruptFileError(
            f"{reader.end - reader.pos} unexpected bytes after the last layer", "length"
        )
    return layers


def save_adapters(path: PathLike, layers: Mapping[str, RoadAdapter]) -> Path:
    path = Path(path)
    payload = encode_adapters(layers)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as e:
        raise AdapterFileError(f"Failed to write {path}: {e}") from e
    logger.info(f"Wrote {len(layers)} adapter layers to {path} ({len(payload)} bytes)")
    return path


def load_adapters(path: PathLike) -> Dict[str, RoadAdapter]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise AdapterFileError(f"Failed to read {path}: {e}") from e
    layers = decode_adapters(data)
    logger.info(f"Loaded {len(layers)} adapter layers from {path}")
    return layers


def save_adapter(path: PathLike, adapter: RoadAdapter, name: str = "layer0") -> Path:
    """Write a single-layer adapter file."""
    return save_adapters(path, {name: adapter})


def load_adapter(path: PathLike) -> RoadAdapter:
    """
    Read a single-layer adapter file.

    Raises:
        AdapterFileError: If the file holds more than one layer
        CorruptFileError: If validation fails
    """
    layers = load_adapters(path)
    if len(layers) != 1:
        raise AdapterFileError(
            f"{path} holds {len(layers)} layers, expected exactly one"
        )
    return next(iter(layers.values()))


def quantize(adapter: RoadAdapter) -> RoadAdapter:
    """The adapter as it reads back from disk: parameters rounded to float32."""
    return RoadAdapter(
        adapter.variant,
        adapter.d2,
        adapter.theta.astype(np.float32).astype(np.float64),
        adapter.alpha.astype(np.float32).astype(np.float64),
    )


def layer_names(layers: Mapping[str, RoadAdapter]) -> List[Tuple[str, int]]:
    return [(name, adapter.num_parameters()) for name, adapter in layers.items()]

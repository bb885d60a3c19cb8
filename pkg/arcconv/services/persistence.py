"""On-disk formats: the binary weight archive and the key=value run config file.

Weight archive layout (all integers little-endian):

    "ARCW" | u32 version (1) | u32 entry count
    per entry: u32 name length | UTF-8 name | u8 dtype code (0 binary32, 1 binary64)
               | u8 rank | u32 extent x rank | raw little-endian scalars
"""

import io
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterator, Mapping, Tuple, Union

import numpy as np
from dotenv import dotenv_values
from pydantic import ValidationError

from arcconv.core.errors import ConfigurationError, FormatError, MissingEntryError
from arcconv.core.tensor import MAX_RANK
from arcconv.models.configs import DType, TrainConfig

logger = logging.getLogger(__name__)

MAGIC = b"ARCW"
VERSION = 1
_LE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise FormatError(f"truncated archive while reading {what}", self.offset)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]


class WeightArchive:
    """Ordered collection of named binary32/binary64 arrays."""

    def __init__(self, entries: Mapping[str, np.ndarray] = None):
        self.entries: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, array in (entries or {}).items():
            self[name] = array

    def __setitem__(self, name: str, array: np.ndarray) -> None:
        array = np.asarray(array)
        DType.from_numpy(array.dtype)
        if array.ndim > MAX_RANK:
            raise ConfigurationError(f"entry '{name}' has rank {array.ndim} > {MAX_RANK}")
        self.entries[name] = array

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self.entries:
            raise MissingEntryError(name)
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<II", VERSION, len(self.entries)))
        for name, array in self.entries.items():
            encoded = name.encode("utf-8")
            code = DType.from_numpy(array.dtype).code
            out.write(struct.pack("<I", len(encoded)))
            out.write(encoded)
            out.write(struct.pack("<BB", code, array.ndim))
            out.write(struct.pack(f"<{array.ndim}I", *array.shape))
            out.write(np.ascontiguousarray(array, dtype=_LE_DTYPES[code]).tobytes())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "WeightArchive":
        reader = _Reader(data)
        if reader.take(4, "magic") != MAGIC:
            raise FormatError("bad magic, expected 'ARCW'", 0)
        version = reader.u32("version")
        if version != VERSION:
            raise FormatError(f"unsupported version {version}", 4)
        count = reader.u32("entry count")
        archive = cls()
        for _ in range(count):
            name_offset = reader.offset
            length = reader.u32("name length")
            try:
                name = reader.take(length, "name").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise FormatError("entry name is not valid UTF-8", name_offset + 4) from exc
            if name in archive:
                raise FormatError(f"duplicate entry '{name}'", name_offset)
            code_offset = reader.offset
            code = reader.u8("dtype code")
            if code not in _LE_DTYPES:
                raise FormatError(f"unknown dtype code {code}", code_offset)
            rank = reader.u8("rank")
            if rank > MAX_RANK:
                raise FormatError(f"rank {rank} exceeds {MAX_RANK}", code_offset + 1)
            shape = tuple(reader.u32("extent") for _ in range(rank))
            dtype = _LE_DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            raw = reader.take(size, f"data of '{name}'")
            native = np.float32 if code == 0 else np.float64
            archive[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(native)
        if reader.offset != len(data):
            raise FormatError("trailing bytes after last entry", reader.offset)
        return archive

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.to_bytes())
        logger.info("saved %d entries to %s", len(self), path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "WeightArchive":
        return cls.from_bytes(Path(path).read_bytes())


def save_state_dict(state: Mapping[str, np.ndarray], path: Union[str, Path]) -> None:
    WeightArchive(state).save(path)


def load_state_dict(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    return dict(WeightArchive.load(path).items())


def kernel_entry(archive: WeightArchive, name: str = None) -> Tuple[str, np.ndarray]:
    """The named entry, or the only entry whose last two extents form a square plane."""
    if name is not None:
        return name, archive[name]
    candidates = [(n, a) for n, a in archive.items() if a.ndim >= 2 and a.shape[-1] == a.shape[-2]]
    if len(candidates) != 1:
        raise MissingEntryError("kernel" if not candidates else "kernel (ambiguous, pass --name)")
    return candidates[0]


class RunConfigFile:
    """Flat key=value text mirroring the `train` flags; unknown keys are rejected."""

    @staticmethod
    def serialize(config: TrainConfig) -> str:
        lines = []
        for key, value in config.model_dump(mode="json").items():
            if isinstance(value, list):
                value = ",".join(value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse(text: str) -> TrainConfig:
        values = dotenv_values(stream=io.StringIO(text))
        missing = [key for key, value in values.items() if value is None]
        if missing:
            raise ConfigurationError(f"keys without a value: {', '.join(missing)}")
        try:
            return TrainConfig.model_validate(values)
        except ValidationError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def load(cls, path: Union[str, Path]) -> TrainConfig:
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def save(cls, config: TrainConfig, path: Union[str, Path]) -> None:
        Path(path).write_text(cls.serialize(config), encoding="utf-8")

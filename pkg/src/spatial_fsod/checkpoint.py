"""Named-tensor checkpoints and their binary file format.

Layout (little endian)::

    b"FSRS"                     magic
    u32                         format version
    u32                         tensor count
    per tensor:
        u64 name length, UTF-8 name bytes
        u64 rows, u64 cols
        rows*cols f64, row-major
    u64 trailer length, UTF-8 JSON trailer  {"phase", "registry", "config"}
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"FSRS"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    phase: str = "init"
    base_ids: list[int] = field(default_factory=list)
    novel_ids: list[int] = field(default_factory=list)
    config: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def active_ids(self) -> list[int]:
        return list(self.base_ids) + list(self.novel_ids)

    def validate(self) -> None:
        if set(self.base_ids) & set(self.novel_ids):
            raise CheckpointError("base and novel category ids overlap")
        main = self.tensors.get("head.main_W")
        if main is not None and main.shape[0] != 1 + len(self.active_ids):
            raise CheckpointError(
                f"registry has {len(self.active_ids)} categories but head.main_W has {main.shape[0]} rows")
        for name, arr in self.tensors.items():
            if arr.ndim != 2 or arr.dtype != np.float64:
                raise CheckpointError(f"tensor {name} must be a 2-D float64 array")

    def copy(self, **changes) -> "Checkpoint":
        fields_ = dict(
            tensors={k: v.copy() for k, v in self.tensors.items()},
            phase=self.phase,
            base_ids=list(self.base_ids),
            novel_ids=list(self.novel_ids),
            config=dict(self.config),
        )
        fields_.update(changes)
        return Checkpoint(**fields_)

    def trailer(self) -> dict:
        return {
            "phase": self.phase,
            "registry": {"base": list(self.base_ids), "novel": list(self.novel_ids)},
            "config": dict(self.config),
        }

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(self.tensors))]
        for name, arr in self.tensors.items():
            raw = name.encode("utf-8")
            rows, cols = arr.shape
            parts.append(struct.pack("<Q", len(raw)))
            parts.append(raw)
            parts.append(struct.pack("<QQ", rows, cols))
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        trailer = json.dumps(self.trailer(), sort_keys=True).encode("utf-8")
        parts.append(struct.pack("<Q", len(trailer)))
        parts.append(trailer)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        try:
            return cls._parse(data)
        except CheckpointError:
            raise
        except (struct.error, ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
            raise CheckpointError(f"corrupt or truncated checkpoint: {exc}") from exc

    @classmethod
    def _parse(cls, data: bytes) -> "Checkpoint":
        if data[:4] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        pos = 4
        version, count = struct.unpack_from("<II", data, pos)
        pos += 8
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            rows, cols = struct.unpack_from("<QQ", data, pos)
            pos += 16
            if name in tensors:
                raise CheckpointError(f"duplicate tensor name {name}")
            nbytes = 8 * rows * cols
            if pos + nbytes > len(data):
                raise CheckpointError(f"tensor {name} runs past the end of the file")
            arr = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos)
            tensors[name] = arr.astype(np.float64).reshape(rows, cols)
            pos += nbytes
        (n,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        trailer = json.loads(data[pos:pos + n].decode("utf-8"))
        if pos + n != len(data):
            raise CheckpointError("trailing bytes after checkpoint trailer")
        return cls(
            tensors=tensors,
            phase=trailer["phase"],
            base_ids=[int(i) for i in trailer["registry"]["base"]],
            novel_ids=[int(i) for i in trailer["registry"]["novel"]],
            config={str(k): str(v) for k, v in trailer["config"].items()},
        )

    def save(self, path: str | Path) -> str:
        data = self.to_bytes()
        Path(path).write_bytes(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"checkpoint not found: {p}")
        return cls.from_bytes(p.read_bytes())

    def equal(self, other: "Checkpoint") -> bool:
        if list(self.tensors) != list(other.tensors):
            return False
        if self.trailer() != other.trailer():
            return False
        return all(np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors)

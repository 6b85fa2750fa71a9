"""
NetworkCheckpoint - immutable snapshot of a network, its Adam state and seed,
with the self-describing HARC container format.

Layout (little-endian):
    magic "HARC" | version u16 | config length u32 | config JSON (UTF-8)
    tensor count u32 | per tensor: name length u16, name, dtype code u8,
    ndim u8, dims u32 x ndim, raw data
Tensor names are prefixed "model." for parameters / buffers and "adam." for
optimizer moments and int64 step counters.
"""
import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch

from base.errors import StoreFormatError
from base.neural import AdamState, HarNet, NetConfig, make_optimizer
from config.settings import BASE_LR, CHECKPOINT_MAGIC, CHECKPOINT_VERSION

logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<4sHI")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i8")}
_CODES = {np.dtype("<f4"): 0, np.dtype("<i8"): 1}


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    arr = t.detach().cpu().numpy()
    if arr.dtype.kind in "iub":
        return arr.astype("<i8")
    return arr.astype("<f4")


@dataclass(frozen=True, eq=False)
class NetworkCheckpoint:
    config: NetConfig
    tensors: "OrderedDict[str, np.ndarray]" = field(repr=False)
    n_classes: Optional[int] = None
    seed: int = 0
    trunk_frozen: bool = False

    # =====================================================
    # MODEL <-> CHECKPOINT
    # =====================================================
    @classmethod
    def from_model(cls, net: HarNet, opt: Optional[AdamState] = None, seed: int = 0) -> "NetworkCheckpoint":
        tensors = OrderedDict()
        for name, value in net.state_dict().items():
            tensors[f"model.{name}"] = _to_numpy(value)
        if opt is not None:
            for name, p in opt.params.items():
                state = opt.optimizer.state.get(p)
                if not state:
                    continue
                tensors[f"adam.step.{name}"] = np.asarray(int(state["step"]), dtype="<i8")
                tensors[f"adam.exp_avg.{name}"] = _to_numpy(state["exp_avg"])
                tensors[f"adam.exp_avg_sq.{name}"] = _to_numpy(state["exp_avg_sq"])
        return cls(
            config=net.cfg, tensors=tensors, n_classes=net.n_classes, seed=int(seed),
            trunk_frozen=net.trunk_frozen,
        )

    def model_state(self) -> Dict[str, torch.Tensor]:
        return {
            name[len("model."):]: torch.from_numpy(value.copy())
            for name, value in self.tensors.items() if name.startswith("model.")
        }

    def to_model(self) -> HarNet:
        net = HarNet(self.config, self.n_classes)
        net.load_state_dict(self.model_state())
        net.freeze_trunk(self.trunk_frozen)
        return net

    def to_optimizer(self, net: HarNet, lr: float = BASE_LR) -> AdamState:
        """Adam over net's trainable parameters, restored from the stored moments"""
        opt = make_optimizer(net, lr)
        for name, p in opt.params.items():
            key = f"adam.step.{name}"
            if key not in self.tensors:
                continue
            opt.optimizer.state[p] = {
                "step": torch.tensor(float(self.tensors[key])),
                "exp_avg": torch.from_numpy(self.tensors[f"adam.exp_avg.{name}"].copy()).to(p.dtype),
                "exp_avg_sq": torch.from_numpy(self.tensors[f"adam.exp_avg_sq.{name}"].copy()).to(p.dtype),
            }
        return opt

    def trunk_bytes(self) -> bytes:
        return b"".join(v.tobytes() for k, v in self.tensors.items() if k.startswith("model.trunk."))

    # =====================================================
    # SERIALIZATION
    # =====================================================
    def to_bytes(self) -> bytes:
        config = json.dumps(
            {
                "net": self.config.model_dump(),
                "n_classes": self.n_classes,
                "seed": self.seed,
                "trunk_frozen": self.trunk_frozen,
            },
            sort_keys=True,
        ).encode("utf-8")
        parts = [_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(config)), config]
        parts.append(struct.pack("<I", len(self.tensors)))
        for name, value in self.tensors.items():
            encoded = name.encode("utf-8")
            parts.append(struct.pack("<H", len(encoded)))
            parts.append(encoded)
            parts.append(struct.pack("<BB", _CODES[value.dtype], value.ndim))
            parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
            parts.append(np.ascontiguousarray(value).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<bytes>") -> "NetworkCheckpoint":
        try:
            magic, version, config_len = _HEADER.unpack_from(data, 0)
        except struct.error:
            raise StoreFormatError(f"{source}: truncated checkpoint header")
        if magic != CHECKPOINT_MAGIC:
            raise StoreFormatError(f"{source}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        if version != CHECKPOINT_VERSION:
            raise StoreFormatError(f"{source}: unsupported checkpoint version {version}")
        offset = _HEADER.size
        try:
            config = json.loads(data[offset:offset + config_len].decode("utf-8"))
            offset += config_len
            (count,) = struct.unpack_from("<I", data, offset)
            offset += 4
            tensors = OrderedDict()
            for _ in range(count):
                (name_len,) = struct.unpack_from("<H", data, offset)
                offset += 2
                name = data[offset:offset + name_len].decode("utf-8")
                offset += name_len
                code, ndim = struct.unpack_from("<BB", data, offset)
                offset += 2
                shape = struct.unpack_from(f"<{ndim}I", data, offset)
                offset += 4 * ndim
                dtype = _DTYPES[code]
                nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
                if offset + nbytes > len(data):
                    raise StoreFormatError(f"{source}: tensor {name!r} is truncated")
                tensors[name] = np.frombuffer(data, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset).reshape(shape).copy()
                offset += nbytes
        except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as e:
            raise StoreFormatError(f"{source}: malformed checkpoint ({e})")
        if offset != len(data):
            raise StoreFormatError(f"{source}: {len(data) - offset} trailing bytes after tensor table")
        for name, value in tensors.items():
            if value.dtype.kind == "f" and not np.isfinite(value).all():
                raise StoreFormatError(f"{source}: tensor {name!r} holds non-finite values")
        return cls(
            config=NetConfig(**config["net"]),
            tensors=tensors,
            n_classes=config["n_classes"],
            seed=config["seed"],
            trunk_frozen=config.get("trunk_frozen", False),
        )

    def save(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        logger.info(f"Checkpoint written to {path}")

    @classmethod
    def load(cls, path: str | Path) -> "NetworkCheckpoint":
        path = Path(path)
        return cls.from_bytes(path.read_bytes(), source=str(path))

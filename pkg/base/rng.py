"""
Counter-based random streams.

Every stream is fully determined by (seed, stream_id, counter): the Philox key
packs the seed into the low 64 bits and the stream id into the high 64 bits,
and the counter starts at zero.
"""
import zlib
from contextlib import contextmanager

import numpy as np
import torch

_MASK64 = (1 << 64) - 1


def stream_id(name: str) -> int:
    """Stable integer id for a named stream"""
    return zlib.crc32(name.encode("utf-8"))


def make_rng(seed: int, stream: int | str = 0, counter: int = 0) -> np.random.Generator:
    if isinstance(stream, str):
        stream = stream_id(stream)
    key = ((int(stream) & _MASK64) << 64) | (int(seed) & _MASK64)
    bit_generator = np.random.Philox(key=key, counter=counter)
    return np.random.Generator(bit_generator)


def spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """n independent child streams, one per worker"""
    seeds = rng.integers(0, 2**63 - 1, size=n)
    return [make_rng(int(s)) for s in seeds]


def torch_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


@contextmanager
def seeded_torch(seed: int):
    """Run a block under a private torch CPU RNG state"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield

"""Named, index-addressable random substreams.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(seed, name)`` and whose counter block is derived from the
replicate index, so replicate ``b`` sees the same numbers no matter how the
work is scheduled.
"""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _name_tag(name):
    return zlib.crc32(name.encode("utf-8"))


def stream_key(seed, name):
    """128-bit Philox key for the named stream of ``seed``."""
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=(_name_tag(name),))
    return ss.generate_state(2, dtype=np.uint64)


def substream(seed, name, index=0):
    """Generator for replicate ``index`` of stream ``name``."""
    key = stream_key(seed, name)
    return _from_key(key, index)


def _from_key(key, index):
    counter = np.zeros(4, dtype=np.uint64)
    counter[2] = np.uint64(int(index) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def replicate_streams(seed, name, count):
    """Yield ``count`` generators, replicate ``b`` keyed by ``b``."""
    key = stream_key(seed, name)
    for b in range(count):
        yield _from_key(key, b)


def derive_seed(master_seed, *indices):
    """A 63-bit seed reconstructible from ``master_seed`` and integer indices."""
    ss = np.random.SeedSequence(int(master_seed) & _MASK64, spawn_key=tuple(int(i) for i in indices))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return ((int(hi) << 32) | int(lo)) & ((1 << 63) - 1)

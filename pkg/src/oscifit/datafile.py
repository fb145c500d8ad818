"""Dataset generation and the little-endian ``OSC1`` binary container.

Layout::

    magic "OSC1" | version u16 | T u32 | count u64 | kind-mask u8
    count x [kind u8 | Fc, phi, tau, Fm, Im, sigma f64 | offset, scale f64 |
             noisy f32 x T | clean f32 x T]

Series are stored in physical units; ``offset``/``scale`` are the per-sample
min-max map computed on the float64 noisy series before storage.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import sub_stream
from .signalgen import (
    LATENT_FULL,
    LatentParams,
    NormMeta,
    ProcessKind,
    Ranges,
    SignalPair,
    TimeGrid,
    encode_latents,
    generate,
    sample_latents,
)

__all__ = ["Dataset", "make_dataset", "generate_dataset", "read_dataset", "write_dataset"]

MAGIC = b"OSC1"
VERSION = 1
_HEADER = struct.Struct("<4sHIQB")


def _record_dtype(T):
    return np.dtype(
        [
            ("kind", "u1"),
            ("latents", "<f8", (6,)),
            ("norm", "<f8", (2,)),
            ("noisy", "<f4", (T,)),
            ("clean", "<f4", (T,)),
        ]
    )


def kind_mask(kinds):
    mask = 0
    for k in kinds:
        mask |= 1 << int(ProcessKind.parse(k))
    return mask


def kinds_from_mask(mask):
    return [k for k in ProcessKind if mask & (1 << int(k))]


@dataclass
class Dataset:
    T: int
    kind_mask: int
    records: np.ndarray

    def __len__(self):
        return len(self.records)

    @property
    def kinds(self):
        return self.records["kind"]

    @property
    def latents(self):
        return self.records["latents"]

    @property
    def noisy(self):
        return self.records["noisy"]

    @property
    def clean(self):
        return self.records["clean"]

    def params(self, i):
        return LatentParams.from_array(self.records["latents"][i], int(self.records["kind"][i]))

    def meta(self, i):
        off, scale = self.records["norm"][i]
        return NormMeta(float(off), float(scale))

    def pair(self, i):
        rec = self.records[i]
        return SignalPair(
            latents=self.params(i),
            clean=rec["clean"].astype(np.float64),
            noisy=rec["noisy"].astype(np.float64),
            norm=self.meta(i),
        )

    def _normalized(self, field, dtype):
        off = self.records["norm"][:, :1]
        scale = self.records["norm"][:, 1:]
        return ((self.records[field].astype(np.float64) - off) / scale).astype(dtype)

    def inputs(self, dtype=np.float32):
        """Noisy series mapped by each sample's NormMeta."""
        return self._normalized("noisy", dtype)

    def signal_targets(self, dtype=np.float32):
        """Clean series under the same map as their noisy companions."""
        return self._normalized("clean", dtype)

    def latent_targets(self, names=LATENT_FULL, dtype=np.float32, ranges=None):
        out = np.empty((len(self), len(names)))
        for i in range(len(self)):
            out[i] = encode_latents(self.params(i), self.T, names, strict=False, ranges=ranges)
        return out.astype(dtype)

    def subset(self, index):
        return Dataset(self.T, self.kind_mask, self.records[index])

    def to_bytes(self):
        header = _HEADER.pack(MAGIC, VERSION, self.T, len(self), self.kind_mask)
        return header + self.records.tobytes()


def write_dataset(path, ds):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(ds.to_bytes())
    return path


def read_dataset(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, T, count, mask = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    dtype = _record_dtype(T)
    body = raw[_HEADER.size:]
    if len(body) != count * dtype.itemsize:
        raise ValueError(f"{path}: expected {count} records of {dtype.itemsize} bytes")
    records = np.frombuffer(body, dtype=dtype).copy()
    return Dataset(T, mask, records)


def generate_sample(kind_choices, index, grid, master_seed, envelope_sidebands=True, ranges=None):
    """Sample ``index`` of a dataset; depends only on (master_seed, index)."""
    rng = sub_stream(master_seed, index)
    kind = kind_choices[int(rng.integers(len(kind_choices)))]
    p = sample_latents(kind, rng, grid.T, ranges)
    return generate(grid, p, noise=rng, envelope_sidebands=envelope_sidebands, ranges=ranges)


def pairs_to_dataset(pairs, T, kinds):
    records = np.zeros(len(pairs), dtype=_record_dtype(T))
    for i, pair in enumerate(pairs):
        rec = records[i]
        rec["kind"] = int(pair.latents.kind)
        rec["latents"] = pair.latents.as_array()
        rec["norm"] = (pair.norm.offset, pair.norm.scale)
        rec["noisy"] = pair.noisy
        rec["clean"] = pair.clean
    return Dataset(T, kind_mask(kinds), records)


def generate_dataset(kinds, n, grid, master_seed, envelope_sidebands=True, fm_range=None):
    """Generate ``n`` samples in memory, kinds drawn uniformly from ``kinds``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    choices = sorted({ProcessKind.parse(k) for k in kinds})
    if not choices:
        raise ValueError("kinds must not be empty")
    if isinstance(grid, int):
        grid = TimeGrid(grid)
    ranges = Ranges.for_length(grid.T, fm_range)
    pairs = [
        generate_sample(choices, i, grid, master_seed, envelope_sidebands, ranges) for i in range(n)
    ]
    return pairs_to_dataset(pairs, grid.T, choices)


def make_dataset(kinds, n, grid, master_seed, path=None, envelope_sidebands=True, fm_range=None):
    ds = generate_dataset(kinds, n, grid, master_seed, envelope_sidebands, fm_range)
    if path is not None:
        write_dataset(path, ds)
    return ds

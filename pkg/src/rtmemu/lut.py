"""Lookup-table baseline: dense oracle grid plus multilinear interpolation.

The table has five axes (mu0, tau550, alpha, wvap, rho_s) and stores one TOA
reflectance per knot combination and channel, so memory grows as the product
of the knot counts.

Binary file layout (all little-endian)::

    offset  type            content
    0       8 bytes         magic b"RTMLUT1\\0"
    8       uint32          number of axes D (always 5)
    12      uint32          channel count k
    16      uint32[D]       knot count per axis, n_0 .. n_{D-1}
    ...     float64[sum n]  knots, axis by axis
    ...     float64[k]      channel wavelengths (um)
    ...     float64[...]    values, C order over (n_0, ..., n_{D-1}, k)
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .oracle import STATE_FIELDS, OracleConfig, WavelengthGrid, toa_reflectance_batch
from .sampling import StateRanges

MAGIC = b"RTMLUT1\0"
AXES = (*STATE_FIELDS, "rho_s")
DEFAULT_MEMORY_CAP = 1 << 30


class LutTooLarge(MemoryError):
    def __init__(self, nbytes: int, cap: int):
        super().__init__(f"lookup table needs {nbytes} bytes, cap is {cap}")
        self.nbytes = nbytes
        self.cap = cap


class ExtrapolationError(ValueError):
    pass


class LutFormatError(ValueError):
    pass


@dataclass
class LookupTable:
    axes: list[np.ndarray]
    values: np.ndarray
    grid: WavelengthGrid
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.axes) != len(AXES):
            raise ValueError(f"need {len(AXES)} axes")
        for name, ax in zip(AXES, self.axes):
            if ax.size < 2 or np.any(np.diff(ax) <= 0):
                raise ValueError(f"axis {name}: need >= 2 strictly increasing knots")
        shape = tuple(ax.size for ax in self.axes) + (self.grid.k,)
        if self.values.shape != shape:
            raise ValueError(f"values shape {self.values.shape} != {shape}")

    @property
    def k(self) -> int:
        return self.grid.k

    @property
    def n_spectra(self) -> int:
        return int(np.prod([ax.size for ax in self.axes]))

    @property
    def nbytes(self) -> int:
        return int(self.values.nbytes)


def knots(lo: float, hi: float, n: int) -> np.ndarray:
    # i / (n - 1) keeps nested refinements (n -> 2n - 1) bitwise identical at shared knots
    return np.array([lo + (hi - lo) * (i / (n - 1)) for i in range(n)])


def build_lut(ranges: StateRanges, knots_per_axis, grid: WavelengthGrid,
              cfg: OracleConfig | None = None, memory_cap: int = DEFAULT_MEMORY_CAP) -> LookupTable:
    counts = [int(knots_per_axis)] * len(AXES) if np.isscalar(knots_per_axis) else [int(c) for c in knots_per_axis]
    if len(counts) != len(AXES) or min(counts) < 2:
        raise ValueError(f"need {len(AXES)} knot counts, each >= 2; got {knots_per_axis}")
    nbytes = int(np.prod(counts, dtype=object)) * grid.k * 8
    if nbytes > memory_cap:
        raise LutTooLarge(nbytes, memory_cap)
    axes = [knots(*getattr(ranges, name), c) for name, c in zip(AXES, counts)]
    for name, ax in zip(AXES, axes):
        if np.any(np.diff(ax) <= 0):
            raise ValueError(f"axis {name}: range is degenerate")

    start = time.perf_counter()
    mesh = np.meshgrid(*axes, indexing="ij")
    cols = [m[..., None] for m in mesh]
    values = toa_reflectance_batch(*cols[:4], cols[4], grid.lambdas, cfg)
    info = {
        "precompute_spectra": int(np.prod(counts)),
        "memory_bytes": int(values.nbytes),
        "precompute_seconds": time.perf_counter() - start,
        "knots_per_axis": counts,
    }
    return LookupTable(axes, np.ascontiguousarray(values), grid, info)


def _locate(ax: np.ndarray, x: np.ndarray, name: str):
    if np.any(x < ax[0]) or np.any(x > ax[-1]) or np.any(np.isnan(x)):
        bad = x[(x < ax[0]) | (x > ax[-1]) | np.isnan(x)].ravel()[0]
        raise ExtrapolationError(f"{name}={bad} outside table range [{ax[0]}, {ax[-1]}]")
    idx = np.clip(np.searchsorted(ax, x, side="right") - 1, 0, ax.size - 2)
    frac = (x - ax[idx]) / (ax[idx + 1] - ax[idx])
    return idx, frac


def interpolate_batch(lut: LookupTable, states, rho_s) -> np.ndarray:
    """(n, 4) states and (n, k) reflectances -> (n, k) interpolated TOA reflectance."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    rho_s = np.atleast_2d(np.asarray(rho_s, dtype=float))
    n = states.shape[0]
    if rho_s.shape != (n, lut.k):
        raise ValueError(f"reflectance shape {rho_s.shape} != ({n}, {lut.k})")
    located = [_locate(lut.axes[d], np.broadcast_to(states[:, d:d + 1], (n, lut.k)), AXES[d])
               for d in range(4)]
    located.append(_locate(lut.axes[4], rho_s, "rho_s"))
    ch = np.arange(lut.k)[None, :]
    out = np.zeros((n, lut.k))
    for corner in product((0, 1), repeat=len(AXES)):
        w = np.ones((n, lut.k))
        index = []
        for bit, (idx, frac) in zip(corner, located):
            w = w * (frac if bit else 1.0 - frac)
            index.append(idx + bit)
        out += w * lut.values[(*index, ch)]
    return out


def interpolate(lut: LookupTable, state, rho_s_i: float, channel: int) -> float:
    """Multilinear interpolation over the 32 corners enclosing one query."""
    if not 0 <= channel < lut.k:
        raise IndexError(f"channel {channel} out of range for k={lut.k}")
    x = state.as_array() if hasattr(state, "as_array") else np.asarray(state, dtype=float)
    point = np.append(x, rho_s_i)
    located = [_locate(ax, np.array(v), name) for ax, v, name in zip(lut.axes, point, AXES)]
    total = 0.0
    for corner in product((0, 1), repeat=len(AXES)):
        w = 1.0
        index = []
        for bit, (idx, frac) in zip(corner, located):
            w *= float(frac) if bit else 1.0 - float(frac)
            index.append(int(idx) + bit)
        total += w * lut.values[(*index, channel)]
    return float(total)


def to_bytes(lut: LookupTable) -> bytes:
    sizes = [ax.size for ax in lut.axes]
    header = MAGIC + struct.pack(f"<II{len(sizes)}I", len(sizes), lut.k, *sizes)
    body = [np.asarray(ax, dtype="<f8").tobytes() for ax in lut.axes]
    body.append(np.asarray(lut.grid.lambdas, dtype="<f8").tobytes())
    body.append(np.ascontiguousarray(lut.values, dtype="<f8").tobytes())
    return header + b"".join(body)


def from_bytes(data: bytes) -> LookupTable:
    if data[:8] != MAGIC:
        raise LutFormatError("not a lookup-table file (bad magic)")
    try:
        n_axes, k = struct.unpack_from("<II", data, 8)
        if n_axes != len(AXES):
            raise LutFormatError(f"expected {len(AXES)} axes, file has {n_axes}")
        sizes = struct.unpack_from(f"<{n_axes}I", data, 16)
    except struct.error as exc:
        raise LutFormatError(f"truncated header: {exc}") from None
    pos = 16 + 4 * n_axes
    n_vals = int(np.prod(sizes)) * k
    expected = pos + 8 * (sum(sizes) + k + n_vals)
    if len(data) != expected:
        raise LutFormatError(f"file has {len(data)} bytes, layout implies {expected}")
    flat = np.frombuffer(data, dtype="<f8", offset=pos).astype(float)
    axes, off = [], 0
    for s in sizes:
        axes.append(flat[off:off + s].copy())
        off += s
    grid = WavelengthGrid(flat[off:off + k].copy())
    off += k
    values = flat[off:].reshape(*sizes, k).copy()
    return LookupTable(axes, values, grid)


def save(lut: LookupTable, path):
    Path(path).write_bytes(to_bytes(lut))


def load(path) -> LookupTable:
    return from_bytes(Path(path).read_bytes())

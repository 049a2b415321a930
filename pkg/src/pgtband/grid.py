"""Dense label grids, binary masks and the LGRID v1 on-disk format.

A grid is a 2D or 3D array of unsigned 16-bit label ids (0 = background)
together with a physical voxel spacing and a declared maximum label.

LGRID v1 layout::

    LGRID 1 <ndim> <d0> <d1> [<d2>] <max_label>\\n
    [SPACING <s0> <s1> [<s2>]\\n]
    DATA\\n
    <prod(dims) little-endian uint16, row-major>

The writer emits the SPACING line only when some spacing differs from 1.0,
so ``write_lgrid(read_lgrid(b)) == b`` holds for every file the writer
produced.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAGIC = b"LGRID"
VERSION = 1
MAX_LABEL = 65535


class LgridError(ValueError):
    """Parse error in an LGRID byte stream; ``field`` names the offending part."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _check_spacing(spacing, ndim):
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != ndim:
        raise ValueError(f"spacing has {len(spacing)} entries for {ndim} axes")
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"spacing must be strictly positive, got {spacing}")
    return spacing


@dataclass(frozen=True, eq=False)
class LabelGrid:
    """Immutable label field. ``voxels`` has shape ``dims`` and dtype uint16."""

    voxels: np.ndarray
    spacing: tuple[float, ...] = ()
    max_label: int = -1

    def __post_init__(self):
        vox = np.asarray(self.voxels)
        if vox.ndim not in (2, 3):
            raise ValueError(f"grids must have 2 or 3 axes, got {vox.ndim}")
        if min(vox.shape) < 1:
            raise ValueError(f"every extent must be >= 1, got {vox.shape}")
        if vox.dtype.kind not in "iub":
            raise TypeError(f"label ids must be integers, got dtype {vox.dtype}")
        if vox.size and (vox.min() < 0 or vox.max() > MAX_LABEL):
            raise ValueError("label ids must lie in [0, 65535]")
        vox = _readonly(np.array(vox, dtype=np.uint16, order="C"))
        spacing = self.spacing or (1.0,) * vox.ndim
        spacing = _check_spacing(spacing, vox.ndim)
        top = int(vox.max())
        max_label = top if self.max_label < 0 else int(self.max_label)
        if max_label > MAX_LABEL:
            raise ValueError(f"max_label {max_label} exceeds {MAX_LABEL}")
        if top > max_label:
            raise ValueError(f"label {top} exceeds declared max_label {max_label}")
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "max_label", max_label)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.voxels.shape)

    @property
    def ndim(self) -> int:
        return self.voxels.ndim

    @property
    def size(self) -> int:
        return int(self.voxels.size)

    def labels(self) -> np.ndarray:
        """Sorted label ids actually present (including 0 if present)."""
        return np.unique(self.voxels)

    def __eq__(self, other):
        if not isinstance(other, LabelGrid):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.max_label == other.max_label
            and bool(np.array_equal(self.voxels, other.voxels))
        )

    __hash__ = None

    def __repr__(self):
        return f"LabelGrid(dims={self.dims}, spacing={self.spacing}, max_label={self.max_label})"


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray
    spacing: tuple[float, ...] = ()

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim not in (2, 3):
            raise ValueError(f"masks must have 2 or 3 axes, got {bits.ndim}")
        bits = _readonly(np.array(bits, dtype=bool, order="C"))
        spacing = _check_spacing(self.spacing or (1.0,) * bits.ndim, bits.ndim)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.bits.shape)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and bool(np.array_equal(self.bits, other.bits))
        )

    __hash__ = None

    def __repr__(self):
        return f"BinaryMask(dims={self.dims}, spacing={self.spacing}, count={self.count})"


# An instance map is a label grid whose nonzero ids are instances.
InstanceMap = LabelGrid


def binarize(grid: LabelGrid, label: int) -> BinaryMask:
    if not 0 <= label <= grid.max_label:
        raise ValueError(
            f"label absent from grid's declared range: {label} not in [0, {grid.max_label}]"
        )
    return BinaryMask(grid.voxels == label, grid.spacing)


def foreground(grid: LabelGrid) -> BinaryMask:
    """Mask of every nonzero label."""
    return BinaryMask(grid.voxels != 0, grid.spacing)


def as_grid(mask: BinaryMask) -> LabelGrid:
    return LabelGrid(mask.bits.astype(np.uint16), mask.spacing, max_label=1)


def check_same_dims(a, b) -> None:
    if a.dims != b.dims:
        raise ValueError(f"dimension mismatch: {a.dims} vs {b.dims}")


def _format_float(x: float) -> str:
    return np.format_float_positional(x, unique=True, trim="0")


def write_lgrid(grid: LabelGrid) -> bytes:
    head = [b"LGRID", b"1", str(grid.ndim).encode()]
    head += [str(d).encode() for d in grid.dims]
    head.append(str(grid.max_label).encode())
    out = [b" ".join(head), b"\n"]
    if any(s != 1.0 for s in grid.spacing):
        out.append(b"SPACING " + " ".join(_format_float(s) for s in grid.spacing).encode() + b"\n")
    out.append(b"DATA\n")
    out.append(grid.voxels.astype("<u2", copy=False).tobytes(order="C"))
    return b"".join(out)


def _next_line(data: bytes, pos: int, what: str) -> tuple[str, int]:
    end = data.find(b"\n", pos)
    if end < 0:
        raise LgridError(what, "unterminated header line")
    try:
        return data[pos:end].decode("ascii"), end + 1
    except UnicodeDecodeError:
        raise LgridError(what, "header is not ASCII") from None


def _parse_int(token: str, what: str) -> int:
    if not token.isdigit():
        raise LgridError(what, f"expected a non-negative integer, got {token!r}")
    return int(token)


def read_lgrid(data: bytes) -> LabelGrid:
    if not data.startswith(MAGIC + b" "):
        raise LgridError("magic", f"expected {MAGIC!r} header")
    line, pos = _next_line(data, 0, "header")
    tokens = line.split(" ")
    if len(tokens) < 3:
        raise LgridError("header", f"truncated header {line!r}")
    version = _parse_int(tokens[1], "version")
    if version != VERSION:
        raise LgridError("version", f"unsupported version {version}")
    ndim = _parse_int(tokens[2], "ndim")
    if ndim not in (2, 3):
        raise LgridError("ndim", f"dimension count must be 2 or 3, got {ndim}")
    if len(tokens) != 3 + ndim + 1:
        raise LgridError("dims", f"expected {ndim} extents and max_label in {line!r}")
    dims = tuple(_parse_int(t, "dims") for t in tokens[3 : 3 + ndim])
    if min(dims) < 1:
        raise LgridError("dims", f"extents must be >= 1, got {dims}")
    max_label = _parse_int(tokens[-1], "max_label")
    if max_label > MAX_LABEL:
        raise LgridError("max_label", f"{max_label} exceeds {MAX_LABEL}")

    line, pos = _next_line(data, pos, "spacing")
    spacing: tuple[float, ...] = (1.0,) * ndim
    if line.startswith("SPACING"):
        parts = line.split(" ")[1:]
        if len(parts) != ndim:
            raise LgridError("spacing", f"expected {ndim} values, got {len(parts)}")
        try:
            spacing = tuple(float(p) for p in parts)
        except ValueError:
            raise LgridError("spacing", f"not decimal numbers: {parts}") from None
        if not all(np.isfinite(s) and s > 0 for s in spacing):
            raise LgridError("spacing", f"must be strictly positive, got {spacing}")
        line, pos = _next_line(data, pos, "data")
    if line != "DATA":
        raise LgridError("data", f"expected DATA marker, got {line!r}")

    n = int(np.prod(dims))
    payload = data[pos:]
    if len(payload) != 2 * n:
        raise LgridError(
            "payload", f"length mismatch: expected {n} values ({2 * n} bytes), got {len(payload)} bytes"
        )
    vox = np.frombuffer(payload, dtype="<u2").reshape(dims)
    if n and int(vox.max()) > max_label:
        raise LgridError("max_label", f"payload label {int(vox.max())} exceeds declared {max_label}")
    return LabelGrid(vox, spacing, max_label)


def load(path) -> LabelGrid:
    with open(path, "rb") as fh:
        return read_lgrid(fh.read())


def save(grid: LabelGrid, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_lgrid(grid))


def grid_from_list(rows: Sequence, spacing=(), max_label: int = -1) -> LabelGrid:
    return LabelGrid(np.asarray(rows, dtype=np.int64), tuple(spacing), max_label)

"""Voxel microstructure data model: volumes, orientation palettes, color
quantization, slicing and `.pcv` persistence.

Conventions
-----------
A volume is a dense grid of 3-channel orientation colors in [-1, 1], stored
as a float32 array of shape ``(nx, ny, nz, 3)``.  Memory and file order is
channel-fastest, then z, then y, then x slowest (C order of that shape), so
independent implementations can interoperate byte-for-byte.

The `.pcv` file format is a single JSON header line terminated by ``\\n``
followed by the raw little-endian float32 payload in the order above.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError

PCV_MAGIC = "PCV1"
DEFAULT_VOXEL_SIZE_UM = 0.5
DEFAULT_PALETTE_ID = "corners8-axis2-v1"

_AXIS_INDEX = {"x": 0, "y": 1, "z": 2, 0: 0, 1: 1, 2: 2}


@dataclass(frozen=True)
class VoxelVolume:
    """Immutable 3-channel orientation-color volume.

    `data` has shape (nx, ny, nz, 3) with values in [-1, 1].  `voxel_size_um`
    is the physical edge length of one voxel in micrometers.
    """

    data: np.ndarray
    voxel_size_um: float = DEFAULT_VOXEL_SIZE_UM
    palette_id: str = DEFAULT_PALETTE_ID
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 4 or arr.shape[3] != 3:
            raise DataError(f"volume data must have shape (nx, ny, nz, 3), got {arr.shape}")
        if min(arr.shape[:3]) < 1:
            raise DataError(f"volume extents must be positive, got {arr.shape[:3]}")
        if not np.all(np.isfinite(arr)):
            raise DataError("volume contains non-finite values")
        if arr.min() < -1.0 or arr.max() > 1.0:
            raise DataError("volume values must lie in [-1, 1]")
        if not self.voxel_size_um > 0:
            raise ConfigError(f"voxel_size_um must be > 0, got {self.voxel_size_um}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def total_volume_um3(self) -> float:
        return self.n_voxels * self.voxel_size_um ** 3


@dataclass(frozen=True)
class OrientationPalette:
    """Fixed set of orientation colors plus per-color Bunge Euler angles.

    Colors are K rows in [-1, 1]^3, pairwise at least 0.2 apart so nearest-
    color quantization is unambiguous in practice.  Euler angles (radians)
    are carried along purely for mesh/orientation export.
    """

    colors: np.ndarray
    euler_angles: np.ndarray
    palette_id: str = DEFAULT_PALETTE_ID

    def __post_init__(self):
        colors = np.asarray(self.colors, dtype=np.float64)
        eulers = np.asarray(self.euler_angles, dtype=np.float64)
        if colors.ndim != 2 or colors.shape[1] != 3 or len(colors) == 0:
            raise ConfigError(f"palette colors must be a non-empty (K, 3) array, got {colors.shape}")
        if eulers.shape != colors.shape:
            raise ConfigError("palette needs one Euler angle triplet per color")
        if colors.min() < -1.0 or colors.max() > 1.0:
            raise ConfigError("palette colors must lie in [-1, 1]")
        if len(colors) > 1:
            d2 = np.sum((colors[:, None, :] - colors[None, :, :]) ** 2, axis=-1)
            np.fill_diagonal(d2, np.inf)
            if d2.min() <= 0.2 ** 2:
                raise ConfigError("palette colors closer than 0.2; quantization would be ambiguous")
        colors.setflags(write=False)
        eulers.setflags(write=False)
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "euler_angles", eulers)

    def __len__(self) -> int:
        return len(self.colors)

    def save(self, path):
        entries = [
            {"color": [float(c) for c in col], "euler": [float(e) for e in eul]}
            for col, eul in zip(self.colors, self.euler_angles)
        ]
        Path(path).write_text(json.dumps({"palette_id": self.palette_id, "entries": entries}, indent=2))

    @classmethod
    def load(cls, path) -> "OrientationPalette":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read palette file {path}: {exc}") from exc
        if isinstance(doc, list):  # bare list-of-entries form
            doc = {"palette_id": Path(path).stem, "entries": doc}
        entries = doc.get("entries", [])
        colors = np.array([e["color"] for e in entries], dtype=np.float64)
        eulers = np.array([e["euler"] for e in entries], dtype=np.float64)
        return cls(colors, eulers, palette_id=doc.get("palette_id", Path(path).stem))


def default_palette() -> OrientationPalette:
    """The shipped 10-color palette: the 8 corners of the [-1,1]^3 color cube
    plus the two x-axis face centers."""
    path = Path(__file__).parent / "palettes" / "default-10.json"
    return OrientationPalette.load(path)


@dataclass(frozen=True)
class GrainLabelVolume:
    """Per-voxel grain identifiers: ids 0..n_grains-1, -1 for voxels removed
    by the segmentation size threshold."""

    labels: np.ndarray
    n_grains: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int32)
        if labels.ndim != 3:
            raise DataError(f"labels must be 3D, got shape {labels.shape}")
        if labels.min() < -1:
            raise DataError("labels below -1 are not allowed")
        if labels.max() >= self.n_grains:
            raise DataError(f"label {labels.max()} out of range for n_grains={self.n_grains}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape


@dataclass
class StructureRecord:
    """Dataset unit: a stored volume plus its recomputable descriptors."""

    volume_path: str
    grain_count: int
    mean_grain_size_um3: float
    mean_sphericity: float
    mean_aspect_ratio: float
    rng_seed: int
    generator: str = "voronoi"  # "voronoi" | "diffusion"

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "StructureRecord":
        try:
            doc = json.loads(line)
            return cls(**doc)
        except (json.JSONDecodeError, TypeError) as exc:
            raise FormatError(f"bad manifest line: {exc}") from exc


def quantize(volume: VoxelVolume, palette: OrientationPalette):
    """Snap every voxel color to its nearest palette entry (Euclidean).

    Returns ``(quantized_volume, index_map)`` where `index_map` is an int32
    array of shape dims with values in [0, K).  Exact distance ties break
    toward the lowest palette index.
    """
    if len(palette) == 0:
        raise ConfigError("cannot quantize with an empty palette")
    flat = volume.data.reshape(-1, 3).astype(np.float64)
    cols = palette.colors  # (K, 3)
    # squared distances per voxel/entry; argmin returns the first (lowest) index on ties
    d2 = np.empty((flat.shape[0], len(cols)))
    for k, c in enumerate(cols):
        diff = flat - c
        d2[:, k] = diff[:, 0] ** 2 + diff[:, 1] ** 2 + diff[:, 2] ** 2
    idx = np.argmin(d2, axis=1).astype(np.int32)
    qdata = cols[idx].astype(np.float32).reshape(volume.data.shape)
    index_map = idx.reshape(volume.dims)
    qvol = VoxelVolume(qdata, voxel_size_um=volume.voxel_size_um,
                       palette_id=palette.palette_id, seed=volume.seed,
                       meta=dict(volume.meta))
    return qvol, index_map


def save(volume: VoxelVolume, path) -> None:
    """Write a volume as `.pcv`: one JSON header line + raw f32le payload."""
    header = {
        "magic": PCV_MAGIC,
        "dims": list(volume.dims),
        "channels": 3,
        "dtype": "f32le",
        "voxel_size_um": volume.voxel_size_um,
        "palette_id": volume.palette_id,
        "seed": volume.seed,
        "meta": volume.meta,
    }
    payload = np.ascontiguousarray(volume.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def load(path) -> VoxelVolume:
    """Read a `.pcv` file; the inverse of :func:`save`, bit-exact."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unrecognized format: cannot parse header of {path}") from exc
    if header.get("magic") != PCV_MAGIC:
        raise FormatError(f"unrecognized format: magic {header.get('magic')!r} != {PCV_MAGIC!r}")
    if header.get("dtype") != "f32le":
        raise FormatError(f"unsupported dtype {header.get('dtype')!r}")
    dims = tuple(int(d) for d in header["dims"])
    channels = int(header.get("channels", 3))
    expected = dims[0] * dims[1] * dims[2] * channels * 4
    if len(payload) < expected:
        raise FormatError(f"truncated payload: have {len(payload)} bytes, need {expected}")
    if len(payload) != expected:
        raise FormatError(f"payload size mismatch: have {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(dims + (channels,))
    return VoxelVolume(
        data,
        voxel_size_um=float(header.get("voxel_size_um", DEFAULT_VOXEL_SIZE_UM)),
        palette_id=header.get("palette_id", DEFAULT_PALETTE_ID),
        seed=header.get("seed"),
        meta=header.get("meta") or {},
    )


def extract_slice(volume: VoxelVolume, axis, index: int) -> np.ndarray:
    """Copy one 2D color slice perpendicular to `axis` ('x', 'y' or 'z')."""
    if axis not in _AXIS_INDEX:
        raise ConfigError(f"axis must be one of x, y, z; got {axis!r}")
    ax = _AXIS_INDEX[axis]
    extent = volume.dims[ax]
    if not 0 <= index < extent:
        raise DataError(f"slice index {index} out of range [0, {extent}) along axis {axis}")
    return np.take(volume.data, index, axis=ax).copy()


def volume_fractions(index_map: np.ndarray, n_colors: int) -> np.ndarray:
    """Per-orientation volume fractions, computed as counts over total.

    Fractions are exact dyadic rationals whenever the voxel count is a power
    of two (every standard volume here), in which case they sum to 1.0
    exactly in float64.
    """
    idx = np.asarray(index_map)
    if idx.size == 0:
        raise DataError("empty index map")
    if idx.min() < 0 or idx.max() >= n_colors:
        raise DataError(f"index map values must lie in [0, {n_colors})")
    counts = np.bincount(idx.ravel(), minlength=n_colors)
    return counts.astype(np.float64) / idx.size

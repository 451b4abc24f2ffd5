"""Reference microstructure generation: hard-core seed sampling, 3D Voronoi
tessellation, face-adjacency extraction and greedy orientation coloring.

The regularity factor r in [0, 1] is realized as a hard-core exclusion
radius ``delta = r * (3 V / (4 pi n))**(1/3)``, i.e. a fraction of the
equal-volume-sphere radius per grain.  r = 0 is plain uniform seeding; higher
r forces more evenly spaced seeds and hence more uniform grain sizes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import grains as grains_mod
from . import volume as vol
from .errors import ConfigError, DataError
from .volume import (GrainLabelVolume, OrientationPalette, StructureRecord,
                     VoxelVolume, default_palette)

DEFAULT_MAX_ATTEMPTS_PER_SEED = 10_000


@dataclass(frozen=True)
class SynthParams:
    """Parameters of one synthetic structure."""

    dims: tuple[int, int, int] = (64, 64, 64)
    n_grains: int = 125
    regularity: float = 0.5
    rng_seed: int = 0
    voxel_size_um: float = vol.DEFAULT_VOXEL_SIZE_UM
    palette_id: str = vol.DEFAULT_PALETTE_ID

    def __post_init__(self):
        if self.n_grains < 1:
            raise ConfigError(f"n_grains must be >= 1, got {self.n_grains}")
        if not 0.0 <= self.regularity <= 1.0:
            raise ConfigError(f"regularity must lie in [0, 1], got {self.regularity}")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ConfigError(f"dims must be three positive extents, got {self.dims}")


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected grain adjacency from 6-neighbor face contacts."""

    n_nodes: int
    edges: frozenset  # of (a, b) tuples with a < b

    def neighbors(self):
        nbrs = [[] for _ in range(self.n_nodes)]
        for a, b in self.edges:
            nbrs[a].append(b)
            nbrs[b].append(a)
        return nbrs


def exclusion_radius(n: int, regularity: float, dims) -> float:
    """Hard-core radius delta for n seeds in a box of the given extents."""
    volume = float(dims[0]) * dims[1] * dims[2]
    return regularity * (3.0 * volume / (4.0 * np.pi * n)) ** (1.0 / 3.0)


def sample_seeds(n: int, regularity: float, dims, rng: np.random.Generator,
                 max_attempts: int | None = None) -> np.ndarray:
    """Place n seed points in the open box [0, dims) with pairwise distance
    >= the hard-core radius; deterministic for a given generator state."""
    if n < 1:
        raise ConfigError("need at least one seed")
    delta = exclusion_radius(n, regularity, dims)
    if max_attempts is None:
        max_attempts = DEFAULT_MAX_ATTEMPTS_PER_SEED * n
    extents = np.asarray(dims, dtype=np.float64)
    seeds = np.empty((n, 3))
    count = 0
    attempts = 0
    d2min = delta * delta
    while count < n:
        if attempts >= max_attempts:
            raise ConfigError(
                f"could not place {n} seeds with exclusion radius {delta:.3f} "
                f"in {tuple(dims)} after {max_attempts} attempts; "
                "lower regularity or n_grains")
        attempts += 1
        cand = rng.uniform(0.0, 1.0, 3) * extents
        if count and delta > 0.0:
            d2 = np.sum((seeds[:count] - cand) ** 2, axis=1)
            if d2.min() < d2min:
                continue
        seeds[count] = cand
        count += 1
    return seeds


def voronoi_labels(seeds: np.ndarray, dims) -> GrainLabelVolume:
    """Label every voxel with the index of the nearest seed.

    Distances are Euclidean from voxel centers (i + 0.5); exact ties go to
    the lowest seed index.  Non-periodic (open) boundaries.
    """
    seeds = np.asarray(seeds, dtype=np.float64)
    if seeds.ndim != 2 or seeds.shape[1] != 3 or len(seeds) == 0:
        raise DataError(f"seeds must be a non-empty (n, 3) array, got {seeds.shape}")
    nx, ny, nz = dims
    ys = np.arange(ny, dtype=np.float64) + 0.5
    zs = np.arange(nz, dtype=np.float64) + 0.5
    dy2 = (ys[:, None] - seeds[:, 1]) ** 2  # (ny, n)
    dz2 = (zs[:, None] - seeds[:, 2]) ** 2  # (nz, n)
    labels = np.empty((nx, ny, nz), dtype=np.int32)
    # slab by slab keeps the distance buffer small and the arithmetic
    # symmetric (plain squared differences, so mirror ties are exact)
    for i in range(nx):
        dx2 = (i + 0.5 - seeds[:, 0]) ** 2  # (n,)
        d2 = dx2[None, None, :] + dy2[:, None, :] + dz2[None, :, :]
        labels[i] = np.argmin(d2, axis=-1)
    return GrainLabelVolume(labels, n_grains=len(seeds))


def build_adjacency(labels: GrainLabelVolume) -> AdjacencyGraph:
    """Edge (a, b) iff some voxel of grain a shares a face with one of b.

    Voxels labeled -1 are ignored.
    """
    lab = labels.labels
    pairs = []
    for ax in range(3):
        a = np.take(lab, range(lab.shape[ax] - 1), axis=ax).ravel()
        b = np.take(lab, range(1, lab.shape[ax]), axis=ax).ravel()
        m = (a != b) & (a >= 0) & (b >= 0)
        if m.any():
            lo = np.minimum(a[m], b[m])
            hi = np.maximum(a[m], b[m])
            pairs.append(np.unique(np.stack([lo, hi], axis=1), axis=0))
    if pairs:
        allp = np.unique(np.concatenate(pairs, axis=0), axis=0)
        edges = frozenset((int(x), int(y)) for x, y in allp)
    else:
        edges = frozenset()
    return AdjacencyGraph(n_nodes=labels.n_grains, edges=edges)


def greedy_color(graph: AdjacencyGraph, n_colors: int = 10,
                 rng: np.random.Generator | None = None):
    """Assign one of K colors per grain so face-adjacent grains differ
    whenever possible.

    Grains are visited in a seeded random order.  Each grain takes the
    globally least-used color among those absent from its already-colored
    neighbors (ties -> lowest index); if every color is taken by a neighbor,
    it takes the color with the fewest conflicting colored neighbors
    (ties -> lowest index).

    Returns ``(colors, n_conflicts)`` where `n_conflicts` counts edges whose
    endpoints ended up sharing a color.
    """
    if n_colors < 1:
        raise ConfigError("need at least one color")
    if rng is None:
        rng = np.random.default_rng(0)
    n = graph.n_nodes
    nbrs = graph.neighbors()
    order = rng.permutation(n)
    colors = np.full(n, -1, dtype=np.int32)
    used = np.zeros(n_colors, dtype=np.int64)
    for g in order:
        taken = {int(colors[x]) for x in nbrs[g] if colors[x] >= 0}
        best = -1
        for c in range(n_colors):
            if c in taken:
                continue
            if best < 0 or used[c] < used[best]:
                best = c
        if best < 0:
            nbr_counts = np.zeros(n_colors, dtype=np.int64)
            for x in nbrs[g]:
                if colors[x] >= 0:
                    nbr_counts[colors[x]] += 1
            best = int(np.argmin(nbr_counts))
        colors[g] = best
        used[best] += 1
    conflicts = sum(1 for a, b in graph.edges if colors[a] == colors[b])
    return colors, conflicts


def structure_seed_sequence(master_seed: int, sample_index: int) -> np.random.SeedSequence:
    """Documented seed-splitting rule: sample i of a dataset with master seed
    S derives its generator from SeedSequence([S, i]), so parallel and serial
    dataset generation produce identical outputs."""
    return np.random.SeedSequence([int(master_seed), int(sample_index)])


def generate_structure(params: SynthParams,
                       palette: OrientationPalette | None = None,
                       compute_descriptors: bool = True):
    """Run the full recipe: seeds -> Voronoi labels -> adjacency -> greedy
    colors -> colored volume, plus descriptors measured by the grains module.

    Returns ``(volume, labels, record)``.  `record.volume_path` is left empty;
    dataset writers fill it in.
    """
    if palette is None:
        palette = default_palette()
    rng = np.random.default_rng(np.random.SeedSequence(params.rng_seed))
    seeds = sample_seeds(params.n_grains, params.regularity, params.dims, rng)
    labels = voronoi_labels(seeds, params.dims)
    graph = build_adjacency(labels)
    colors, n_conflicts = greedy_color(graph, len(palette), rng)
    index_map = colors[labels.labels]
    data = palette.colors[index_map].astype(np.float32)
    volume = VoxelVolume(data, voxel_size_um=params.voxel_size_um,
                         palette_id=palette.palette_id, seed=params.rng_seed,
                         meta={"generator": "voronoi", "n_grains": params.n_grains,
                               "regularity": params.regularity,
                               "coloring_conflicts": int(n_conflicts)})
    if compute_descriptors:
        seg = grains_mod.segment(index_map, grains_mod.SegmentationConfig())
        metrics = grains_mod.grain_metrics(seg, voxel_size_um=params.voxel_size_um,
                                           index_map=index_map)
        summary = grains_mod.descriptor_summary(metrics)
        record = StructureRecord(
            volume_path="",
            grain_count=len(metrics),
            mean_grain_size_um3=summary.mean_size_um3,
            mean_sphericity=summary.mean_sphericity,
            mean_aspect_ratio=summary.mean_aspect_ratio,
            rng_seed=params.rng_seed,
            generator="voronoi",
        )
    else:
        record = StructureRecord("", labels.n_grains, 0.0, 0.0, 0.0,
                                 params.rng_seed, "voronoi")
    return volume, labels, record


@dataclass
class DatasetManifest:
    """Paths plus one StructureRecord per generated sample."""

    directory: str
    records: list = field(default_factory=list)

    @property
    def manifest_path(self) -> Path:
        return Path(self.directory) / "manifest.jsonl"

    def save(self):
        with open(self.manifest_path, "w") as fh:
            for rec in self.records:
                fh.write(rec.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.jsonl"
        records = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(StructureRecord.from_json(line))
        return cls(directory=str(path.parent), records=records)


def generate_dataset(count: int, n_range: tuple[int, int], template: SynthParams,
                     out_dir, master_seed: int | None = None,
                     palette: OrientationPalette | None = None,
                     compute_descriptors: bool = True) -> DatasetManifest:
    """Write `count` .pcv volumes plus a JSON-lines manifest.

    Per-sample grain counts are drawn uniformly from [n_range[0], n_range[1]]
    using each sample's own child seed, so any subset of samples can be
    regenerated independently.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if master_seed is None:
        master_seed = template.rng_seed
    lo, hi = int(n_range[0]), int(n_range[1])
    if not 1 <= lo <= hi:
        raise ConfigError(f"bad n_range {n_range}")
    manifest = DatasetManifest(directory=str(out_dir))
    for i in range(count):
        ss = structure_seed_sequence(master_seed, i)
        draw_rng = np.random.default_rng(ss)
        n_i = int(draw_rng.integers(lo, hi + 1))
        sample_seed = int(ss.generate_state(1, dtype=np.uint32)[0])
        params = replace(template, n_grains=n_i, rng_seed=sample_seed)
        volume, _, record = generate_structure(params, palette,
                                               compute_descriptors=compute_descriptors)
        fname = f"sample_{i:05d}.pcv"
        vol.save(volume, out_dir / fname)
        record.volume_path = fname
        manifest.records.append(record)
        manifest.save()  # rewrite each sample: partial manifest survives disk errors
    return manifest

"""Grain segmentation and per-grain morphology.

Segmentation runs per orientation: 6-connected components, removal of
sub-threshold components (labeled -1 and excluded from statistics), then a
conservative watershed split of the survivors on the negated Euclidean
distance transform.  The EDT treats the domain boundary as background (open
boundaries truncate grains), and watershed markers are prominence-filtered
local maximum plateaus, additionally thinned to the configured minimum
marker spacing.  Pure local-maximum markers oversegment boundary-truncated
and elongated cells badly (measured recovered/seeded slope 1.3-1.5 on
Voronoi references, vs 0.99 for this rule).

Surface areas come from a marching-cubes triangulation of each grain's
binary mask (0.5 iso-level, one-voxel empty padding).  The mask is refined
2x (nearest neighbor) and the mesh relaxed by shrink-free Taubin smoothing
before measuring: raw midpoint marching cubes overestimates sphere areas by
~9% (staircase) and underestimates polyhedron areas by ~6% (edge chamfer);
the refined+smoothed estimator is within ~2-7% on both families.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi
from scipy import sparse
from skimage.measure import marching_cubes, mesh_surface_area
from skimage.morphology import h_maxima
from skimage.segmentation import watershed

from .errors import ConfigError, DataError
from .volume import GrainLabelVolume, DEFAULT_VOXEL_SIZE_UM

logger = logging.getLogger(__name__)

STRUCT6 = ndi.generate_binary_structure(3, 1)

SPHERICITY_FLAG_LIMIT = 1.05
SURFACE_REFINE = 2
SURFACE_SMOOTH_ITERS = 30
SURFACE_SMOOTH_MIN_VERTS = 30
_TAUBIN_LAMBDA = 0.5
_TAUBIN_MU = -0.53


@dataclass(frozen=True)
class SegmentationConfig:
    size_threshold_vox: int = 200
    watershed_marker_min_distance: float = 4.0
    marker_prominence: float = 1.0  # EDT depth below a maximum that still merges into it

    def __post_init__(self):
        if self.size_threshold_vox < 0:
            raise ConfigError("size_threshold_vox must be >= 0")
        if self.watershed_marker_min_distance < 0:
            raise ConfigError("watershed_marker_min_distance must be >= 0")
        if self.marker_prominence <= 0:
            raise ConfigError("marker_prominence must be > 0")


@dataclass(frozen=True)
class GrainMetrics:
    grain_id: int
    volume_vox: int
    volume_um3: float
    surface_area_um2: float
    sphericity: float
    aspect_ratio: float
    centroid: tuple[float, float, float]
    palette_index: int = -1


def _watershed_markers(edt: np.ndarray, mask: np.ndarray, config: SegmentationConfig):
    """Label one marker per prominence-h maximum region, then suppress
    markers closer than the configured minimum spacing (higher EDT wins)."""
    plateau = (h_maxima(edt, config.marker_prominence) > 0) & mask
    markers, n_markers = ndi.label(plateau, structure=STRUCT6)
    md = config.watershed_marker_min_distance
    if n_markers > 1 and md > 0:
        ids = np.arange(1, n_markers + 1)
        cents = np.asarray(ndi.center_of_mass(plateau, markers, ids))
        vals = np.asarray(ndi.maximum(edt, markers, ids))
        order = np.argsort(-vals, kind="stable")
        alive = np.ones(n_markers, dtype=bool)
        for pos, i in enumerate(order):
            if not alive[i]:
                continue
            for j in order[pos + 1:]:
                if alive[j] and np.sum((cents[i] - cents[j]) ** 2) < md * md:
                    alive[j] = False
        if not alive.all():
            remap = np.zeros(n_markers + 1, dtype=np.int32)
            remap[1:][alive] = np.arange(1, int(alive.sum()) + 1)
            markers = remap[markers]
    return markers


def segment(index_map: np.ndarray, config: SegmentationConfig | None = None) -> GrainLabelVolume:
    """Split a quantized orientation map into grains.

    Returns a GrainLabelVolume with ids 0..n-1 in (orientation, basin) order
    and -1 on voxels belonging to sub-threshold components.
    """
    if config is None:
        config = SegmentationConfig()
    imap = np.asarray(index_map)
    if imap.ndim != 3:
        raise DataError(f"index map must be 3D, got shape {imap.shape}")
    if imap.size == 0:
        return GrainLabelVolume(np.full((0, 0, 0), -1, np.int32), 0)
    out = np.full(imap.shape, -1, dtype=np.int32)
    next_id = 0
    for k in range(int(imap.max()) + 1):
        mask = imap == k
        if not mask.any():
            continue
        comps, n_comps = ndi.label(mask, structure=STRUCT6)
        counts = np.bincount(comps.ravel())
        keep = np.zeros(n_comps + 1, dtype=bool)
        keep[1:] = counts[1:] >= config.size_threshold_vox
        retained = keep[comps]
        if not retained.any():
            continue
        # pad so the domain surface counts as grain boundary; otherwise
        # boundary-truncated grains get multimodal distance fields
        edt = ndi.distance_transform_edt(np.pad(retained, 1))[1:-1, 1:-1, 1:-1]
        markers = _watershed_markers(edt, retained, config)
        basins = watershed(-edt, markers, mask=retained, connectivity=STRUCT6)
        ids = np.unique(basins[basins > 0])
        remap = np.zeros(int(basins.max()) + 1, dtype=np.int32)
        remap[ids] = np.arange(next_id, next_id + len(ids), dtype=np.int32)
        out[basins > 0] = remap[basins[basins > 0]]
        next_id += len(ids)
    return GrainLabelVolume(out, n_grains=next_id)


def _taubin_smooth(verts: np.ndarray, faces: np.ndarray,
                   iterations: int = SURFACE_SMOOTH_ITERS) -> np.ndarray:
    n = len(verts)
    i = np.concatenate([faces[:, 0], faces[:, 1], faces[:, 2],
                        faces[:, 1], faces[:, 2], faces[:, 0]])
    j = np.concatenate([faces[:, 1], faces[:, 2], faces[:, 0],
                        faces[:, 0], faces[:, 1], faces[:, 2]])
    adj = sparse.coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n)).tocsr()
    adj.data[:] = 1.0
    deg = np.asarray(adj.sum(axis=1)).ravel()
    deg[deg == 0] = 1.0
    v = verts.astype(np.float64)
    for _ in range(iterations):
        for f in (_TAUBIN_LAMBDA, _TAUBIN_MU):
            v = v + f * (adj @ v / deg[:, None] - v)
    return v


def surface_area(mask: np.ndarray, refine: int = SURFACE_REFINE,
                 smooth_iterations: int = SURFACE_SMOOTH_ITERS) -> float:
    """Surface area (voxel units squared) of a binary mask."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise DataError("cannot measure the surface of an empty mask")
    for ax in range(3):
        m = np.repeat(m, refine, axis=ax)
    padded = np.pad(m, 1).astype(np.float32)
    verts, faces, _, _ = marching_cubes(padded, level=0.5, method="lorensen")
    if smooth_iterations and len(verts) >= SURFACE_SMOOTH_MIN_VERTS:
        verts = _taubin_smooth(verts, faces, smooth_iterations)
    return float(mesh_surface_area(verts, faces)) / refine ** 2


def sphericity_from(volume: float, area: float) -> float:
    """Wadell sphericity: area of the equal-volume sphere over actual area."""
    return float(np.pi ** (1.0 / 3.0) * (6.0 * volume) ** (2.0 / 3.0) / area)


def _aspect_ratio(coords: np.ndarray) -> float:
    """sqrt(lambda_max / lambda_min) of the voxel-coordinate covariance.

    Each voxel contributes 1/12 per diagonal (its own unit extent), which
    makes boxes exact and keeps single-voxel-thick grains finite.
    """
    centered = coords - coords.mean(axis=0)
    cov = centered.T @ centered / len(coords) + np.eye(3) / 12.0
    eig = np.linalg.eigvalsh(cov)
    return float(np.sqrt(eig[-1] / eig[0]))


def grain_metrics(labels: GrainLabelVolume, voxel_size_um: float = DEFAULT_VOXEL_SIZE_UM,
                  index_map: np.ndarray | None = None,
                  compute_surface: bool = True) -> list[GrainMetrics]:
    """Measure every retained grain.

    `index_map` (the quantized orientation map) is only needed to fill in
    palette indices.  With ``compute_surface=False`` the marching-cubes pass
    is skipped and area/sphericity are reported as NaN (cheap counting mode).
    """
    lab = labels.labels
    if labels.n_grains == 0:
        return []
    objects = ndi.find_objects(lab + 1)  # slot g is the bbox of grain g
    metrics = []
    vox_vol = voxel_size_um ** 3
    vox_area = voxel_size_um ** 2
    for g in range(labels.n_grains):
        sl = objects[g]
        if sl is None:
            raise DataError(f"grain id {g} has no voxels")
        local = lab[sl] == g
        n_vox = int(local.sum())
        coords = np.argwhere(local).astype(np.float64)
        coords += np.array([s.start for s in sl], dtype=np.float64)
        centroid = tuple(float(c) for c in coords.mean(axis=0))
        if compute_surface:
            area_vox = surface_area(local)
            psi = sphericity_from(float(n_vox), area_vox)
            if psi > SPHERICITY_FLAG_LIMIT:
                logger.warning("grain %d sphericity %.3f exceeds %.2f "
                               "(marching-cubes discretization on a small grain)",
                               g, psi, SPHERICITY_FLAG_LIMIT)
            area_um2 = area_vox * vox_area
        else:
            area_um2 = float("nan")
            psi = float("nan")
        palette_index = -1
        if index_map is not None:
            first = tuple(coords[0].astype(int))
            palette_index = int(index_map[first])
        metrics.append(GrainMetrics(
            grain_id=g,
            volume_vox=n_vox,
            volume_um3=n_vox * vox_vol,
            surface_area_um2=area_um2,
            sphericity=psi,
            aspect_ratio=_aspect_ratio(coords),
            centroid=centroid,
            palette_index=palette_index,
        ))
    return metrics


def mean_grain_size(total_volume_um3: float, n_grains: int) -> float:
    """Equivalent-sphere mean grain diameter d = (6 V / (n pi))**(1/3), in um."""
    if n_grains < 1:
        raise ConfigError(f"n_grains must be >= 1, got {n_grains}")
    if not total_volume_um3 > 0:
        raise ConfigError(f"total volume must be > 0, got {total_volume_um3}")
    return float((6.0 * total_volume_um3 / (n_grains * np.pi)) ** (1.0 / 3.0))


@dataclass(frozen=True)
class DescriptorSummary:
    n_grains: int
    mean_size_um3: float
    mean_sphericity: float
    mean_aspect_ratio: float
    histograms: dict = field(default_factory=dict)  # name -> (counts, bin_edges)


def descriptor_summary(metrics: list, n_bins: int = 20) -> DescriptorSummary:
    """Arithmetic means and histograms of size, aspect ratio and sphericity."""
    if not metrics:
        raise DataError("no grains: cannot summarize an empty metrics list")
    sizes = np.array([m.volume_um3 for m in metrics])
    aspects = np.array([m.aspect_ratio for m in metrics])
    spheres = np.array([m.sphericity for m in metrics])
    hists = {}
    for name, vals in (("size_um3", sizes), ("aspect_ratio", aspects),
                       ("sphericity", spheres)):
        finite = vals[np.isfinite(vals)]
        if len(finite):
            counts, edges = np.histogram(finite, bins=n_bins)
            hists[name] = (counts, edges)
    return DescriptorSummary(
        n_grains=len(metrics),
        mean_size_um3=float(sizes.mean()),
        mean_sphericity=float(spheres.mean()),
        mean_aspect_ratio=float(aspects.mean()),
        histograms=hists,
    )

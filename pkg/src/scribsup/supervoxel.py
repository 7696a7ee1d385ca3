"""Anisotropy-aware 3D SLIC supervoxel clustering.

Spatial distances are measured in millimeters (voxel index times spacing),
so strongly anisotropic volumes produce supervoxels that are roughly
isotropic in physical space rather than in index space. The assignment
distance between a voxel and a cluster center is

    D = sqrt(d_int**2 + (d_sp / S)**2 * m**2)

with d_int the normalized-intensity difference, d_sp the physical Euclidean
distance, S the seed grid step in mm, and m the compactness weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import KTooLargeError
from .volume_io import Volume

__all__ = ["SupervoxelMap", "SlicParams", "slic3d", "enforce_connectivity"]


@dataclass(frozen=True)
class SupervoxelMap:
    """Per-voxel supervoxel IDs forming a partition of the volume.

    IDs are contiguous in ``0..count-1`` and each occurs at least once.
    """

    ids: np.ndarray
    spacing: Tuple[float, float, float]
    count: int

    def __post_init__(self):
        ids = np.asarray(self.ids)
        if ids.ndim != 3:
            raise ValueError("supervoxel ids must be 3D")
        ids = np.ascontiguousarray(ids.astype(np.int32))
        if ids.size:
            if ids.min() < 0 or ids.max() >= self.count:
                raise ValueError("supervoxel ids out of range")
            present = np.bincount(ids.ravel(), minlength=self.count)
            if (present == 0).any():
                raise ValueError("every supervoxel id must occur at least once")
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.ids.shape


@dataclass(frozen=True)
class SlicParams:
    """Clustering knobs: requested cluster count, compactness, rounds."""

    k: int
    compactness: float = 10.0
    iterations: int = 10
    epsilon_conv: float = 0.0

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("k must be positive")
        if self.compactness <= 0:
            raise ValueError("compactness must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.epsilon_conv < 0:
            raise ValueError("epsilon_conv must be nonnegative")


def _normalize(data: np.ndarray) -> np.ndarray:
    data = data.astype(np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi <= lo:
        return np.zeros_like(data)
    return (data - lo) / (hi - lo)


def _gradient_magnitude(intensity: np.ndarray, spacing) -> np.ndarray:
    padded = np.pad(intensity, 1, mode="edge")
    grad2 = np.zeros_like(intensity)
    for axis, s in enumerate(spacing):
        fwd = [slice(1, -1)] * 3
        bwd = [slice(1, -1)] * 3
        fwd[axis] = slice(2, None)
        bwd[axis] = slice(None, -2)
        d = (padded[tuple(fwd)] - padded[tuple(bwd)]) / (2.0 * s)
        grad2 += d * d
    return np.sqrt(grad2)


def _seed_grid(shape, spacing, k) -> Tuple[np.ndarray, float]:
    """Regular seed lattice with physical step S = (total mm^3 / k)^(1/3).

    Per-axis counts are rounded from the physical extent; if rounding
    undershoots k, the axis with the coarsest step is subdivided until the
    grid holds at least k seeds.
    """
    extents = [n * s for n, s in zip(shape, spacing)]
    total_mm3 = extents[0] * extents[1] * extents[2]
    step = (total_mm3 / k) ** (1.0 / 3.0)
    counts = [max(1, int(round(ext / step))) for ext in extents]
    while counts[0] * counts[1] * counts[2] < k:
        axis = int(np.argmax([ext / c for ext, c in zip(extents, counts)]))
        counts[axis] += 1
    axes = [
        (np.arange(c) + 0.5) * (ext / c)
        for c, ext in zip(counts, extents)
    ]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    seeds_mm = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    return seeds_mm, step


def _perturb_seeds(seeds_mm, intensity, grad, shape, spacing) -> np.ndarray:
    """Move each seed to the strictly lowest-gradient voxel in its 3^3 box."""
    idx = np.round(seeds_mm / np.asarray(spacing) - 0.5).astype(np.int64)
    idx = np.clip(idx, 0, np.asarray(shape) - 1)
    out = idx.copy()
    for n in range(idx.shape[0]):
        cx, cy, cz = idx[n]
        best = grad[cx, cy, cz]
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    x, y, z = cx + dx, cy + dy, cz + dz
                    if not (0 <= x < shape[0] and 0 <= y < shape[1] and 0 <= z < shape[2]):
                        continue
                    if grad[x, y, z] < best:
                        best = grad[x, y, z]
                        out[n] = (x, y, z)
    return out


def _assign(intensity, coords_mm, centers_pos, centers_int, step, compactness):
    """One assignment sweep; returns labels and squared distances."""
    shape = intensity.shape
    best_d2 = np.full(shape, np.inf)
    labels = np.full(shape, -1, dtype=np.int32)
    m2_over_s2 = (compactness / step) ** 2
    half = 2.0 * step
    for cid in range(centers_pos.shape[0]):
        cpos = centers_pos[cid]
        windows = []
        for axis in range(3):
            ax = coords_mm[axis]
            lo = int(np.searchsorted(ax, cpos[axis] - half, side="left"))
            hi = int(np.searchsorted(ax, cpos[axis] + half, side="right"))
            if lo >= hi:
                windows = None
                break
            windows.append(slice(lo, hi))
        if windows is None:
            continue
        sl = tuple(windows)
        d_sp2 = (
            (coords_mm[0][sl[0], None, None] - cpos[0]) ** 2
            + (coords_mm[1][None, sl[1], None] - cpos[1]) ** 2
            + (coords_mm[2][None, None, sl[2]] - cpos[2]) ** 2
        )
        d_int = intensity[sl] - centers_int[cid]
        d2 = d_int * d_int + d_sp2 * m2_over_s2
        better = d2 < best_d2[sl]
        labels_view = labels[sl]
        labels_view[better] = cid
        best_view = best_d2[sl]
        best_view[better] = d2[better]
    # Voxels outside every search window fall back to a full comparison.
    if (labels < 0).any():
        miss = np.argwhere(labels < 0)
        pos = np.stack(
            [coords_mm[0][miss[:, 0]], coords_mm[1][miss[:, 1]], coords_mm[2][miss[:, 2]]],
            axis=1,
        )
        d_sp2 = ((pos[:, None, :] - centers_pos[None, :, :]) ** 2).sum(axis=2)
        d_int = intensity[miss[:, 0], miss[:, 1], miss[:, 2]][:, None] - centers_int[None, :]
        d2 = d_int * d_int + d_sp2 * m2_over_s2
        pick = np.argmin(d2, axis=1).astype(np.int32)
        labels[miss[:, 0], miss[:, 1], miss[:, 2]] = pick
        best_d2[miss[:, 0], miss[:, 1], miss[:, 2]] = d2[np.arange(len(pick)), pick]
    return labels, best_d2


def _slic_state(vol: Volume, params: SlicParams):
    """Run seeding plus Lloyd rounds; returns the pre-connectivity state.

    Returns ``(labels, centers_pos_mm, centers_int, step_mm)`` after a final
    assignment against the last center estimates, so every voxel is nearest
    (by D) to its own center among centers whose window covers it.
    """
    shape = vol.shape
    nvox = int(np.prod(shape))
    if params.k > nvox:
        raise KTooLargeError(f"k={params.k} exceeds voxel count {nvox}")
    intensity = _normalize(vol.data)
    grad = _gradient_magnitude(intensity, vol.spacing)
    seeds_mm, step = _seed_grid(shape, vol.spacing, params.k)
    seed_idx = _perturb_seeds(seeds_mm, intensity, grad, shape, vol.spacing)

    spacing = np.asarray(vol.spacing)
    coords_mm = tuple(np.arange(shape[a]) * spacing[a] for a in range(3))
    centers_pos = seed_idx.astype(np.float64) * spacing[None, :]
    centers_int = intensity[seed_idx[:, 0], seed_idx[:, 1], seed_idx[:, 2]].copy()

    flat_coords = [coords_mm[a] for a in range(3)]
    for _ in range(params.iterations):
        labels, _ = _assign(intensity, coords_mm, centers_pos, centers_int, step, params.compactness)
        flat = labels.ravel()
        counts = np.bincount(flat, minlength=len(centers_pos)).astype(np.float64)
        sums = np.zeros_like(centers_pos)
        for axis in range(3):
            axis_mm = np.broadcast_to(
                flat_coords[axis].reshape([-1 if a == axis else 1 for a in range(3)]),
                shape,
            ).ravel()
            sums[:, axis] = np.bincount(flat, weights=axis_mm, minlength=len(centers_pos))
        int_sums = np.bincount(flat, weights=intensity.ravel(), minlength=len(centers_pos))
        nonempty = counts > 0
        new_pos = centers_pos.copy()
        new_int = centers_int.copy()
        new_pos[nonempty] = sums[nonempty] / counts[nonempty, None]
        new_int[nonempty] = int_sums[nonempty] / counts[nonempty]
        moved = float(np.abs(new_pos - centers_pos).sum())
        centers_pos, centers_int = new_pos, new_int
        if moved <= params.epsilon_conv:
            break
    labels, _ = _assign(intensity, coords_mm, centers_pos, centers_int, step, params.compactness)
    return labels, centers_pos, centers_int, step


def slic3d(vol: Volume, params: SlicParams) -> SupervoxelMap:
    """Cluster a volume into supervoxels.

    Seeds start on a regular physical grid with step S, get perturbed to the
    lowest-gradient voxel of their 3x3x3 neighborhood, then run
    ``params.iterations`` Lloyd rounds of windowed assignment (window 2S per
    physical axis) and center updates. Connectivity is enforced before
    returning, so IDs are contiguous and each supervoxel is 6-connected.

    Raises:
        KTooLargeError: when ``params.k`` exceeds the voxel count.
    """
    labels, _, _, step = _slic_state(vol, params)
    nvox = labels.size
    voxel_mm3 = vol.spacing[0] * vol.spacing[1] * vol.spacing[2]
    min_size = (step ** 3) / 4.0 / voxel_mm3
    raw = _compact_ids(labels)
    return enforce_connectivity(
        SupervoxelMap(raw, vol.spacing, int(raw.max()) + 1), min_size_voxels=min_size
    )


def _compact_ids(labels: np.ndarray) -> np.ndarray:
    """Renumber IDs to drop empty ones, ordered by first occurrence."""
    flat = labels.ravel()
    uniq, first = np.unique(flat, return_index=True)
    order = np.argsort(first)
    remap = np.empty(int(uniq.max()) + 1, dtype=np.int32)
    remap[uniq[order]] = np.arange(len(uniq), dtype=np.int32)
    return remap[flat].reshape(labels.shape)


def _equal_id_components(ids: np.ndarray) -> Tuple[np.ndarray, int]:
    """Label 6-connected components of constant-ID regions."""
    shape = ids.shape
    nvox = ids.size
    lin = np.arange(nvox, dtype=np.int64).reshape(shape)
    rows, cols = [], []
    for axis in range(3):
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[axis] = slice(None, -1)
        b[axis] = slice(1, None)
        same = ids[tuple(a)] == ids[tuple(b)]
        rows.append(lin[tuple(a)][same].ravel())
        cols.append(lin[tuple(b)][same].ravel())
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    graph = coo_matrix(
        (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(nvox, nvox)
    )
    ncomp, comp = connected_components(graph, directed=False)
    return comp.reshape(shape), ncomp


_FACE_OFFSETS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.int64
)


def enforce_connectivity(
    svmap: SupervoxelMap, min_size_voxels: Optional[float] = None
) -> SupervoxelMap:
    """Split disconnected IDs and absorb small orphan fragments.

    For each ID, the largest 6-connected component keeps it. Remaining
    fragments smaller than ``min_size_voxels`` (default: voxel_count /
    (4 * count), the physical S^3/4 equivalent) merge into the largest
    adjacent supervoxel; larger fragments become new supervoxels. IDs are
    renumbered contiguously by first scan-order occurrence.
    """
    ids = svmap.ids
    shape = ids.shape
    nvox = ids.size
    if min_size_voxels is None:
        min_size_voxels = nvox / (4.0 * svmap.count)
    comp, ncomp = _equal_id_components(ids)
    flat_comp = comp.ravel()
    comp_sizes = np.bincount(flat_comp, minlength=ncomp)
    first_voxel = np.full(ncomp, nvox, dtype=np.int64)
    np.minimum.at(first_voxel, flat_comp, np.arange(nvox, dtype=np.int64))
    comp_id_of = ids.ravel()[first_voxel]

    # Largest component per original ID keeps it (ties: earliest in scan order).
    order = np.lexsort((first_voxel, -comp_sizes))
    core = np.zeros(ncomp, dtype=bool)
    seen = set()
    for c in order:
        oid = int(comp_id_of[c])
        if oid not in seen:
            seen.add(oid)
            core[c] = True

    # Component -> final supervoxel assignment. Cores and large fragments get
    # their own supervoxels; small fragments are resolved by merging below.
    final_of_comp = np.full(ncomp, -1, dtype=np.int64)
    next_id = 0
    for c in np.argsort(first_voxel):
        if core[c] or comp_sizes[c] >= min_size_voxels:
            final_of_comp[c] = next_id
            next_id += 1
    sv_sizes = np.zeros(next_id, dtype=np.int64)
    for c in range(ncomp):
        if final_of_comp[c] >= 0:
            sv_sizes[final_of_comp[c]] += comp_sizes[c]

    pending = [c for c in range(ncomp) if final_of_comp[c] < 0]
    if pending:
        comp_voxels = {c: np.argwhere(comp == c) for c in pending}
        while pending:
            progressed = False
            remaining = []
            for c in pending:
                vox = comp_voxels[c]
                neigh = vox[:, None, :] + _FACE_OFFSETS[None, :, :]
                neigh = neigh.reshape(-1, 3)
                ok = (
                    (neigh >= 0).all(axis=1)
                    & (neigh[:, 0] < shape[0])
                    & (neigh[:, 1] < shape[1])
                    & (neigh[:, 2] < shape[2])
                )
                neigh = neigh[ok]
                ncomp_ids = comp[neigh[:, 0], neigh[:, 1], neigh[:, 2]]
                cand = np.unique(final_of_comp[ncomp_ids])
                cand = cand[cand >= 0]
                if cand.size == 0:
                    remaining.append(c)
                    continue
                # Largest adjacent supervoxel wins; ties go to the lowest id.
                sizes = sv_sizes[cand]
                target = int(cand[np.lexsort((cand, -sizes))[0]])
                final_of_comp[c] = target
                sv_sizes[target] += comp_sizes[c]
                progressed = True
            if not progressed and remaining:
                # No resolved neighbor anywhere (single-ID map); keep as own.
                c = remaining.pop(0)
                final_of_comp[c] = len(sv_sizes)
                sv_sizes = np.append(sv_sizes, comp_sizes[c])
            pending = remaining

    out = final_of_comp[flat_comp].reshape(shape)
    out = _compact_ids(out)
    return SupervoxelMap(out, svmap.spacing, int(out.max()) + 1)

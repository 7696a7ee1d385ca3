"""Independent reference implementations used to cross-check the package.

Everything here is deliberately naive (loops, dicts, all-pairs scans) and
shares no code with the production paths it verifies.
"""

from collections import deque

import numpy as np


def central_fd(loss_fn, base: np.ndarray, coord, step: float = 1e-5) -> float:
    """Central finite difference of a scalar function at one array entry."""
    plus = base.copy()
    minus = base.copy()
    plus[coord] += step
    minus[coord] -= step
    return (loss_fn(plus) - loss_fn(minus)) / (2.0 * step)


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def brute_propagate(indices, classes, ids, num_classes):
    """Per-supervoxel class-set enumeration with plain dicts."""
    hit = {}
    for (x, y, z), c in zip(indices, classes):
        hit.setdefault(int(ids[x, y, z]), set()).add(int(c))
    mask = np.zeros(ids.shape, dtype=np.uint16)
    conf = np.zeros(ids.shape, dtype=np.uint8)
    for sv, cs in hit.items():
        if len(cs) == 1:
            sel = ids == sv
            mask[sel] = cs.pop()
            conf[sel] = 1
    return mask, conf


def boundary_set(mask: np.ndarray):
    """Boundary voxels: in the set, with a non-set 6-neighbor or on the border."""
    out = []
    nx, ny, nz = mask.shape
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if not mask[x, y, z]:
                    continue
                edge = x in (0, nx - 1) or y in (0, ny - 1) or z in (0, nz - 1)
                if not edge:
                    for dx, dy, dz in (
                        (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1),
                    ):
                        if not mask[x + dx, y + dy, z + dz]:
                            edge = True
                            break
                if edge:
                    out.append((x, y, z))
    return np.array(out, dtype=np.float64).reshape(-1, 3)


def percentile_linear(values, q: float) -> float:
    """Order-statistic percentile with linear interpolation."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if len(v) == 1:
        return float(v[0])
    h = (len(v) - 1) * (q / 100.0)
    lo = int(np.floor(h))
    hi = min(lo + 1, len(v) - 1)
    frac = h - lo
    return float(v[lo] + frac * (v[hi] - v[lo]))


def brute_hd95(pred_mask, gt_mask, spacing):
    """All-pairs pooled bidirectional 95th-percentile boundary distance."""
    bp = boundary_set(pred_mask)
    bg = boundary_set(gt_mask)
    if len(bp) == 0 or len(bg) == 0:
        return None
    s = np.asarray(spacing, dtype=np.float64)
    diff = (bp[:, None, :] - bg[None, :, :]) * s[None, None, :]
    dmat = np.sqrt((diff ** 2).sum(axis=2))
    pooled = np.concatenate([dmat.min(axis=1), dmat.min(axis=0)])
    return percentile_linear(pooled, 95.0)


def flood_components_6(mask: np.ndarray):
    """BFS 6-connected component labeling of a boolean volume."""
    labels = np.full(mask.shape, -1, dtype=np.int64)
    nxt = 0
    nx, ny, nz = mask.shape
    for sx in range(nx):
        for sy in range(ny):
            for sz in range(nz):
                if not mask[sx, sy, sz] or labels[sx, sy, sz] >= 0:
                    continue
                queue = deque([(sx, sy, sz)])
                labels[sx, sy, sz] = nxt
                while queue:
                    x, y, z = queue.popleft()
                    for dx, dy, dz in (
                        (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1),
                    ):
                        a, b, c = x + dx, y + dy, z + dz
                        if 0 <= a < nx and 0 <= b < ny and 0 <= c < nz:
                            if mask[a, b, c] and labels[a, b, c] < 0:
                                labels[a, b, c] = nxt
                                queue.append((a, b, c))
                nxt += 1
    return labels, nxt


def all_ids_connected_6(ids: np.ndarray) -> bool:
    for sv in np.unique(ids):
        _, n = flood_components_6(ids == sv)
        if n != 1:
            return False
    return True


def chebyshev_ring(fg_slice: np.ndarray, margin: int):
    """Background pixels at Chebyshev distance exactly ``margin`` from fg."""
    obj = np.argwhere(fg_slice)
    ring = set()
    h, w = fg_slice.shape
    for x in range(h):
        for y in range(w):
            if fg_slice[x, y]:
                continue
            d = min(max(abs(x - a), abs(y - b)) for a, b in obj)
            if d == margin:
                ring.add((x, y))
    return ring


_TAN_LO = 0.4142135623730951
_TAN_HI = 2.414213562373095


def edge_slice_reference(img: np.ndarray, threshold: float) -> np.ndarray:
    """Per-pixel loop edition of the slice edge detector definition."""
    h, w = img.shape
    img = img.astype(np.float64)

    def px(i, j):
        return img[min(max(i, 0), h - 1), min(max(j, 0), w - 1)]

    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            gx[i, j] = (px(i + 1, j) - px(i - 1, j)) / 2.0
            gy[i, j] = (px(i, j + 1) - px(i, j - 1)) / 2.0
    mag = np.sqrt(gx ** 2 + gy ** 2)
    lo, hi = mag.min(), mag.max()
    if hi <= lo:
        return np.zeros((h, w), dtype=bool)
    mag = (mag - lo) / (hi - lo)

    def mag_at(i, j):
        if 0 <= i < h and 0 <= j < w:
            return mag[i, j]
        return 0.0

    out = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            fx, fy = gx[i, j], gy[i, j]
            if fx < 0 or (fx == 0 and fy < 0):
                fx, fy = -fx, -fy
            ax, ay = abs(fx), abs(fy)
            if ay <= _TAN_LO * ax:
                d = (1, 0)
            elif ay >= _TAN_HI * ax:
                d = (0, 1)
            elif fy > 0:
                d = (1, 1)
            else:
                d = (1, -1)
            fwd = mag_at(i + d[0], j + d[1])
            bwd = mag_at(i - d[0], j - d[1])
            out[i, j] = mag[i, j] >= bwd and mag[i, j] > fwd and mag[i, j] >= threshold
    return out


def random_partition(rng, shape, n_cells):
    """Random connected-ish partition: nearest of n random anchors."""
    anchors = np.stack(
        [rng.integers(0, s, size=n_cells) for s in shape], axis=1
    ).astype(np.float64)
    grid = np.stack(
        np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"), axis=-1
    ).astype(np.float64)
    d = ((grid[..., None, :] - anchors[None, None, None, :, :]) ** 2).sum(axis=-1)
    ids = np.argmin(d, axis=-1).astype(np.int32)
    # compact ids so every one occurs
    uniq = np.unique(ids)
    remap = np.zeros(int(uniq.max()) + 1, dtype=np.int32)
    remap[uniq] = np.arange(len(uniq), dtype=np.int32)
    return remap[ids]

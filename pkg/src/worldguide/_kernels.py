"""Compiled inner loops for the point splat rasterizer.

All large buffers are caller-provided so a trajectory render can reuse one
workspace across frames; per-frame heap churn at full resolution is what
dominates render time otherwise.

project_bin_points performs the projection tail (pixel coordinates,
visibility, tile binning) with the same scalar IEEE operations, in the
same order, as the reference camera projection, so rendered depths stay
bit-identical to it. Points are bucketed per tile with a counting sort
that preserves point order, so every tile sees its points in ascending
index order. Rendering a tile is then a sequential scan: a strict depth
test keeps the nearest point and, on exact depth ties, the lowest index
(the first writer wins). Tiles own disjoint pixels, which makes any
schedule of tile execution produce identical buffers.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def project_bin_points(
    cam, fx, fy, cx, cy, radius, tile, ntx, nty, width, height,
    px, py, z, vis, offsets, plist,
):
    """Project camera-frame points to pixels and bucket them into tiles.

    cam holds camera-frame coordinates (n, 3). A point is visible when its
    depth is positive and its rounded pixel lies inside the image; only
    visible points are binned. Fills px/py/z/vis per point and the CSR
    pair (offsets, plist): tile t owns plist[offsets[t]:offsets[t+1]] in
    ascending point order.
    """
    n = cam.shape[0]
    ntiles = ntx * nty
    for t in range(ntiles + 1):
        offsets[t] = 0
    for i in range(n):
        zi = cam[i, 2]
        z[i] = zi
        vis[i] = False
        px[i] = -1
        py[i] = -1
        if zi <= 0.0:
            continue
        u = fx * cam[i, 0] / zi + cx
        v = fy * cam[i, 1] / zi + cy
        fu = np.floor(u + 0.5)
        fv = np.floor(v + 0.5)
        if not (0.0 <= fu <= width - 1.0 and 0.0 <= fv <= height - 1.0):
            continue
        vis[i] = True
        xi = np.int64(fu)
        yi = np.int64(fv)
        px[i] = xi
        py[i] = yi
        x0 = max(xi - radius, 0)
        x1 = min(xi + radius, width - 1)
        y0 = max(yi - radius, 0)
        y1 = min(yi + radius, height - 1)
        for ty in range(y0 // tile, y1 // tile + 1):
            for tx in range(x0 // tile, x1 // tile + 1):
                offsets[ty * ntx + tx + 1] += 1
    for t in range(ntiles):
        offsets[t + 1] += offsets[t]
    cursor = offsets[:ntiles].copy()
    for i in range(n):
        if not vis[i]:
            continue
        x0 = max(px[i] - radius, 0)
        x1 = min(px[i] + radius, width - 1)
        y0 = max(py[i] - radius, 0)
        y1 = min(py[i] + radius, height - 1)
        for ty in range(y0 // tile, y1 // tile + 1):
            for tx in range(x0 // tile, x1 // tile + 1):
                t = ty * ntx + tx
                plist[cursor[t]] = i
                cursor[t] += 1


@njit(cache=True, nogil=True)
def compose_output(zbuf, win, colors, color_out, depth_out, mask_out):
    """Gather winner colors/depths into flat (pre-zeroed) output buffers."""
    for p in range(zbuf.shape[0]):
        i = win[p]
        if i >= 0:
            mask_out[p] = True
            depth_out[p] = zbuf[p]
            color_out[p, 0] = colors[i, 0]
            color_out[p, 1] = colors[i, 1]
            color_out[p, 2] = colors[i, 2]


@njit(cache=True, nogil=True)
def raster_tiles(
    tile_lo, tile_hi, offsets, plist, px, py, z,
    radius, tile, ntx, width, height, zbuf, win,
):
    """Render tiles [tile_lo, tile_hi) into the shared z/winner buffers.

    zbuf holds camera-frame depth (init +inf), win the winning point index
    (init -1). Only pixels inside the rendered tiles are written.
    """
    for t in range(tile_lo, tile_hi):
        tx = t % ntx
        ty = t // ntx
        tx0 = tx * tile
        ty0 = ty * tile
        tx1 = min(tx0 + tile, width) - 1
        ty1 = min(ty0 + tile, height) - 1
        for k in range(offsets[t], offsets[t + 1]):
            i = plist[k]
            zi = z[i]
            x0 = max(px[i] - radius, tx0)
            x1 = min(px[i] + radius, tx1)
            y0 = max(py[i] - radius, ty0)
            y1 = min(py[i] + radius, ty1)
            for qy in range(y0, y1 + 1):
                base = qy * width
                for qx in range(x0, x1 + 1):
                    p = base + qx
                    if zi < zbuf[p]:
                        zbuf[p] = zi
                        win[p] = i

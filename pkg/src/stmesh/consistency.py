"""Geometry-only frame scoring: rasterised depth and normal buffers, exact
flow from depth and camera motion, backward warping, masked SSIM on encoded
normals, mean normal difference and valley severity."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .trajectory import CameraPath, CameraSample

NEAR = 1e-3
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 1.0
CSV_HEADER = "frame,t,ssim,normal_diff_deg,valley_severity"


class ScoreError(ValueError):
    pass


@dataclass
class FrameBuffers:
    width: int
    height: int
    depth: np.ndarray  # (H, W), +inf where empty
    normal: np.ndarray  # (H, W, 3), zero where empty
    coverage: np.ndarray  # (H, W) bool

    def encoded_normals(self) -> np.ndarray:
        return np.where(self.coverage[..., None], 0.5 * (self.normal + 1.0), 0.0)


# ---------------------------------------------------------------------------
# rasteriser


def _clip_near(cam_pts: np.ndarray, tris: np.ndarray):
    """Clip camera-space triangles against z = -NEAR; returns (M, 3, 3)
    camera-space triangles and the source triangle index of each."""
    P = cam_pts[tris]  # (T, 3, 3)
    inside = -P[..., 2] >= NEAR
    n_in = inside.sum(axis=1)
    keep = P[n_in == 3]
    src = [np.flatnonzero(n_in == 3)]
    out = [keep]
    partial = np.flatnonzero((n_in > 0) & (n_in < 3))
    extra, esrc = [], []
    for i in partial.tolist():
        poly = []
        tri = P[i]
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            ia, ib = -a[2] >= NEAR, -b[2] >= NEAR
            if ia:
                poly.append(a)
            if ia != ib:
                s = (-NEAR - a[2]) / (b[2] - a[2])
                poly.append(a + s * (b - a))
        for k in range(1, len(poly) - 1):
            extra.append([poly[0], poly[k], poly[k + 1]])
            esrc.append(i)
    if extra:
        out.append(np.array(extra))
        src.append(np.array(esrc, dtype=np.int64))
    return np.concatenate(out), np.concatenate(src)


def rasterize(vertices: np.ndarray, triangles: np.ndarray, cam: CameraSample, chunk: int = 2_000_000) -> FrameBuffers:
    """Z-buffered fill with a top-left rule at pixel centres; per-pixel
    perspective-correct view depth and the camera-facing face normal of the
    nearest triangle (ties go to the lower triangle index)."""
    W, H = cam.width, cam.height
    depth = np.full((H, W), np.inf)
    normal = np.zeros((H, W, 3))
    cov = np.zeros((H, W), dtype=bool)
    V = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    T = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(T) == 0:
        return FrameBuffers(W, H, depth, normal, cov)
    # world face normals facing the camera
    a, b, c = V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]
    n = np.cross(b - a, c - a)
    ln = np.linalg.norm(n, axis=1)
    good = ln > 0
    n = np.where(good[:, None], n / np.where(good, ln, 1.0)[:, None], 0.0)
    facing = ((np.asarray(cam.position) - a) * n).sum(axis=1)
    n = np.where((facing < 0)[:, None], -n, n)

    cp = cam.world_to_camera(V)
    tri_c, src = _clip_near(cp, T[good])
    src = np.flatnonzero(good)[src]
    if len(tri_c) == 0:
        return FrameBuffers(W, H, depth, normal, cov)
    f = cam.focal
    z = -tri_c[..., 2]  # (M, 3) positive view depth
    u = 0.5 * W + f * tri_c[..., 0] / z
    v = 0.5 * H - f * tri_c[..., 1] / z
    area = (u[:, 1] - u[:, 0]) * (v[:, 2] - v[:, 0]) - (v[:, 1] - v[:, 0]) * (u[:, 2] - u[:, 0])
    ok = area != 0
    flip = area < 0
    # orient every triangle so its signed area is positive
    u = np.where(flip[:, None], u[:, [0, 2, 1]], u)
    v = np.where(flip[:, None], v[:, [0, 2, 1]], v)
    z = np.where(flip[:, None], z[:, [0, 2, 1]], z)
    area = np.abs(area)
    x0 = np.clip(np.floor(u.min(axis=1) - 0.5), 0, W).astype(np.int64)
    x1 = np.clip(np.ceil(u.max(axis=1) - 0.5) + 1, 0, W).astype(np.int64)
    y0 = np.clip(np.floor(v.min(axis=1) - 0.5), 0, H).astype(np.int64)
    y1 = np.clip(np.ceil(v.max(axis=1) - 0.5) + 1, 0, H).astype(np.int64)
    bw, bh = x1 - x0, y1 - y0
    ok &= (bw > 0) & (bh > 0)
    idx = np.flatnonzero(ok)
    counts = (bw * bh)[idx]
    best_pix, best_z, best_t = [], [], []
    start = 0
    while start < len(idx):
        # split into chunks bounded in candidate pairs
        cum = np.cumsum(counts[start:])
        stop = start + max(1, int(np.searchsorted(cum, chunk, side="right")))
        sel = idx[start:stop]
        cnt = counts[start:stop]
        tri = np.repeat(sel, cnt)
        local = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        px = x0[tri] + local % bw[tri]
        py = y0[tri] + local // bw[tri]
        cx, cy = px + 0.5, py + 0.5
        w = []
        inside = np.ones(len(tri), dtype=bool)
        for k in range(3):
            i0, i1 = (k + 1) % 3, (k + 2) % 3
            ax, ay, bx, by = u[tri, i0], v[tri, i0], u[tri, i1], v[tri, i1]
            e = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            dx, dy = bx - ax, by - ay
            top_left = (dy < 0) | ((dy == 0) & (dx > 0))
            inside &= (e > 0) | ((e == 0) & top_left)
            w.append(e)
        tri, px, py = tri[inside], px[inside], py[inside]
        l0, l1, l2 = (wk[inside] / area[tri] for wk in w)
        inv_z = l0 / z[tri, 0] + l1 / z[tri, 1] + l2 / z[tri, 2]
        zz = 1.0 / inv_z
        best_pix.append(py * W + px)
        best_z.append(zz)
        best_t.append(tri)
        start = stop
    if best_pix:
        pix = np.concatenate(best_pix)
        zz = np.concatenate(best_z)
        tt = np.concatenate(best_t)
        order = np.lexsort((tt, zz, pix))
        pix, zz, tt = pix[order], zz[order], tt[order]
        first = np.concatenate([[True], pix[1:] != pix[:-1]])
        pix, zz, tt = pix[first], zz[first], tt[first]
        flat_d = depth.reshape(-1)
        flat_n = normal.reshape(-1, 3)
        flat_c = cov.reshape(-1)
        flat_d[pix] = zz
        flat_n[pix] = n[src[tt]]
        flat_c[pix] = True
    return FrameBuffers(W, H, depth, normal, cov)


def render_mesh(mesh3, cam: CameraSample) -> FrameBuffers:
    from .slicer import canonical_triangles

    V, T = canonical_triangles(mesh3, min_area=0.0)
    return rasterize(V, T, cam)


# ---------------------------------------------------------------------------
# flow and warping


def pixel_grid(W: int, H: int):
    yy, xx = np.mgrid[0:H, 0:W]
    return xx + 0.5, yy + 0.5


def unproject(buf: FrameBuffers, cam: CameraSample) -> np.ndarray:
    """World points for every pixel centre (NaN where uncovered)."""
    u, v = pixel_grid(buf.width, buf.height)
    f = cam.focal
    z = np.where(buf.coverage, buf.depth, np.nan)
    xc = (u - 0.5 * buf.width) / f * z
    yc = -(v - 0.5 * buf.height) / f * z
    pc = np.stack([xc, yc, -z], axis=-1)
    return pc @ cam.rotation.T + np.asarray(cam.position)


def ground_truth_flow(buf: FrameBuffers, cam_a: CameraSample, cam_b: CameraSample):
    """(flow (H, W, 2), expected depth in cam_b, defined mask)."""
    X = unproject(buf, cam_a)
    uv, d = cam_b.project(X)
    u, v = pixel_grid(buf.width, buf.height)
    flow = np.stack([uv[..., 0] - u, uv[..., 1] - v], axis=-1)
    defined = buf.coverage & np.isfinite(flow).all(axis=-1) & (d > 0)
    flow = np.where(defined[..., None], flow, np.nan)
    return flow, np.where(defined, d, np.nan), defined


def warp(image: np.ndarray, flow: np.ndarray, source_mask: np.ndarray | None = None):
    """Backward bilinear warp: out(p) = image(p + flow(p)).  Returns the
    warped image and its validity mask (undefined flow, out-of-bounds or
    uncovered source samples are invalid)."""
    H, W = image.shape[:2]
    img = image.reshape(H, W, -1)
    u, v = pixel_grid(W, H)
    x = u + flow[..., 0] - 0.5
    y = v + flow[..., 1] - 0.5
    valid = np.isfinite(x) & np.isfinite(y)
    x = np.where(valid, x, -1.0)
    y = np.where(valid, y, -1.0)
    valid &= (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
    x0 = np.clip(np.floor(x), 0, max(W - 2, 0)).astype(np.int64)
    y0 = np.clip(np.floor(y), 0, max(H - 2, 0)).astype(np.int64)
    wx = np.where(valid, x - x0, 0.0)
    wy = np.where(valid, y - y0, 0.0)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    taps = (
        (y0, x0, (1 - wx) * (1 - wy)),
        (y0, x1, wx * (1 - wy)),
        (y1, x0, (1 - wx) * wy),
        (y1, x1, wx * wy),
    )
    out = np.zeros_like(img, dtype=np.float64)
    for yy, xx, w in taps:
        if source_mask is not None:
            valid &= (w == 0) | source_mask[yy, xx]
        out += w[..., None] * img[yy, xx]
    out = np.where(valid[..., None], out, 0.0)
    return out.reshape(image.shape), valid


# ---------------------------------------------------------------------------
# scores


def gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _blur(img, g):
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    return ndimage.correlate1d(out, g, axis=1, mode="constant")


def ssim_score(a: np.ndarray, b: np.ndarray, mask: np.ndarray, data_range: float = SSIM_RANGE) -> float:
    """Mean SSIM over masked pixels and channels; local statistics are
    Gaussian weighted and renormalised over the mask."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ScoreError("empty mask")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    g = gaussian_kernel()
    m = mask.astype(np.float64)
    wsum = _blur(m, g)
    wsum = np.where(wsum > 0, wsum, 1.0)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    vals = []
    for ch in range(a.shape[-1]):
        x, y = a[..., ch] * m, b[..., ch] * m
        mx = _blur(x, g) / wsum
        my = _blur(y, g) / wsum
        sxx = _blur(x * a[..., ch], g) / wsum - mx * mx
        syy = _blur(y * b[..., ch], g) / wsum - my * my
        sxy = _blur(x * b[..., ch], g) / wsum - mx * my
        s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        vals.append(s[mask])
    return float(np.mean(np.concatenate(vals)))


def normal_difference(n_a: np.ndarray, n_b: np.ndarray, mask: np.ndarray) -> float:
    """Mean angle in degrees between unit normals over the mask."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ScoreError("empty overlap")
    a = n_a[mask]
    b = n_b[mask]
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    dot = np.clip((a * b).sum(axis=1), -1.0, 1.0)
    return float(np.degrees(np.arccos(dot)).mean())


def valley_severity(scores: Sequence[float]) -> np.ndarray:
    """S[i-1] + S[i+1] - 2 S[i] for interior i; NaN at both ends."""
    s = np.asarray(scores, dtype=np.float64)
    out = np.full(len(s), np.nan)
    if len(s) >= 3:
        out[1:-1] = s[:-2] + s[2:] - 2 * s[1:-1]
    return out


@dataclass
class PairScore:
    ssim: float
    normal_diff: float
    mask_pixels: int


def score_pair(buf_a: FrameBuffers, buf_b: FrameBuffers, cam_a: CameraSample, cam_b: CameraSample,
               depth_tol: float = 0.02) -> PairScore:
    """S_i = SSIM(I_i, warp(I_{i+1}, F_{i->i+1})) on encoded normals, and
    the mean normal angle over the same co-visible mask."""
    flow, exp_depth, defined = ground_truth_flow(buf_a, cam_a, cam_b)
    img_b = np.concatenate([buf_b.encoded_normals(), buf_b.depth[..., None]], axis=-1)
    img_b[..., 3] = np.where(buf_b.coverage, buf_b.depth, 0.0)
    warped, valid = warp(img_b, flow, source_mask=buf_b.coverage)
    valid &= defined
    # occlusion: the warped depth must agree with the reprojected depth
    wd = warped[..., 3]
    valid &= np.abs(wd - np.nan_to_num(exp_depth)) <= depth_tol * np.nan_to_num(exp_depth) + 1e-9
    if not valid.any():
        raise ScoreError("no co-visible pixels")
    enc_a = buf_a.encoded_normals()
    enc_b = warped[..., :3]
    s = ssim_score(enc_a, enc_b, valid)
    nd = normal_difference(buf_a.normal, 2.0 * enc_b - 1.0, valid)
    return PairScore(s, nd, int(valid.sum()))


@dataclass
class ConsistencyReport:
    label: str
    times: np.ndarray
    ssim: np.ndarray
    normal_diff: np.ndarray
    severity: np.ndarray
    meta: dict = dc_field(default_factory=dict)

    def to_csv(self) -> str:
        lines = [
            f"# method={self.label} ssim_window={SSIM_WINDOW} sigma={SSIM_SIGMA} k1={SSIM_K1} k2={SSIM_K2} range={SSIM_RANGE}"
        ]
        for k, v in sorted(self.meta.items()):
            lines.append(f"# {k}={v}")
        lines.append(CSV_HEADER)
        for i, t in enumerate(self.times.tolist()):
            lines.append(",".join([str(i), repr(t), _num(self.ssim[i]), _num(self.normal_diff[i]), _num(self.severity[i])]))
        return "\n".join(lines) + "\n"

    def max_severity(self) -> float:
        s = self.severity[np.isfinite(self.severity)]
        return float(s.max()) if s.size else 0.0


def _num(x) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


def consistency_series(meshes: Sequence, path: CameraPath, label: str = "ours") -> ConsistencyReport:
    """Score every consecutive frame pair; failures become gaps (NaN)."""
    L = len(path)
    if len(meshes) != L:
        raise ValueError(f"{len(meshes)} meshes for {L} frames")
    bufs = [render_mesh(m, path[i]) for i, m in enumerate(meshes)]
    ssim = np.full(L, np.nan)
    nd = np.full(L, np.nan)
    for i in range(L - 1):
        try:
            r = score_pair(bufs[i], bufs[i + 1], path[i], path[i + 1])
        except ScoreError:
            continue
        ssim[i], nd[i] = r.ssim, r.normal_diff
    sev = valley_severity(ssim)
    return ConsistencyReport(label, path.times.copy(), ssim, nd, sev)


def spearman(a, b) -> float:
    from scipy.stats import spearmanr

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ok = np.isfinite(a) & np.isfinite(b)
    return float(spearmanr(a[ok], b[ok]).statistic)


# ---------------------------------------------------------------------------
# plot


def svg_plot(reports: Sequence[ConsistencyReport], series: str = "ssim", width: int = 800, height: int = 300) -> str:
    """One polyline per report, frame index on x."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    pad = 45
    vals = [getattr(r, series) for r in reports]
    finite = np.concatenate([v[np.isfinite(v)] for v in vals]) if vals else np.zeros(0)
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    n = max(len(v) for v in vals) if vals else 1
    sx = (width - 2 * pad) / max(n - 1, 1)
    sy = (height - 2 * pad) / (hi - lo)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">frame</text>',
        f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})" text-anchor="middle">{series}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end" font-size="10">{hi:.4g}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end" font-size="10">{lo:.4g}</text>',
    ]
    for k, (r, v) in enumerate(zip(reports, vals)):
        col = colors[k % len(colors)]
        seg, segs = [], []
        for i, y in enumerate(v.tolist()):
            if math.isfinite(y):
                seg.append(f"{pad + i * sx:.2f},{height - pad - (y - lo) * sy:.2f}")
            elif seg:
                segs.append(seg)
                seg = []
        if seg:
            segs.append(seg)
        for s in segs:
            out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.2" points="{" ".join(s)}"/>')
        out.append(f'<text x="{width - pad}" y="{pad + 14 * k}" text-anchor="end" font-size="11" fill="{col}">{r.label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# surface sampling for distance checks


def sample_surface(vertices: np.ndarray, triangles: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
    """Area-weighted random points on a triangle mesh."""
    rng = np.random.default_rng(seed)
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    if area.sum() <= 0:
        raise ValueError("mesh has zero area")
    tri = rng.choice(len(triangles), size=n, p=area / area.sum())
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    w0, w1, w2 = 1 - s, s * (1 - r2), s * r2
    return w0[:, None] * a[tri] + w1[:, None] * b[tri] + w2[:, None] * c[tri]

"""Pixel-level transforms on float32 CHW images in [0, 1].

Resampling is bilinear with half-pixel centers and edge-replicate handling
of out-of-bounds samples, so every transform keeps values inside the convex
hull of the source pixels.
"""

import numpy as np


def _bilinear_sample(img, ys, xs):
    """Sample CHW image at float coordinates (edge replicate)."""
    c, h, w = img.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(np.float32)
    fx = (xs - x0).astype(np.float32)
    top = img[:, y0, x0] * (1 - fx) + img[:, y0, x1] * fx
    bot = img[:, y1, x0] * (1 - fx) + img[:, y1, x1] * fx
    return top * (1 - fy) + bot * fy


def bilinear_resize(img, out_h, out_w):
    """Resize CHW -> C x out_h x out_w, half-pixel-center sampling."""
    img = np.ascontiguousarray(img, dtype=np.float32)
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    grid_y = np.repeat(ys, out_w)
    grid_x = np.tile(xs, out_h)
    out = _bilinear_sample(img, grid_y, grid_x)
    return out.reshape(c, out_h, out_w)


def rotate(img, degrees):
    """Rotate about the image center; bilinear, edge-replicate fill."""
    img = np.ascontiguousarray(img, dtype=np.float32)
    c, h, w = img.shape
    theta = np.deg2rad(degrees)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = yy - cy, xx - cx
    # inverse map: destination pixel pulled from source rotated by -theta
    src_y = cy + cos_t * dy - sin_t * dx
    src_x = cx + sin_t * dy + cos_t * dx
    out = _bilinear_sample(img, src_y.ravel(), src_x.ravel())
    return out.reshape(c, h, w)


def hflip(img):
    return np.ascontiguousarray(img[:, :, ::-1])


def vflip(img):
    return np.ascontiguousarray(img[:, ::-1, :])


def brightness(img, factor):
    return np.clip(img * np.float32(factor), 0.0, 1.0)


def center_zoom(img, factor):
    """Crop the central 1/factor region and resize back to the original size."""
    c, h, w = img.shape
    ch = max(1, int(round(h / factor)))
    cw = max(1, int(round(w / factor)))
    y0 = (h - ch) // 2
    x0 = (w - cw) // 2
    crop = img[:, y0 : y0 + ch, x0 : x0 + cw]
    return bilinear_resize(crop, h, w)

"""View synthesis and photometric objectives.

Forward functions come with hand-written backward passes used by
:mod:`rigcal.gradients`. Images are float arrays of shape (H, W, 3) with
values in [0, 1]; depth maps are (H, W) arrays in metres.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .camera import Z_MIN, Intrinsics, pixel_rays, valid_depth
from .errors import InvalidArgumentError
from .geometry import SE3Pose

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
# projections this close outside the image (round-off) still count as inside
BOUND_TOL = 1e-6


@dataclass(frozen=True)
class PhotometricWeights:
    alpha_ssim: float = 0.85
    smoothness_weight: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.alpha_ssim <= 1.0:
            raise InvalidArgumentError("alpha_ssim must lie in [0, 1]")
        if self.smoothness_weight < 0:
            raise InvalidArgumentError("smoothness_weight must be >= 0")


def _check_same_shape(a, b, what="images"):
    if np.shape(a) != np.shape(b):
        raise InvalidArgumentError(f"{what} have different shapes {np.shape(a)} and {np.shape(b)}")


# ---------------------------------------------------------------- box filter

def _box1(x, axis):
    x = np.moveaxis(x, axis, 0)
    p = np.concatenate([x[1:2], x, x[-2:-1]])
    return np.moveaxis((p[:-2] + p[1:-1] + p[2:]) * (1.0 / 3.0), 0, axis)


def _box1_adjoint(g, axis):
    g = np.moveaxis(g, axis, 0) * (1.0 / 3.0)
    out = g.copy()
    out[1:] += g[:-1]
    out[:-1] += g[1:]
    # fold the reflected border samples back onto their sources
    out[1] += g[0]
    out[-2] += g[-1]
    return np.moveaxis(out, 0, axis)


def box3(x):
    """3x3 mean over the first two axes with reflection padding."""
    return _box1(_box1(np.asarray(x, dtype=float), 0), 1)


def box3_adjoint(g):
    """Adjoint of :func:`box3`."""
    return _box1_adjoint(_box1_adjoint(np.asarray(g, dtype=float), 0), 1)


# ---------------------------------------------------------------- SSIM

def _ssim_terms(x, y):
    mx, my, exx, eyy, exy = np.moveaxis(box3(np.stack([x, y, x * x, y * y, x * y], axis=-1)), -1, 0)
    sxx = exx - mx * mx
    syy = eyy - my * my
    sxy = exy - mx * my
    a = 2.0 * mx * my + SSIM_C1
    b = 2.0 * sxy + SSIM_C2
    c = mx * mx + my * my + SSIM_C1
    d = sxx + syy + SSIM_C2
    return mx, my, a, b, c, d


def ssim(a, b):
    """Per-pixel SSIM with a 3x3 box window; same shape as the inputs."""
    _check_same_shape(a, b)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _, _, na, nb, dc, dd = _ssim_terms(a, b)
    return (na * nb) / (dc * dd)


def _ssim_backward_y(x, y, g_s, terms=None):
    """Gradient w.r.t. ``y`` of sum(g_s * ssim(x, y))."""
    mx, my, a, b, c, d = _ssim_terms(x, y) if terms is None else terms
    den = c * d
    s = a * b / den
    d_my = (2.0 * mx * (b - a) - s * 2.0 * my * (d - c)) / den
    d_exy = 2.0 * a / den
    d_eyy = -s * c / den
    a_my, a_eyy, a_exy = np.moveaxis(box3_adjoint(np.stack([g_s * d_my, g_s * d_eyy, g_s * d_exy], axis=-1)), -1, 0)
    return a_my + 2.0 * y * a_eyy + x * a_exy


# ---------------------------------------------------------------- photometric

def photometric_map_vjp(target, synthesized, alpha=0.85):
    """Per-pixel photometric error (channel mean) and its vector-Jacobian product.

    Returns ``(map, backward)`` where ``backward(g_map)`` is the gradient of
    ``sum(g_map * map)`` w.r.t. ``synthesized``.
    """
    _check_same_shape(target, synthesized)
    x = np.asarray(target, dtype=float)
    y = np.asarray(synthesized, dtype=float)
    terms = _ssim_terms(x, y)
    _, _, na, nb, dc, dd = terms
    per = alpha * (1.0 - na * nb / (dc * dd)) * 0.5 + (1.0 - alpha) * np.abs(x - y)
    colour = per.ndim == 3

    def backward(g_map):
        g = g_map[..., None] / y.shape[2] if colour else g_map
        # L1 subgradient is 0 at ties
        grad = (1.0 - alpha) * np.sign(y - x) * g
        if alpha:
            grad += _ssim_backward_y(x, y, -0.5 * alpha * np.broadcast_to(g, y.shape), terms)
        return grad

    return (per.mean(axis=-1) if colour else per), backward


def photometric_map(target, synthesized, alpha=0.85):
    """Per-pixel photometric error (channel mean), shape (H, W)."""
    return photometric_map_vjp(target, synthesized, alpha)[0]


def photometric_map_backward(target, synthesized, g_map, alpha=0.85):
    """Gradient w.r.t. ``synthesized`` of sum(g_map * photometric_map)."""
    return photometric_map_vjp(target, synthesized, alpha)[1](g_map)


def photometric_loss(target, synthesized, mask, w: PhotometricWeights = PhotometricWeights()):
    """Mean photometric error over valid pixels.

    Returns NaN (the empty result) when ``mask`` has no valid pixel.
    """
    _check_same_shape(target, synthesized)
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        return float("nan")
    per = photometric_map(target, synthesized, w.alpha_ssim)
    return float(per[mask].sum() / n)


def min_reprojection(losses):
    """Per-pixel minimum over ``[(map, mask), ...]``.

    Returns ``(map, mask, index)``: the pixel is invalid only where every input
    is invalid; ``index`` names the winning input (-1 where invalid).
    """
    if not losses:
        raise InvalidArgumentError("min_reprojection needs at least one loss map")
    maps = np.stack([np.where(m, l, np.inf) for l, m in losses])
    idx = np.argmin(maps, axis=0)
    best = np.take_along_axis(maps, idx[None], axis=0)[0]
    valid = np.isfinite(best)
    return np.where(valid, best, 0.0), valid, np.where(valid, idx, -1)


# ---------------------------------------------------------------- smoothness

def smoothness_loss(depth, image):
    """Edge-aware first-order smoothness of a depth map."""
    return smoothness_loss_and_grad(depth, image)[0]


def smoothness_loss_and_grad(depth, image):
    depth = np.asarray(depth, dtype=float)
    image = np.asarray(image, dtype=float)
    if depth.shape != image.shape[:2]:
        raise InvalidArgumentError("depth and image sizes differ")
    img = image if image.ndim == 3 else image[..., None]
    dx = depth[:, 1:] - depth[:, :-1]
    dy = depth[1:, :] - depth[:-1, :]
    wx = np.exp(-np.abs(img[:, 1:] - img[:, :-1]).mean(axis=-1))
    wy = np.exp(-np.abs(img[1:, :] - img[:-1, :]).mean(axis=-1))
    loss = float((np.abs(dx) * wx).mean() + (np.abs(dy) * wy).mean())
    gx = np.sign(dx) * wx / dx.size
    gy = np.sign(dy) * wy / dy.size
    grad = np.zeros_like(depth)
    grad[:, 1:] += gx
    grad[:, :-1] -= gx
    grad[1:, :] += gy
    grad[:-1, :] -= gy
    return loss, grad


# ---------------------------------------------------------------- warping

@lru_cache(maxsize=32)
def _rays(k: Intrinsics):
    r = pixel_rays(k)
    r.setflags(write=False)
    return r


@dataclass
class WarpCache:
    """Intermediate values of one warp, kept for the backward pass."""

    points: np.ndarray      # target-frame points Q, (H, W, 3)
    moved: np.ndarray       # R Q + t in the context frame
    u: np.ndarray
    v: np.ndarray
    u0: np.ndarray
    v0: np.ndarray
    fu: np.ndarray
    fv: np.ndarray
    mask: np.ndarray
    image: np.ndarray
    corners: tuple
    k_context: Intrinsics
    rotation: np.ndarray


def warp_forward(target_depth, context_image, k_target: Intrinsics, k_context: Intrinsics,
                 rotation, translation, frozen=None):
    """Synthesise the target view from the context image.

    ``frozen=(u0, v0, mask)`` pins the bilinear cells and the validity mask,
    which turns the warp into a smooth function of the pose (used by
    finite-difference checks).
    """
    depth = np.asarray(target_depth, dtype=float)
    ctx = np.asarray(context_image, dtype=float)
    if depth.shape != k_target.shape:
        raise InvalidArgumentError(f"depth shape {depth.shape} != target intrinsics {k_target.shape}")
    if ctx.shape[:2] != k_context.shape:
        raise InvalidArgumentError(f"context image shape {ctx.shape} != context intrinsics {k_context.shape}")
    if ctx.ndim == 2:
        ctx = ctx[..., None]
    h_c, w_c = k_context.shape
    dvalid = valid_depth(depth)
    q = _rays(k_target) * np.where(dvalid, depth, 0.0)[..., None]
    rotation = np.asarray(rotation, dtype=float)
    p = q @ rotation.T + np.asarray(translation, dtype=float)
    z = p[..., 2]
    front = dvalid & (z > Z_MIN)
    zs = np.where(front, z, 1.0)
    u = k_context.fx * p[..., 0] / zs + k_context.cx
    v = k_context.fy * p[..., 1] / zs + k_context.cy
    if frozen is None:
        mask = (front & (u >= -BOUND_TOL) & (u <= w_c - 1 + BOUND_TOL)
                & (v >= -BOUND_TOL) & (v <= h_c - 1 + BOUND_TOL))
        u0 = np.clip(np.floor(np.where(mask, u, 0.0)), 0, w_c - 2).astype(np.intp)
        v0 = np.clip(np.floor(np.where(mask, v, 0.0)), 0, h_c - 2).astype(np.intp)
    else:
        u0, v0, mask = frozen
    fu = np.where(mask, u - u0, 0.0)[..., None]
    fv = np.where(mask, v - v0, 0.0)[..., None]
    i00 = ctx[v0, u0]
    i01 = ctx[v0, u0 + 1]
    i10 = ctx[v0 + 1, u0]
    i11 = ctx[v0 + 1, u0 + 1]
    top = i00 + fu * (i01 - i00)
    bot = i10 + fu * (i11 - i10)
    img = top + fv * (bot - top)
    img = np.where(mask[..., None], img, 0.0)
    return WarpCache(q, p, u, v, u0, v0, fu, fv, mask, img, (i00, i01, i10, i11), k_context, rotation)


def warp_backward(cache: WarpCache, g_image):
    """Back-propagate an image gradient to the relative pose.

    Returns ``(g_rotation (3, 3), g_translation (3,), g_log_depth_scale)``
    where the last term is the derivative w.r.t. a multiplicative log-scale
    applied to the whole target depth map.
    """
    i00, i01, i10, i11 = cache.corners
    fu, fv = cache.fu, cache.fv
    d_du = (1.0 - fv) * (i01 - i00) + fv * (i11 - i10)
    d_dv = (1.0 - fu) * (i10 - i00) + fu * (i11 - i01)
    m = cache.mask
    g_u = np.where(m, (g_image * d_du).sum(axis=-1), 0.0)
    g_v = np.where(m, (g_image * d_dv).sum(axis=-1), 0.0)
    p = cache.moved
    zs = np.where(m, p[..., 2], 1.0)
    k = cache.k_context
    a = g_u * k.fx / zs
    b = g_v * k.fy / zs
    g_p = np.stack([a, b, -(a * p[..., 0] + b * p[..., 1]) / zs], axis=-1)
    g_p = g_p[m]
    q = cache.points[m]
    g_r = g_p.T @ q
    g_t = g_p.sum(axis=0)
    # d(RQe^s + t)/ds = RQ, so the scale gradient is <R, g_r>
    g_s = float(np.sum(cache.rotation * g_r))
    return g_r, g_t, g_s


def synthesize(target_depth, context_image, k_target: Intrinsics, k_context: Intrinsics,
               relative_pose: SE3Pose):
    """Warp ``context_image`` into the target view.

    ``relative_pose`` maps target-camera coordinates to context-camera
    coordinates. Returns ``(image, mask)``; invalid pixels are zero.
    """
    c = warp_forward(target_depth, context_image, k_target, k_context,
                     relative_pose.rotation, relative_pose.translation)
    img = c.image
    if np.ndim(context_image) == 2:
        img = img[..., 0]
    return img, c.mask

"""Loss evaluation with hand-derived reverse-mode gradients.

All trainable quantities live in one flat vector described by
:class:`ParamLayout`:

* ``base``      (N, 6)     per-camera extrinsics
* ``residual``  (N, S, 6)  per-sequence extrinsic residuals
* ``ego``       (G, N, 6)  per-group ego-motion corrections ``C`` (applied as ``C @ X_obs``,
                           after which the translation is rescaled to the observed length)
* ``depth``     (N,)       per-camera log-scale applied to the oracle depth maps
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, ObservationSet
from .errors import InvalidArgumentError
from .geometry import euler_jacobian_batch, euler_to_rotation_batch, geodesic_angle, geodesic_angle_grad
from .losses import EPS_NORM, PoseConsistencyWeights
from .warp import PhotometricWeights, min_reprojection, photometric_map_vjp, smoothness_loss, warp_backward, warp_forward

PARAM_GROUPS = ("rotation", "translation", "ego", "depth")


@dataclass(frozen=True)
class ParamLayout:
    n_cameras: int
    n_sequences: int
    n_groups: int
    reference_camera: int = 0

    @property
    def sizes(self):
        n, s, g = self.n_cameras, self.n_sequences, self.n_groups
        return {"base": n * 6, "residual": n * s * 6, "ego": g * n * 6, "depth": n}

    @property
    def size(self):
        return sum(self.sizes.values())

    def slices(self):
        out, start = {}, 0
        for name, size in self.sizes.items():
            out[name] = slice(start, start + size)
            start += size
        return out

    def pack(self, base, residual, ego, depth):
        return np.concatenate([np.ravel(base), np.ravel(residual), np.ravel(ego), np.ravel(depth)]).astype(float)

    def unpack(self, flat):
        """Views into ``flat``: (base, residual, ego, depth)."""
        sl = self.slices()
        n, s, g = self.n_cameras, self.n_sequences, self.n_groups
        return (flat[sl["base"]].reshape(n, 6), flat[sl["residual"]].reshape(n, s, 6),
                flat[sl["ego"]].reshape(g, n, 6), flat[sl["depth"]])

    def mask(self, live, learn_residuals=False):
        """Boolean trainability mask for the named parameter groups in ``live``."""
        unknown = set(live) - set(PARAM_GROUPS)
        if unknown:
            raise InvalidArgumentError(f"unknown parameter groups {sorted(unknown)}")
        m = np.zeros(self.size, dtype=bool)
        base, residual, ego, depth = self.unpack(m)
        for name, cols in (("rotation", slice(0, 3)), ("translation", slice(3, 6))):
            if name in live:
                base[:, cols] = True
                if learn_residuals:
                    residual[:, :, cols] = True
        base[self.reference_camera] = False
        residual[self.reference_camera] = False
        if "ego" in live:
            ego[:] = True
        if "depth" in live:
            depth[:] = True
        return m


@dataclass
class ParamVector:
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.mask.shape:
            raise InvalidArgumentError("mask length differs from parameter vector length")


# ---------------------------------------------------------------- pose consistency

def pose_consistency_core(m_r, m_t, present, ext_r, ext_t, w: PoseConsistencyWeights, ref=0):
    """Summed pose-consistency loss of a batch and its gradients.

    ``m_r`` (B, N, 3, 3) / ``m_t`` (B, N, 3) are the (corrected) camera
    motions; ``ext_r`` / ``ext_t`` the extrinsics per row, (B, N, 3, 3) and
    (B, N, 3). The reference camera's extrinsics are the identity.

    Returns ``(loss_sum, g_m_r, g_m_t, g_ext_r, g_ext_t)``.
    """
    if not np.all(present[:, ref]):
        raise InvalidArgumentError("every group must contain the reference camera")
    b, n = m_t.shape[:2]
    others = np.array([j for j in range(n) if j != ref], dtype=int)
    live = present[:, others]
    rj = ext_r[:, others]
    tj = ext_t[:, others]
    mr = m_r[:, others]
    mt = m_t[:, others]
    rjt = np.swapaxes(rj, -1, -2)
    tr = rj @ mr @ rjt
    tt = (rj @ mt[..., None])[..., 0] + tj - (tr @ tj[..., None])[..., 0]
    a_r = np.broadcast_to(m_r[:, ref][:, None], tr.shape)
    a_t = m_t[:, ref][:, None]
    diff = a_t - tt
    ang = geodesic_angle(a_r, tr)
    per = w.alpha_t * np.einsum("bjk,bjk->bj", diff, diff) + w.alpha_r * ang
    loss = float(np.sum(np.where(live, per, 0.0)))

    lm = live[..., None].astype(float)
    g_tt = -2.0 * w.alpha_t * diff * lm
    g_ar, g_tr = geodesic_angle_grad(a_r, tr)
    g_ar = g_ar * (w.alpha_r * lm[..., None])
    g_tr = g_tr * (w.alpha_r * lm[..., None])
    # tt = Rj mt + tj - tr tj
    g_tr = g_tr - g_tt[..., :, None] * tj[..., None, :]
    g_rj = (g_tr @ rj @ np.swapaxes(mr, -1, -2) + np.swapaxes(g_tr, -1, -2) @ rj @ mr
            + g_tt[..., :, None] * mt[..., None, :])
    g_mr = rjt @ g_tr @ rj
    g_mt = (rjt @ g_tt[..., None])[..., 0]
    g_tj = g_tt - (np.swapaxes(tr, -1, -2) @ g_tt[..., None])[..., 0]

    g_m_r = np.zeros_like(m_r)
    g_m_t = np.zeros_like(m_t)
    g_ext_r = np.zeros_like(ext_r)
    g_ext_t = np.zeros_like(ext_t)
    g_m_r[:, others] = g_mr
    g_m_t[:, others] = g_mt
    g_m_r[:, ref] = g_ar.sum(axis=1)
    g_m_t[:, ref] = -g_tt.sum(axis=1)
    g_ext_r[:, others] = g_rj
    g_ext_t[:, others] = g_tj
    return loss, g_m_r, g_m_t, g_ext_r, g_ext_t


# ---------------------------------------------------------------- objective

class CalibrationObjective:
    """Batch loss over observation groups for a given set of active terms.

    ``dataset.sequences`` may be empty when only the pose-consistency term is
    used.
    """

    def __init__(self, dataset: Dataset, layout: ParamLayout, spatial_pairs=(),
                 pose_weights=PoseConsistencyWeights(), photo_weights=PhotometricWeights(),
                 use_pose=True, use_photometric=False, use_smoothness=False):
        self.dataset = dataset
        self.layout = layout
        self.pose_weights = pose_weights
        self.photo_weights = photo_weights
        self.use_pose = use_pose
        self.use_photometric = use_photometric
        self.use_smoothness = use_smoothness
        n = layout.n_cameras
        self.neighbours = [sorted({j for a, b in spatial_pairs for i_, j in ((a, b), (b, a)) if i_ == i})
                           for i in range(n)]
        self._smooth_cache = {}
        self._frozen = None
        obs = dataset.observations
        if len(obs) != layout.n_groups:
            raise InvalidArgumentError("layout group count does not match the observations")
        if (use_photometric or use_smoothness) and not dataset.sequences:
            raise InvalidArgumentError("photometric terms need image sequences")

    def freeze_sampling(self, on=True):
        """Record bilinear cells, validity masks and min-reprojection winners on the
        next evaluation and reuse them afterwards.

        The frozen objective is smooth in the parameters, so it can be checked
        against finite differences without crossing pixel-cell boundaries.
        """
        self._frozen = {} if on else None

    def _warp(self, key, depth, image, k_t, k_c, r, t):
        if self._frozen is None:
            return warp_forward(depth, image, k_t, k_c, r, t)
        cells = self._frozen.get(key)
        c = warp_forward(depth, image, k_t, k_c, r, t, cells)
        if cells is None:
            self._frozen[key] = (c.u0, c.v0, c.mask)
        return c

    def _min_reprojection(self, key, maps):
        best, valid, idx = min_reprojection(maps)
        if self._frozen is None:
            return best, valid, idx
        if key not in self._frozen:
            self._frozen[key] = idx
        idx = self._frozen[key]
        valid = idx >= 0
        stacked = np.stack([m for m, _ in maps])
        best = np.where(valid, np.take_along_axis(stacked, np.maximum(idx, 0)[None], axis=0)[0], 0.0)
        return best, valid, idx

    def _base_smoothness(self, s, t, i):
        key = (s, t, i)
        if key not in self._smooth_cache:
            seq = self.dataset.sequences[s]
            self._smooth_cache[key] = smoothness_loss(seq.depths[t, i], seq.images[t, i])
        return self._smooth_cache[key]

    def value_and_grad(self, flat, rows=None, need_grad=True):
        lay = self.layout
        obs: ObservationSet = self.dataset.observations
        rows = np.arange(len(obs)) if rows is None else np.asarray(rows, dtype=int)
        nb = len(rows)
        if nb == 0:
            return 0.0, np.zeros(lay.size)
        base, residual, ego, depth = lay.unpack(np.asarray(flat, dtype=float))
        n = lay.n_cameras

        eff = base[:, None, :] + residual                      # (N, S, 6)
        ext_r = euler_to_rotation_batch(eff[..., :3])          # (N, S, 3, 3)
        ext_t = eff[..., 3:]
        seq_idx = obs.sequence_index[rows]

        x_r = obs.rotations[rows]
        x_t = obs.translations[rows]
        ego_rows = ego[rows]
        c_r = euler_to_rotation_batch(ego_rows[..., :3])       # (B, N, 3, 3)
        m_r = c_r @ x_r
        raw_t = (c_r @ x_t[..., None])[..., 0] + ego_rows[..., 3:]
        # velocity supervision stays in force: corrections change the direction only
        obs_len = np.linalg.norm(x_t, axis=-1, keepdims=True)
        raw_len = np.linalg.norm(raw_t, axis=-1, keepdims=True)
        ok = raw_len > EPS_NORM
        unit = np.where(ok, raw_t / np.where(ok, raw_len, 1.0), 0.0)
        m_t = np.where(ok, obs_len * unit, raw_t)

        loss = 0.0
        g_m_r = np.zeros_like(m_r)
        g_m_t = np.zeros_like(m_t)
        g_ext_r = np.zeros_like(ext_r)
        g_ext_t = np.zeros_like(ext_t)
        g_depth = np.zeros(n)

        if self.use_pose:
            row_ext_r = np.swapaxes(ext_r[:, seq_idx], 0, 1)
            row_ext_t = np.swapaxes(ext_t[:, seq_idx], 0, 1)
            l, gmr, gmt, ger, get = pose_consistency_core(m_r, m_t, obs.present[rows], row_ext_r, row_ext_t,
                                                          self.pose_weights, lay.reference_camera)
            loss += l / nb
            g_m_r += gmr / nb
            g_m_t += gmt / nb
            np.add.at(g_ext_r, (slice(None), seq_idx), np.swapaxes(ger, 0, 1) / nb)
            np.add.at(g_ext_t, (slice(None), seq_idx), np.swapaxes(get, 0, 1) / nb)

        if self.use_photometric or self.use_smoothness:
            wgt = 1.0 / (n * nb)
            for b, r in enumerate(rows):
                s, t, tau = obs.keys[r]
                l = self._photometric_row(s, t, tau, b, m_r, m_t, ext_r, ext_t, depth, wgt,
                                          g_m_r, g_m_t, g_ext_r, g_ext_t, g_depth, need_grad)
                loss += l

        if not need_grad:
            return loss, None

        grad = np.zeros(lay.size)
        g_base, g_res, g_ego, g_dep = lay.unpack(grad)
        jac = euler_jacobian_batch(eff[..., :3])               # (N, S, 3, 3, 3)
        g_eff = np.zeros(eff.shape)
        g_eff[..., :3] = np.einsum("nsij,nskij->nsk", g_ext_r, jac)
        g_eff[..., 3:] = g_ext_t
        g_base[:] = g_eff.sum(axis=1)
        g_res[:] = g_eff
        # m_t = |x_t| raw / |raw|
        proj = g_m_t - unit * np.sum(unit * g_m_t, axis=-1, keepdims=True)
        g_raw = np.where(ok, proj * obs_len / np.where(ok, raw_len, 1.0), g_m_t)
        # M = C X  ->  dC_r = dM_r X_r^T + d(raw) X_t^T, dC_t = d(raw)
        g_c_r = g_m_r @ np.swapaxes(x_r, -1, -2) + g_raw[..., :, None] * x_t[..., None, :]
        jac_c = euler_jacobian_batch(ego_rows[..., :3])
        g_ego_rows = np.concatenate([np.einsum("bnij,bnkij->bnk", g_c_r, jac_c), g_raw], axis=-1)
        np.add.at(g_ego, rows, g_ego_rows)
        g_dep[:] = g_depth
        return loss, grad

    def _photometric_row(self, s, t, tau, b, m_r, m_t, ext_r, ext_t, depth, wgt,
                         g_m_r, g_m_t, g_ext_r, g_ext_t, g_depth, need_grad):
        seq = self.dataset.sequences[s]
        alpha = self.photo_weights.alpha_ssim
        loss = 0.0
        for i in range(self.layout.n_cameras):
            scale = float(np.exp(depth[i]))
            d = seq.depths[t, i] * scale
            target = seq.images[t, i]
            k_i = seq.intrinsics[i]
            if self.use_smoothness and self.photo_weights.smoothness_weight:
                sm = self.photo_weights.smoothness_weight * scale * self._base_smoothness(s, t, i) * wgt
                loss += sm
                g_depth[i] += sm
            if not self.use_photometric:
                continue
            # temporal: camera i from t to tau
            cache = self._warp(("temporal", s, t, tau, i), d, seq.images[tau, i], k_i, k_i, m_r[b, i], m_t[b, i])
            nv = int(cache.mask.sum())
            if nv:
                pm, vjp = photometric_map_vjp(target, cache.image, alpha)
                loss += wgt * float(pm[cache.mask].sum()) / nv
                if need_grad:
                    gr, gt, gs = self._backprop(cache, vjp, cache.mask * (wgt / nv))
                    g_m_r[b, i] += gr
                    g_m_t[b, i] += gt
                    g_depth[i] += gs
            # spatial: neighbouring cameras at time t
            nbrs = self.neighbours[i]
            if not nbrs:
                continue
            caches, maps, vjps = [], [], []
            for j in nbrs:
                rel_r = ext_r[j, s].T @ ext_r[i, s]
                rel_t = ext_r[j, s].T @ (ext_t[i, s] - ext_t[j, s])
                c = self._warp(("spatial", s, t, i, j), d, seq.images[t, j], k_i, seq.intrinsics[j], rel_r, rel_t)
                pm, vjp = photometric_map_vjp(target, c.image, alpha)
                caches.append(c)
                vjps.append(vjp)
                maps.append((pm, c.mask))
            best, valid, idx = self._min_reprojection(("winner", s, t, i), maps)
            nv = int(valid.sum())
            if not nv:
                continue
            loss += wgt * float(best[valid].sum()) / nv
            if not need_grad:
                continue
            for pos, j in enumerate(nbrs):
                sel = idx == pos
                if not sel.any():
                    continue
                c = caches[pos]
                gr, gt, gs = self._backprop(c, vjps[pos], sel * (wgt / nv))
                g_depth[i] += gs
                rj, ri = ext_r[j, s], ext_r[i, s]
                dt_ = ext_t[i, s] - ext_t[j, s]
                # rel_r = Rj^T Ri, rel_t = Rj^T (ti - tj)
                g_ext_r[i, s] += rj @ gr
                g_ext_r[j, s] += ri @ gr.T + np.outer(dt_, gt)
                g_ext_t[i, s] += rj @ gt
                g_ext_t[j, s] -= rj @ gt
        return loss

    @staticmethod
    def _backprop(cache, vjp, g_map):
        g_img = vjp(g_map)
        g_img *= cache.mask[..., None]
        return warp_backward(cache, g_img)


# ---------------------------------------------------------------- public wrappers

def _layout_for(rig, observations: ObservationSet):
    return ParamLayout(rig.n_cameras, rig.n_sequences, len(observations), rig.reference_camera)


def _pack_state(layout, rig, ego=None, depth=None):
    g = layout.n_groups
    ego = np.zeros((g, layout.n_cameras, 6)) if ego is None else ego
    depth = np.zeros(layout.n_cameras) if depth is None else depth
    return layout.pack(rig.base, rig.residuals, ego, depth)


def _as_observation_set(observations, n_cameras):
    if isinstance(observations, ObservationSet):
        return observations
    return ObservationSet.from_observations(list(observations), n_cameras)


def grad_pose_consistency(observations, rig, weights=PoseConsistencyWeights(), mask=None,
                          ego=None) -> ParamVector:
    """Gradient of the pose-consistency loss w.r.t. the flat parameter vector.

    ``mask`` defaults to every non-reference extrinsic parameter; masked
    entries are zero.
    """
    obs = _as_observation_set(observations, rig.n_cameras)
    layout = _layout_for(rig, obs)
    if mask is None:
        mask = layout.mask({"rotation", "translation"}, learn_residuals=rig.n_sequences > 1)
    objective = CalibrationObjective(Dataset([], obs), layout, pose_weights=weights)
    _, g = objective.value_and_grad(_pack_state(layout, rig, ego))
    return ParamVector(np.where(mask, g, 0.0), mask)


def grad_photometric(frames: Dataset, rig, ego_motion=None, weights=PhotometricWeights(), mask=None,
                     depth_log_scale=None) -> ParamVector:
    """Gradient of the photometric loss (temporal and spatial pairs).

    ``frames`` carries the image sequences and the observed ego-motion;
    ``ego_motion`` are optional per-group corrections of shape (G, N, 6).
    """
    layout = _layout_for(rig, frames.observations)
    if mask is None:
        mask = layout.mask({"rotation", "translation", "ego", "depth"}, learn_residuals=rig.n_sequences > 1)
    objective = CalibrationObjective(frames, layout, rig.spatial_pairs, photo_weights=weights,
                                     use_pose=False, use_photometric=True)
    _, g = objective.value_and_grad(_pack_state(layout, rig, ego_motion, depth_log_scale))
    return ParamVector(np.where(mask, g, 0.0), mask)

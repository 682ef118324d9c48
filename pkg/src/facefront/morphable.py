"""PCA face model, weak-perspective pose and visibility masks.

Geometry conventions used throughout:

* model space: x runs left-right (the mirror axis), y runs down, z points
  toward the camera; the head sits at the origin with radius near 1.
* a pose is a 2x4 weak-perspective matrix ``m``; a homogeneous vertex
  (x, y, z, 1) maps to image coordinates (u, v) = m @ (x, y, z, 1).
  The first two 3-columns are the top rows of a rotation times a scale,
  the last column is the pixel translation.
* image coordinates are centered: u = 0, v = 0 is the image center and the
  rasterizer adds (W-1)/2, (H-1)/2 when converting to array indices. With
  centered coordinates a horizontal image flip is exactly u -> -u, which
  gives the pose of a flipped image by negating yaw, roll and u-translation.

Full coefficient vectors are ordered [m (8 entries row-major), alpha_id,
alpha_exp, alpha_tex]; z-scoring uses the per-entry statistics stored on
the model.
"""

from dataclasses import dataclass

import numpy as np

from . import ops

POSE_DIM = 8

# raw-coefficient signs for the pose of a horizontally flipped image:
# m00 keeps, m01/m02/tu negate, m10 negates, m11/m12/tw keep
FLIP_SIGN = np.array([1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0])

_MIN_SCALE = 1e-12


@dataclass
class Coeffs:
    """Pose matrix plus identity, expression and texture coefficients."""

    m: np.ndarray
    alpha_id: np.ndarray
    alpha_exp: np.ndarray
    alpha_tex: np.ndarray

    def flat(self):
        return np.concatenate(
            [
                np.asarray(self.m, dtype=np.float64).reshape(-1),
                np.asarray(self.alpha_id, dtype=np.float64),
                np.asarray(self.alpha_exp, dtype=np.float64),
                np.asarray(self.alpha_tex, dtype=np.float64),
            ]
        )

    @staticmethod
    def from_flat(vec, dims):
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        d_id, d_exp, d_tex = dims
        if vec.size != POSE_DIM + d_id + d_exp + d_tex:
            raise ValueError(
                "coefficient vector has length %d, expected %d"
                % (vec.size, POSE_DIM + d_id + d_exp + d_tex)
            )
        m = vec[:POSE_DIM].reshape(2, 4)
        a = POSE_DIM
        return Coeffs(
            m=m.copy(),
            alpha_id=vec[a : a + d_id].copy(),
            alpha_exp=vec[a + d_id : a + d_id + d_exp].copy(),
            alpha_tex=vec[a + d_id + d_exp :].copy(),
        )


def rotation(pitch, yaw, roll):
    """Rotation matrix R = Rz(roll) @ Ry(yaw) @ Rx(pitch), right handed."""
    ca, sa = np.cos(pitch), np.sin(pitch)
    cb, sb = np.cos(yaw), np.sin(yaw)
    cc, sc = np.cos(roll), np.sin(roll)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]], dtype=np.float64)
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]], dtype=np.float64)
    rz = np.array([[cc, -sc, 0], [sc, cc, 0], [0, 0, 1]], dtype=np.float64)
    return rz @ ry @ rx


def pose_matrix(pitch, yaw, roll, scale, tu, tw):
    if scale <= 0:
        raise ValueError("pose_matrix: scale must be positive, got %r" % scale)
    r = rotation(pitch, yaw, roll)
    m = np.empty((2, 4), dtype=np.float64)
    m[:, :3] = scale * r[:2]
    m[0, 3] = tu
    m[1, 3] = tw
    return m


def scale_of(m):
    """Geometric-mean scale of the two rotation rows of a pose matrix."""
    m = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.linalg.norm(m[0, :3]) * np.linalg.norm(m[1, :3])))


def view_axis(m):
    """Unit camera axis: cross product of the normalized rotation rows."""
    m = np.asarray(m, dtype=np.float64)
    r0 = m[0, :3]
    r1 = m[1, :3]
    n0 = np.linalg.norm(r0)
    n1 = np.linalg.norm(r1)
    if n0 * n1 <= _MIN_SCALE:
        raise ValueError("view_axis: degenerate pose matrix")
    axis = np.cross(r0 / n0, r1 / n1)
    norm = np.linalg.norm(axis)
    if norm <= _MIN_SCALE:
        raise ValueError("view_axis: collinear rotation rows")
    return axis / norm


def decompose(m):
    """Recover (pitch, yaw, roll, scale, tu, tw) from a pose matrix."""
    m = np.asarray(m, dtype=np.float64)
    s = scale_of(m)
    if s <= _MIN_SCALE:
        raise ValueError("decompose: degenerate scale")
    r0 = m[0, :3] / np.linalg.norm(m[0, :3])
    r1 = m[1, :3] / np.linalg.norm(m[1, :3])
    r2 = np.cross(r0, r1)
    r = np.stack([r0, r1, r2])
    u, _, vt = np.linalg.svd(r)
    rot = u @ vt
    if np.linalg.det(rot) < 0:
        u[:, -1] = -u[:, -1]
        rot = u @ vt
    yaw = float(np.arcsin(np.clip(-rot[2, 0], -1.0, 1.0)))
    pitch = float(np.arctan2(rot[2, 1], rot[2, 2]))
    roll = float(np.arctan2(rot[1, 0], rot[0, 0]))
    return pitch, yaw, roll, s, float(m[0, 3]), float(m[1, 3])


def frontal_pose(m):
    """Same scale and translation, rotation reset to the identity."""
    s = scale_of(m)
    if s <= _MIN_SCALE:
        raise ValueError("frontal_pose: degenerate scale")
    return np.array(
        [[s, 0.0, 0.0, m[0, 3]], [0.0, s, 0.0, m[1, 3]]], dtype=np.float64
    )


def project(m, shape):
    """Project vertices with a pose matrix; returns (n, 2) centered coords."""
    m = np.asarray(m, dtype=np.float64)
    pts = np.asarray(shape, dtype=np.float64).reshape(-1, 3)
    return pts @ m[:, :3].T + m[:, 3]


def flip_coeffs(c):
    """Coefficients of the horizontally flipped image (analytic pose flip)."""
    m_flat = np.asarray(c.m, dtype=np.float64).reshape(-1) * FLIP_SIGN
    return Coeffs(
        m=m_flat.reshape(2, 4),
        alpha_id=np.array(c.alpha_id, dtype=np.float64),
        alpha_exp=np.array(c.alpha_exp, dtype=np.float64),
        alpha_tex=np.array(c.alpha_tex, dtype=np.float64),
    )


class MorphableModel:
    """Linear face model: mean shape/texture plus orthogonal PCA bases.

    mean_shape is the 3n interleaved (x, y, z, x, y, z, ...) vertex vector;
    mean_texture holds one gray value in [0, 1] per vertex. Basis matrices
    carry one component per column. coeff_mean / coeff_std hold z-scoring
    statistics for full flattened coefficient vectors.
    """

    def __init__(
        self,
        mean_shape,
        mean_texture,
        basis_id,
        basis_exp,
        basis_tex,
        landmark_indices,
        coeff_mean,
        coeff_std,
    ):
        self.mean_shape = np.asarray(mean_shape, dtype=np.float64).reshape(-1)
        self.mean_texture = np.asarray(mean_texture, dtype=np.float64).reshape(-1)
        self.basis_id = np.asarray(basis_id, dtype=np.float64)
        self.basis_exp = np.asarray(basis_exp, dtype=np.float64)
        self.basis_tex = np.asarray(basis_tex, dtype=np.float64)
        self.landmark_indices = np.asarray(landmark_indices, dtype=np.int64).reshape(-1)
        self.coeff_mean = np.asarray(coeff_mean, dtype=np.float64).reshape(-1)
        self.coeff_std = np.asarray(coeff_std, dtype=np.float64).reshape(-1)

        n3 = self.mean_shape.size
        if n3 % 3 != 0:
            raise ValueError("mean_shape length must be a multiple of 3")
        self.n_vertices = n3 // 3
        if self.mean_texture.size != self.n_vertices:
            raise ValueError("mean_texture length does not match vertex count")
        if self.basis_id.shape[0] != n3 or self.basis_exp.shape[0] != n3:
            raise ValueError("shape basis row count does not match mean shape")
        if self.basis_tex.shape[0] != self.n_vertices:
            raise ValueError("texture basis row count does not match vertex count")
        if self.coeff_mean.size != self.coeff_dim or self.coeff_std.size != self.coeff_dim:
            raise ValueError("coefficient statistics have the wrong length")
        if np.any(self.coeff_std <= 0):
            raise ValueError("coeff_std entries must be strictly positive")
        if self.landmark_indices.size and (
            self.landmark_indices.min() < 0
            or self.landmark_indices.max() >= self.n_vertices
        ):
            raise ValueError("landmark index out of range")

    @property
    def dims(self):
        return (
            self.basis_id.shape[1],
            self.basis_exp.shape[1],
            self.basis_tex.shape[1],
        )

    @property
    def coeff_dim(self):
        d_id, d_exp, d_tex = self.dims
        return POSE_DIM + d_id + d_exp + d_tex

    def _check_coeffs(self, c):
        d_id, d_exp, d_tex = self.dims
        if (
            np.shape(c.m) != (2, 4)
            or np.size(c.alpha_id) != d_id
            or np.size(c.alpha_exp) != d_exp
            or np.size(c.alpha_tex) != d_tex
        ):
            raise ValueError("coefficient blocks do not match model dimensions")

    def synthesize_shape(self, c):
        """Mean shape plus identity and expression basis blends (3n vector)."""
        self._check_coeffs(c)
        return (
            self.mean_shape
            + self.basis_id @ np.asarray(c.alpha_id, dtype=np.float64)
            + self.basis_exp @ np.asarray(c.alpha_exp, dtype=np.float64)
        )

    def synthesize_texture(self, c):
        """Mean texture plus texture basis blend, clamped to [0, 1]."""
        self._check_coeffs(c)
        tex = self.mean_texture + self.basis_tex @ np.asarray(
            c.alpha_tex, dtype=np.float64
        )
        return np.clip(tex, 0.0, 1.0)

    def normalize(self, c):
        """Flat z-scored coefficient vector."""
        flat = c.flat() if isinstance(c, Coeffs) else np.asarray(c, dtype=np.float64)
        return (flat - self.coeff_mean) / self.coeff_std

    def denormalize(self, vec):
        """Coeffs from a flat z-scored vector."""
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        return Coeffs.from_flat(vec * self.coeff_std + self.coeff_mean, self.dims)

    def landmarks_2d(self, c):
        """Projected landmark positions, (L, 2) centered image coordinates."""
        pts = self.synthesize_shape(c).reshape(-1, 3)[self.landmark_indices]
        return project(c.m, pts)


# ---------------------------------------------------------------------------
# rasterization


@dataclass
class VisibilityMask:
    """Binary frontal-coverage grid plus the pose it was computed from."""

    grid: np.ndarray
    pose_source: Coeffs

    @property
    def area(self):
        return float(self.grid.sum())


def pixel_indices(uv, height, width):
    """Centered coordinates to integer array indices plus in-bounds mask."""
    uv = np.asarray(uv, dtype=np.float64)
    cols = np.floor(uv[:, 0] + (width - 1) / 2.0 + 0.5).astype(np.int64)
    rows = np.floor(uv[:, 1] + (height - 1) / 2.0 + 0.5).astype(np.int64)
    ok = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    return rows, cols, ok


def _zbuffer_winners(flat_pixel, depth):
    """Indices whose depth wins their pixel (largest depth, stable ties)."""
    order = np.lexsort((depth, flat_pixel))
    sorted_pix = flat_pixel[order]
    is_last = np.ones(sorted_pix.size, dtype=bool)
    if sorted_pix.size > 1:
        is_last[:-1] = sorted_pix[1:] != sorted_pix[:-1]
    return order[is_last]


def dilate3(grid):
    """Binary 3x3 dilation."""
    h, w = grid.shape
    padded = np.pad(grid, 1)
    out = np.zeros_like(grid)
    for di in range(3):
        for dj in range(3):
            np.maximum(out, padded[di : di + h, dj : dj + w], out)
    return out


def visibility_mask(model, c, height, width):
    """Frontal-coverage mask of the vertices visible under the given pose.

    Visibility under the original pose is decided by z-buffer point
    splatting: the vertex nearest to the camera wins its pixel and only
    winners count as visible. The visible vertices are then re-projected
    under the frontalized pose (rotation reset, scale and translation kept)
    and splatted again; a 3x3 dilation closes pinholes.
    """
    s = scale_of(c.m)
    if s <= _MIN_SCALE:
        raise ValueError("visibility_mask: degenerate scale in pose matrix")
    shape = model.synthesize_shape(c).reshape(-1, 3)
    uv = project(c.m, shape)
    rows, cols, ok = pixel_indices(uv, height, width)
    depth = shape @ view_axis(c.m)

    visible = np.zeros(shape.shape[0], dtype=bool)
    ok_idx = np.flatnonzero(ok)
    if ok_idx.size:
        flat = rows[ok_idx] * width + cols[ok_idx]
        winners = _zbuffer_winners(flat, depth[ok_idx])
        visible[ok_idx[winners]] = True

    uv_front = project(frontal_pose(c.m), shape[visible])
    rows2, cols2, ok2 = pixel_indices(uv_front, height, width)
    grid = np.zeros((height, width), dtype=np.float64)
    grid[rows2[ok2], cols2[ok2]] = 1.0
    return VisibilityMask(grid=dilate3(grid), pose_source=c)


def flip_mask(mask):
    """Width-axis mirror of a mask; applying it twice is the identity."""
    return VisibilityMask(
        grid=np.ascontiguousarray(mask.grid[:, ::-1]),
        pose_source=flip_coeffs(mask.pose_source),
    )


def symmetry_mask_pair(model, c, height, width):
    """Masks of a pose and of its analytic flip, as float grids."""
    m1 = visibility_mask(model, c, height, width)
    m2 = visibility_mask(model, flip_coeffs(c), height, width)
    return m1.grid, m2.grid


# ---------------------------------------------------------------------------
# losses and metrics on coefficients


def pose_weight_vector(coeff_dim, pose_weight=5.0):
    """Per-entry weights: pose entries upweighted, all others 1."""
    w = np.ones(int(coeff_dim), dtype=np.float64)
    w[:POSE_DIM] = float(pose_weight)
    return w


def param_distance(p, p_ref, w_diag):
    """Weighted squared distance (p - p_ref)^T diag(w) (p - p_ref).

    Accepts single vectors or (batch, dim) matrices; batches are averaged.
    """
    p = np.asarray(p, dtype=np.float64)
    p_ref = np.asarray(p_ref, dtype=np.float64)
    w = np.asarray(w_diag, dtype=np.float64).reshape(-1)
    if p.shape != p_ref.shape or p.shape[-1] != w.size:
        raise ValueError(
            "param_distance: shapes %s, %s, weights %s do not line up"
            % (p.shape, p_ref.shape, w.shape)
        )
    d = p - p_ref
    per = (d * d * w).sum(axis=-1)
    return float(np.mean(per))


def param_distance_loss(p_t, p_ref, w_diag):
    """Tape version of param_distance for a (batch, dim) prediction tensor."""
    g = p_t.graph
    ref = g.leaf(np.asarray(p_ref, dtype=np.float64))
    w = g.leaf(np.asarray(w_diag, dtype=np.float64).reshape(-1))
    diff = ops.sub(p_t, ref)
    weighted = ops.mul(ops.square(diff), w)
    batch = p_t.shape[0] if len(p_t.shape) == 2 else 1
    return ops.smul(ops.total(weighted), 1.0 / batch)


def bbox_diagonal(points):
    """Diagonal of the tight axis-aligned box around (L, 2) points."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] < 1:
        raise ValueError("bbox_diagonal: needs at least one point")
    span = pts.max(axis=0) - pts.min(axis=0)
    return float(np.sqrt((span * span).sum()))


def landmark_nme(predicted, reference, diag=None):
    """Mean landmark distance over the reference bbox diagonal, in percent."""
    pred = np.asarray(predicted, dtype=np.float64).reshape(-1, 2)
    ref = np.asarray(reference, dtype=np.float64).reshape(-1, 2)
    if pred.shape != ref.shape or pred.shape[0] < 1:
        raise ValueError("landmark_nme: point sets must match and be non-empty")
    if diag is None:
        diag = bbox_diagonal(ref)
    if diag <= 0:
        raise ValueError("landmark_nme: bbox diagonal must be positive")
    err = np.sqrt(((pred - ref) ** 2).sum(axis=1)).mean()
    return float(err / diag * 100.0)

"""Procedural face domain: seeded model construction, sampling, rendering.

Every artifact here is a pure function of a DatasetSpec. The head is an
ellipsoid with a fixed nose bump and a few seeded, mirrored surface bumps,
so the mean shape is exactly bilaterally symmetric (vertices come in
mirrored pairs: vertex 2k+1 is vertex 2k with x negated). Identity and
expression bases are smooth random radial displacement fields,
orthonormalized; texture bases are smooth random scalar fields.

Rendering is z-buffer point splatting with a one-pixel footprint: each
vertex stamps a 3x3 neighborhood, the nearest vertex wins each pixel,
uncovered pixels stay background black.
"""

from dataclasses import dataclass, fields

import numpy as np

from . import container
from .morphable import (
    Coeffs,
    MorphableModel,
    POSE_DIM,
    decompose,
    pose_matrix,
    project,
    view_axis,
)

# seed-stream tags so independent draws never share a stream
_STREAM_MODEL = 0
_STREAM_IDENTITY = 1
_STREAM_IMAGE = 2
_STREAM_POSE_STATS = 3
_STREAM_SPLIT = 4
_STREAM_GALLERY = 5

_ELLIPSOID = (0.85, 1.0, 0.82)
_FILL = 0.72  # fraction of the half-image the mean head radius maps to

# per-dimension sampling scales; component j uses scale * decay**j
_SIGMA_ID = (3.0, 0.9)
_SIGMA_EXP = (1.2, 0.9)
_SIGMA_TEX = (4.0, 0.9)

_TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class DatasetSpec:
    """Seeded description of one synthetic dataset."""

    seed: int = 0
    n_identities: int = 20
    images_per_identity: int = 40
    image_size: int = 32
    d_id: int = 8
    d_exp: int = 4
    d_tex: int = 8
    n_vertices: int = 1024
    n_landmarks: int = 8
    yaw_range_deg: float = 90.0
    gain_min: float = 0.6
    gain_max: float = 1.4

    def __post_init__(self):
        s = self.image_size
        if s < 8 or (s & (s - 1)) != 0:
            raise ValueError("image_size must be a power of two, at least 8")
        if self.n_identities < 2:
            raise ValueError("n_identities must be at least 2")
        if self.images_per_identity < 1:
            raise ValueError("images_per_identity must be at least 1")
        if self.n_vertices < 8 or self.n_vertices % 2 != 0:
            raise ValueError("n_vertices must be even and at least 8")
        if not (1 <= self.n_landmarks <= 8):
            raise ValueError("n_landmarks must be between 1 and 8")
        if not (0.0 <= self.yaw_range_deg <= 90.0):
            raise ValueError("yaw_range_deg must lie in [0, 90]")
        if not (0.0 < self.gain_min <= self.gain_max):
            raise ValueError("gain range must satisfy 0 < gain_min <= gain_max")

    def to_vector(self):
        return np.array([float(getattr(self, f.name)) for f in fields(self)])

    @staticmethod
    def from_vector(vec):
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        names = [f.name for f in fields(DatasetSpec)]
        if vec.size != len(names):
            raise ValueError("spec vector has length %d, expected %d" % (vec.size, len(names)))
        kwargs = {}
        for name, value in zip(names, vec):
            if name in ("yaw_range_deg", "gain_min", "gain_max"):
                kwargs[name] = float(value)
            else:
                kwargs[name] = int(round(value))
        return DatasetSpec(**kwargs)


def _rng(*key):
    return np.random.default_rng(tuple(int(k) for k in key))


def _fibonacci_hemisphere(count):
    """Deterministic, roughly uniform unit directions folded to x >= 0."""
    i = np.arange(count, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / count
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    theta = golden * i
    pts = np.stack([np.abs(r * np.cos(theta)), r * np.sin(theta), z], axis=1)
    return pts


def _mirror_pairs(half_points):
    """Interleave each point with its x-mirror: even index right, odd left."""
    n = half_points.shape[0]
    out = np.empty((2 * n, 3), dtype=np.float64)
    out[0::2] = half_points
    out[1::2] = half_points
    out[1::2, 0] = -half_points[:, 0]
    return out


def mirror_permutation(n_vertices):
    """Index permutation mapping each vertex to its bilateral partner."""
    perm = np.arange(n_vertices)
    perm[0::2] += 1
    perm[1::2] -= 1
    return perm


def _angular_bump(units, center, width, amplitude):
    """Radial bump factor from angular distance to a unit center direction."""
    d = units @ np.asarray(center, dtype=np.float64)
    ang = np.arccos(np.clip(d, -1.0, 1.0))
    return amplitude * np.exp(-((ang / width) ** 2))


def _symmetric_bump(units, center, width, amplitude):
    mirrored = np.array([-center[0], center[1], center[2]])
    return _angular_bump(units, center, width, amplitude) + _angular_bump(
        units, mirrored, width, amplitude
    )


_LANDMARK_TARGETS = np.array(
    [
        [-0.48, -0.28, 0.72],  # left outer eye corner
        [-0.18, -0.26, 0.86],  # left inner eye corner
        [0.18, -0.26, 0.86],  # right inner eye corner
        [0.48, -0.28, 0.72],  # right outer eye corner
        [0.0, 0.10, 1.10],  # nose tip
        [-0.28, 0.45, 0.74],  # left mouth corner
        [0.28, 0.45, 0.74],  # right mouth corner
        [0.0, 0.92, 0.38],  # chin
    ]
)

_EYE_L = np.array([-0.33, -0.27, 0.80])
_EYE_R = np.array([0.33, -0.27, 0.80])
_MOUTH = np.array([0.0, 0.45, 0.80])


def _sigma_vector(count, base_decay):
    base, decay = base_decay
    return base * decay ** np.arange(count, dtype=np.float64)


def _orthonormalize(mat):
    """Twice-iterated modified Gram-Schmidt over columns."""
    q = np.array(mat, dtype=np.float64)
    for _ in range(2):
        for j in range(q.shape[1]):
            col = q[:, j]
            for k in range(j):
                col = col - (q[:, k] @ col) * q[:, k]
            norm = np.linalg.norm(col)
            if norm <= 1e-12:
                raise ValueError("orthonormalize: rank-deficient basis draw")
            q[:, j] = col / norm
    return q


def _smooth_scalar_fields(units, n_columns, rng, n_blobs=6):
    """Columns are sums of random angular Gaussians: smooth over the head."""
    cols = np.empty((units.shape[0], n_columns), dtype=np.float64)
    for j in range(n_columns):
        field = np.zeros(units.shape[0])
        for _ in range(n_blobs):
            center = rng.standard_normal(3)
            center /= np.linalg.norm(center)
            width = rng.uniform(0.35, 0.9)
            amp = rng.standard_normal()
            field += _angular_bump(units, center, width, amp)
        cols[:, j] = field
    return cols


def make_model(spec):
    """Build the seeded morphable model for a dataset spec."""
    half = spec.n_vertices // 2
    units = _mirror_pairs(_fibonacci_hemisphere(half))

    bump = _angular_bump(units, np.array([0.0, 0.08, 1.0]) / np.linalg.norm([0.0, 0.08, 1.0]), 0.32, 0.30)
    rng_bumps = _rng(spec.seed, _STREAM_MODEL, 1)
    for _ in range(3):
        raw = rng_bumps.standard_normal(3)
        raw[0] = abs(raw[0])
        raw[2] = abs(raw[2]) + 0.4  # keep extra bumps on the face side
        center = raw / np.linalg.norm(raw)
        width = rng_bumps.uniform(0.25, 0.45)
        amp = rng_bumps.uniform(0.05, 0.13)
        bump = bump + _symmetric_bump(units, center, width, amp)

    radii = np.array(_ELLIPSOID)
    verts = units * radii * (1.0 + bump)[:, None]
    mean_shape = verts.reshape(-1)

    tex = np.full(units.shape[0], 0.62)
    tex -= _angular_bump(units, _EYE_L / np.linalg.norm(_EYE_L), 0.22, 0.30)
    tex -= _angular_bump(units, _EYE_R / np.linalg.norm(_EYE_R), 0.22, 0.30)
    tex -= _angular_bump(units, _MOUTH / np.linalg.norm(_MOUTH), 0.20, 0.22)
    tex += _angular_bump(units, np.array([0.0, 0.05, 1.0]) / np.linalg.norm([0.0, 0.05, 1.0]), 0.28, 0.12)
    mean_texture = np.clip(tex, 0.05, 0.95)

    radial = verts / np.linalg.norm(verts, axis=1, keepdims=True)

    rng_id = _rng(spec.seed, _STREAM_MODEL, 2)
    fields_id = _smooth_scalar_fields(units, spec.d_id, rng_id)
    basis_id = _orthonormalize(
        radial[:, :, None].repeat(spec.d_id, axis=2).reshape(-1, spec.d_id)
        * np.repeat(fields_id, 3, axis=0)
    )

    rng_exp = _rng(spec.seed, _STREAM_MODEL, 3)
    fields_exp = _smooth_scalar_fields(units, spec.d_exp, rng_exp)
    basis_exp = _orthonormalize(
        radial[:, :, None].repeat(spec.d_exp, axis=2).reshape(-1, spec.d_exp)
        * np.repeat(fields_exp, 3, axis=0)
    )

    rng_tex = _rng(spec.seed, _STREAM_MODEL, 4)
    basis_tex = _orthonormalize(_smooth_scalar_fields(units, spec.d_tex, rng_tex))

    landmarks = np.empty(spec.n_landmarks, dtype=np.int64)
    targets = _LANDMARK_TARGETS[: spec.n_landmarks] * radii
    for i, t in enumerate(targets):
        landmarks[i] = int(np.argmin(((verts - t) ** 2).sum(axis=1)))

    sigma_id = _sigma_vector(spec.d_id, _SIGMA_ID)
    sigma_exp = _sigma_vector(spec.d_exp, _SIGMA_EXP)
    sigma_tex = _sigma_vector(spec.d_tex, _SIGMA_TEX)

    scale = nominal_scale(spec, mean_shape)
    rng_mc = _rng(spec.seed, _STREAM_POSE_STATS)
    yaws = rng_mc.uniform(
        -np.deg2rad(spec.yaw_range_deg), np.deg2rad(spec.yaw_range_deg), 8192
    )
    sample_ms = np.stack(
        [pose_matrix(0.0, y, 0.0, scale, 0.0, 0.0).reshape(-1) for y in yaws]
    )
    pose_mean = sample_ms.mean(axis=0)
    pose_std = np.maximum(sample_ms.std(axis=0), 1e-6)

    coeff_mean = np.concatenate(
        [pose_mean, np.zeros(spec.d_id + spec.d_exp + spec.d_tex)]
    )
    coeff_std = np.concatenate([pose_std, sigma_id, sigma_exp, sigma_tex])

    return MorphableModel(
        mean_shape=mean_shape,
        mean_texture=mean_texture,
        basis_id=basis_id,
        basis_exp=basis_exp,
        basis_tex=basis_tex,
        landmark_indices=landmarks,
        coeff_mean=coeff_mean,
        coeff_std=coeff_std,
    )


def nominal_scale(spec, mean_shape):
    """Pixels per model unit placing the mean head well inside the frame."""
    radius = float(
        np.abs(np.asarray(mean_shape, dtype=np.float64).reshape(-1, 3)).max()
    )
    return _FILL * ((spec.image_size - 1) / 2.0) / radius


def identity_coefficients(spec, model, identity):
    """Per-identity draws: alpha_id and alpha_tex are fixed per identity."""
    d_id, d_exp, d_tex = model.dims
    sigma_id = _sigma_vector(d_id, _SIGMA_ID)
    sigma_tex = _sigma_vector(d_tex, _SIGMA_TEX)
    rng = _rng(spec.seed, _STREAM_IDENTITY, identity)
    alpha_id = rng.standard_normal(d_id) * sigma_id
    alpha_tex = rng.standard_normal(d_tex) * sigma_tex
    return alpha_id, alpha_tex


def render(model, c, height, width, gain=1.0):
    """Point-splat render with a one-pixel footprint and max-depth z buffer."""
    shape = model.synthesize_shape(c).reshape(-1, 3)
    tex = np.clip(model.synthesize_texture(c) * float(gain), 0.0, 1.0)
    uv = project(c.m, shape)
    depth = shape @ view_axis(c.m)

    cols0 = np.floor(uv[:, 0] + (width - 1) / 2.0 + 0.5).astype(np.int64)
    rows0 = np.floor(uv[:, 1] + (height - 1) / 2.0 + 0.5).astype(np.int64)

    img = np.zeros((height, width), dtype=np.float64)
    rows_all = []
    cols_all = []
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            rows_all.append(rows0 + di)
            cols_all.append(cols0 + dj)
    rows = np.concatenate(rows_all)
    cols = np.concatenate(cols_all)
    depths = np.tile(depth, 9)
    values = np.tile(tex, 9)
    ok = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    if not ok.any():
        return img
    flat = rows[ok] * width + cols[ok]
    order = np.lexsort((depths[ok], flat))
    sorted_flat = flat[order]
    is_last = np.ones(sorted_flat.size, dtype=bool)
    if sorted_flat.size > 1:
        is_last[:-1] = sorted_flat[1:] != sorted_flat[:-1]
    win = order[is_last]
    img.reshape(-1)[flat[win]] = values[ok][win]
    return img


@dataclass
class Sample:
    """One training pair: posed view, frontal view, coefficients, label."""

    x: np.ndarray
    x_frontal: np.ndarray
    coeffs: Coeffs
    label: int
    image_index: int


def sample_pair(spec, model, identity, image_index, yaw=None, gain=None):
    """Deterministic sample draw; yaw and gain can be pinned for tests."""
    if not (0 <= identity < spec.n_identities):
        raise ValueError("identity out of range")
    alpha_id, alpha_tex = identity_coefficients(spec, model, identity)
    d_exp = model.dims[1]
    rng = _rng(spec.seed, _STREAM_IMAGE, identity, image_index)
    alpha_exp = rng.standard_normal(d_exp) * _sigma_vector(d_exp, _SIGMA_EXP)
    drawn_yaw = rng.uniform(
        -np.deg2rad(spec.yaw_range_deg), np.deg2rad(spec.yaw_range_deg)
    )
    drawn_gain = rng.uniform(spec.gain_min, spec.gain_max)
    if yaw is not None:
        drawn_yaw = float(yaw)
    if gain is not None:
        drawn_gain = float(gain)

    scale = nominal_scale(spec, model.mean_shape)
    m = pose_matrix(0.0, drawn_yaw, 0.0, scale, 0.0, 0.0)
    c = Coeffs(m=m, alpha_id=alpha_id, alpha_exp=alpha_exp, alpha_tex=alpha_tex)

    size = spec.image_size
    x = render(model, c, size, size, gain=drawn_gain)

    c_front = Coeffs(
        m=pose_matrix(0.0, 0.0, 0.0, scale, 0.0, 0.0),
        alpha_id=alpha_id,
        alpha_exp=alpha_exp,
        alpha_tex=alpha_tex,
    )
    x_front = render(model, c_front, size, size, gain=1.0)
    return Sample(
        x=x, x_frontal=x_front, coeffs=c, label=identity, image_index=image_index
    )


class Dataset:
    """In-memory dataset: spec, model and stacked sample arrays."""

    def __init__(self, spec, model, x, x_frontal, p, labels, image_indices):
        self.spec = spec
        self.model = model
        self.x = np.asarray(x, dtype=np.float64)
        self.x_frontal = np.asarray(x_frontal, dtype=np.float64)
        self.p = np.asarray(p, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.image_indices = np.asarray(image_indices, dtype=np.int64)
        self._p_norm = None
        self._yaw = None

    def __len__(self):
        return self.x.shape[0]

    @property
    def p_norm(self):
        if self._p_norm is None:
            self._p_norm = np.stack([self.model.normalize(v) for v in self.p])
        return self._p_norm

    @property
    def yaw_deg(self):
        if self._yaw is None:
            dims = self.model.dims
            yaws = [
                np.rad2deg(decompose(Coeffs.from_flat(v, dims).m)[1]) for v in self.p
            ]
            self._yaw = np.asarray(yaws, dtype=np.float64)
        return self._yaw

    def coeffs(self, index):
        return Coeffs.from_flat(self.p[index], self.model.dims)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.spec,
            self.model,
            self.x[indices],
            self.x_frontal[indices],
            self.p[indices],
            self.labels[indices],
            self.image_indices[indices],
        )

    def content_hash(self):
        import hashlib

        h = hashlib.sha256()
        for arr in (self.x, self.x_frontal, self.p):
            h.update(arr.tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()


def build_dataset(spec):
    model = make_model(spec)
    xs, xfs, ps, ys, ks = [], [], [], [], []
    for identity in range(spec.n_identities):
        for j in range(spec.images_per_identity):
            s = sample_pair(spec, model, identity, j)
            xs.append(s.x)
            xfs.append(s.x_frontal)
            ps.append(s.coeffs.flat())
            ys.append(s.label)
            ks.append(s.image_index)
    return Dataset(spec, model, np.stack(xs), np.stack(xfs), np.stack(ps), ys, ks)


# ---------------------------------------------------------------------------
# train/eval splits, all pure functions of the spec


def split_identities(spec):
    """Seeded 80/20 identity split: (train_ids, heldout_ids)."""
    perm = _rng(spec.seed, _STREAM_SPLIT).permutation(spec.n_identities)
    n_train = max(1, int(round(_TRAIN_FRACTION * spec.n_identities)))
    if n_train >= spec.n_identities:
        n_train = spec.n_identities - 1
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split_indices(dataset):
    """Index sets over a dataset (works on subsets as well).

    train: training identities, first 80% of each identity's images.
    val_seen: training identities, remaining images.
    val_unseen: held-out identities, all images.
    """
    spec = dataset.spec
    train_ids, heldout_ids = split_identities(spec)
    train_id_set = set(int(i) for i in train_ids)
    cut = int(round(_TRAIN_FRACTION * spec.images_per_identity))
    cut = min(max(cut, 1), spec.images_per_identity)
    train, val_seen, val_unseen = [], [], []
    for idx in range(len(dataset)):
        ident = int(dataset.labels[idx])
        img = int(dataset.image_indices[idx])
        if ident in train_id_set:
            if img < cut:
                train.append(idx)
            else:
                val_seen.append(idx)
        else:
            val_unseen.append(idx)
    return (
        np.asarray(train, dtype=np.int64),
        np.asarray(val_seen, dtype=np.int64),
        np.asarray(val_unseen, dtype=np.int64),
    )


def gallery_indices(dataset):
    """One seeded gallery sample per identity present in the dataset."""
    spec = dataset.spec
    out = {}
    for ident in np.unique(dataset.labels):
        rows = np.flatnonzero(dataset.labels == ident)
        pick = _rng(spec.seed, _STREAM_GALLERY, int(ident)).integers(rows.size)
        out[int(ident)] = int(rows[pick])
    return out


# ---------------------------------------------------------------------------
# container serialization


def _model_records(model):
    return [
        ("model/mean_shape", model.mean_shape),
        ("model/mean_texture", model.mean_texture),
        ("model/basis_id", model.basis_id),
        ("model/basis_exp", model.basis_exp),
        ("model/basis_tex", model.basis_tex),
        ("model/landmarks", model.landmark_indices.astype(np.float64)),
        ("model/coeff_mean", model.coeff_mean),
        ("model/coeff_std", model.coeff_std),
    ]


def model_from_records(rec, prefix="model/"):
    return MorphableModel(
        mean_shape=rec[prefix + "mean_shape"],
        mean_texture=rec[prefix + "mean_texture"],
        basis_id=rec[prefix + "basis_id"],
        basis_exp=rec[prefix + "basis_exp"],
        basis_tex=rec[prefix + "basis_tex"],
        landmark_indices=np.rint(rec[prefix + "landmarks"]).astype(np.int64),
        coeff_mean=rec[prefix + "coeff_mean"],
        coeff_std=rec[prefix + "coeff_std"],
    )


def write_dataset(dataset, path):
    records = [("spec", dataset.spec.to_vector())]
    records.extend(_model_records(dataset.model))
    for i in range(len(dataset)):
        tag = "sample/%05d/" % i
        records.append((tag + "x", dataset.x[i]))
        records.append((tag + "xg", dataset.x_frontal[i]))
        records.append((tag + "p", dataset.p[i]))
        records.append(
            (
                tag + "meta",
                np.array(
                    [float(dataset.labels[i]), float(dataset.image_indices[i])]
                ),
            )
        )
    container.write_records(path, records)


def read_dataset(path):
    rec = container.read_records(path)
    if "spec" not in rec:
        raise container.ContainerError("%s: missing dataset spec record" % path)
    spec = DatasetSpec.from_vector(rec["spec"])
    model = model_from_records(rec)
    xs, xfs, ps, ys, ks = [], [], [], [], []
    i = 0
    while True:
        tag = "sample/%05d/" % i
        if tag + "x" not in rec:
            break
        xs.append(rec[tag + "x"])
        xfs.append(rec[tag + "xg"])
        ps.append(rec[tag + "p"])
        meta = rec[tag + "meta"]
        ys.append(int(round(meta[0])))
        ks.append(int(round(meta[1])))
        i += 1
    if i == 0:
        raise container.ContainerError("%s: dataset holds no samples" % path)
    return Dataset(spec, model, np.stack(xs), np.stack(xfs), np.stack(ps), ys, ks)

"""Measurement protocols over a trained state: landmark NME per split,
gallery/probe rank-1 identification per 15-degree yaw bucket in three
feature modes, discriminator-confidence fused matching, the component
ablation table, and PGM grid export of qualitative results.

The gallery holds one seeded frontal image per identity, so chance
rank-1 accuracy is 1/n_identities; probes are every remaining image.
"""

import dataclasses
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import container, losses, morphable, networks, synthdata, tensor, training

BUCKET_DEG = 15.0
N_BUCKETS = 7
MODES = ("original", "syn", "fused")

_ABLATION_ROWS = (
    "full",
    "drop_c",
    "drop_d",
    "drop_r",
    "drop_gid",
    "drop_gtv",
    "drop_gsym",
)


def yaw_bucket(yaw_deg):
    """Index of the nearest 15-degree bucket center, clipped to 90."""
    b = int(round(abs(float(yaw_deg)) / BUCKET_DEG))
    return min(b, N_BUCKETS - 1)


def frontalize(state, dataset, rows, batch=64):
    """Generator output for dataset rows: stacked (n,1,S,S) images."""
    rows = np.asarray(rows, dtype=np.int64)
    outs = []
    for lo in range(0, len(rows), batch):
        x_out, _ = training.generate_batch(state, dataset, rows[lo : lo + batch])
        outs.append(x_out)
    return np.concatenate(outs, axis=0)


def frontalize_images(state, images, batch=64):
    """Generator output for raw (n,1,S,S) images outside any dataset."""
    archs = training.arch_set(state.spec)
    coeff_dim = archs["R"]["head"]["cout"]
    outs = []
    for lo in range(0, images.shape[0], batch):
        g = tensor.Graph()
        x = g.leaf(images[lo : lo + batch])
        if state.config.drop_r:
            p_hat = g.leaf(np.zeros((x.shape[0], coeff_dim)))
        else:
            rb = networks.bind(g, state.nets["R"], trainable=False)
            p_hat = networks.apply_regressor(g, rb, archs["R"], x)
        gb = networks.bind(g, state.nets["G"], trainable=False)
        outs.append(networks.apply_generator(g, gb, archs["G"], x, p_hat).data)
    return np.concatenate(outs, axis=0)


def recognizer_features(c_params, images, batch=64):
    """Pooled recognizer features for (n,1,S,S) images."""
    arch = c_params.arch
    outs = []
    for lo in range(0, images.shape[0], batch):
        g = tensor.Graph()
        cb = networks.bind(g, c_params, trainable=False)
        _, feat = networks.apply_recognizer(g, cb, arch, g.leaf(images[lo : lo + batch]))
        outs.append(feat.data)
    return np.concatenate(outs, axis=0)


def d_confidence(state, images, batch=64):
    """P_real assigned by the discriminator to (n,1,S,S) images."""
    arch = training.arch_set(state.spec)["D"]
    outs = []
    for lo in range(0, images.shape[0], batch):
        g = tensor.Graph()
        db = networks.bind(g, state.nets["D"], trainable=False)
        logits = networks.apply_discriminator(
            g, db, arch, g.leaf(images[lo : lo + batch])
        )
        outs.append(losses.probabilities(logits.data)[:, losses.REAL])
    return np.concatenate(outs, axis=0)


def _pairwise_distances(a, b):
    """Euclidean distances between rows of a (n,d) and b (m,d).

    Computed from explicit differences: the quadratic expansion cancels
    catastrophically when rows nearly coincide, and rank-1 ties on
    identical probe/gallery images must resolve by the exact zero.
    """
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def gallery_rows(dataset):
    """Sorted identities and their seeded gallery rows."""
    picks = synthdata.gallery_indices(dataset)
    ids = np.array(sorted(picks), dtype=np.int64)
    rows = np.array([picks[int(i)] for i in ids], dtype=np.int64)
    return ids, rows


def rank1_identification(
    state,
    dataset,
    mode,
    probe_rows=None,
    use_frontal_probes=False,
    c_params=None,
):
    """Per-yaw-bucket nearest-gallery accuracy.

    mode 'original' matches recognizer features of the raw images,
    'syn' matches features of the frontalized images (generator applied
    to probes and gallery alike), 'fused' combines both distances with
    the pair's minimum discriminator confidence as weight. c_params
    overrides the feature extractor (default: the state's recognizer).
    """
    if mode not in MODES:
        raise ValueError("unknown rank-1 mode %r" % mode)
    c_params = c_params if c_params is not None else state.nets["C"]
    ids, g_rows = gallery_rows(dataset)
    if probe_rows is None:
        in_gallery = np.zeros(len(dataset), dtype=bool)
        in_gallery[g_rows] = True
        probe_rows = np.flatnonzero(~in_gallery)
    probe_rows = np.asarray(probe_rows, dtype=np.int64)
    probe_labels = dataset.labels[probe_rows]
    id_of = {int(ident): k for k, ident in enumerate(ids)}
    missing = set(int(l) for l in probe_labels) - set(id_of)
    if missing:
        raise ValueError(
            "probe identities missing a gallery frontal: %s" % sorted(missing)
        )

    src = dataset.x_frontal if use_frontal_probes else dataset.x
    probe_imgs = src[probe_rows][:, None]
    gal_imgs = dataset.x_frontal[g_rows][:, None]

    dist = None
    if mode in ("original", "fused"):
        f_p = recognizer_features(c_params, probe_imgs)
        f_g = recognizer_features(c_params, gal_imgs)
        dist = _pairwise_distances(f_p, f_g)
    if mode in ("syn", "fused"):
        syn_p = frontalize_images(state, probe_imgs)
        syn_g = frontalize_images(state, gal_imgs)
        fs_p = recognizer_features(c_params, syn_p)
        fs_g = recognizer_features(c_params, syn_g)
        d_syn = _pairwise_distances(fs_p, fs_g)
        if mode == "syn":
            dist = d_syn
        else:
            w = np.minimum(
                d_confidence(state, syn_p)[:, None],
                d_confidence(state, syn_g)[None, :],
            )
            dist = dist + w * d_syn

    nearest = ids[dist.argmin(axis=1)]
    correct = nearest == probe_labels
    yaws = np.zeros(len(probe_rows)) if use_frontal_probes else dataset.yaw_deg[probe_rows]
    hits = np.zeros(N_BUCKETS)
    counts = np.zeros(N_BUCKETS)
    for ok, yaw in zip(correct, yaws):
        b = yaw_bucket(yaw)
        counts[b] += 1
        hits[b] += bool(ok)
    acc = np.divide(hits, counts, out=np.full(N_BUCKETS, np.nan), where=counts > 0)
    return acc, counts.astype(np.int64)


def average_rank1(acc, counts):
    """Mean accuracy over non-empty buckets (macro average)."""
    live = np.asarray(counts) > 0
    if not live.any():
        raise ValueError("average_rank1: no occupied buckets")
    return float(np.mean(np.asarray(acc)[live]))


def fused_distance(state, img1, img2, c_params=None):
    """Matching distance for one image pair (each (1,S,S) or (S,S)).

    d = ||h(x1) - h(x2)|| + w * ||h(x1f) - h(x2f)||, where xif is the
    frontalized image and w the smaller discriminator confidence.
    """
    c_params = c_params if c_params is not None else state.nets["C"]
    pair = np.stack(
        [np.asarray(img1, dtype=np.float64).reshape(1, *_image_hw(state)),
         np.asarray(img2, dtype=np.float64).reshape(1, *_image_hw(state))]
    )
    f = recognizer_features(c_params, pair)
    d_orig = float(np.linalg.norm(f[0] - f[1]))
    syn = frontalize_images(state, pair)
    fs = recognizer_features(c_params, syn)
    d_syn = float(np.linalg.norm(fs[0] - fs[1]))
    w = float(d_confidence(state, syn).min())
    return d_orig + w * d_syn


def _image_hw(state):
    s = state.spec.image_size
    return (s, s)


def nme_by_split(state, dataset):
    """Regressor landmark NME and mean-predictor baseline per split."""
    train_idx, val_seen, val_unseen, _ = training.heldout_indices(dataset)
    out = {}
    for name, rows in (
        ("train", train_idx),
        ("val_seen", val_seen),
        ("val_unseen", val_unseen),
    ):
        out[name] = (
            training.regressor_nme(state.nets["R"], dataset, rows),
            training.mean_predictor_nme(dataset, rows),
        )
    return out


@dataclass
class EvalReport:
    """Everything the eval protocol measures, serializable as key=value."""

    nme: dict = field(default_factory=dict)
    rank1: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    averages: dict = field(default_factory=dict)
    heldout_l1: float = float("nan")
    ablation: dict = field(default_factory=dict)
    grid_paths: list = field(default_factory=list)
    extra: list = field(default_factory=list)

    def to_lines(self):
        lines = []
        for split in sorted(self.nme):
            nme, base = self.nme[split]
            lines.append("nme/%s=%.6f" % (split, nme))
            lines.append("nme_baseline/%s=%.6f" % (split, base))
        if np.isfinite(self.heldout_l1):
            lines.append("l1_heldout=%.6f" % self.heldout_l1)
        for mode in sorted(self.rank1):
            acc = self.rank1[mode]
            cnt = self.counts[mode]
            for b in range(len(acc)):
                if cnt[b] > 0:
                    lines.append(
                        "rank1/%s/deg%03d=%.6f" % (mode, int(b * BUCKET_DEG), acc[b])
                    )
                    lines.append(
                        "count/%s/deg%03d=%d" % (mode, int(b * BUCKET_DEG), cnt[b])
                    )
            lines.append("rank1/%s/avg=%.6f" % (mode, self.averages[mode]))
        for name in sorted(self.ablation):
            lines.append("ablation/%s=%.6f" % (name, self.ablation[name]))
        for p in self.grid_paths:
            lines.append("grid=%s" % p)
        lines.extend(self.extra)
        return lines


def write_report(report, path):
    text = "\n".join(report.to_lines()) + "\n"
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def evaluate(state, dataset, modes=MODES):
    """Full measurement pass; never mutates network parameters."""
    report = EvalReport()
    report.nme = nme_by_split(state, dataset)
    _, _, _, heldout = training.heldout_indices(dataset)
    report.heldout_l1 = training.heldout_l1(state, dataset, heldout)
    for mode in modes:
        acc, counts = rank1_identification(state, dataset, mode)
        report.rank1[mode] = acc
        report.counts[mode] = counts
        report.averages[mode] = average_rank1(acc, counts)
    return report


def run_ablation(config, dataset, log=None):
    """Train the full schedule plus the six single-component removals.

    Every variant shares the dataset, seeds and epoch schedule. The
    rank-1 measurement uses one fixed feature extractor for all rows
    (the shared pretrained recognizer), so the table compares generator
    quality rather than differing recognizers.
    """
    res_r = training.pretrain_r(config, dataset, log=log)
    res_c = training.pretrain_c(config, dataset, log=log)
    meter_c = res_c.params
    table = {}
    hashes = {}
    for name in _ABLATION_ROWS:
        cfg = config if name == "full" else dataclasses.replace(config, **{name: True})
        state = training.train_joint(
            cfg, dataset, res_r.params.copy(), res_c.params.copy()
        )
        acc, counts = rank1_identification(state, dataset, "syn", c_params=meter_c)
        table[name] = average_rank1(acc, counts)
        hashes[name] = dataset.content_hash()
        if log:
            log("ablation %s rank1_syn_avg=%.4f" % (name, table[name]))
    return table, hashes


# ---------------------------------------------------------------------------
# qualitative grids


def mosaic(tiles):
    """(rows, cols, H, W) tile block to a (rows*H, cols*W) image."""
    t = np.asarray(tiles, dtype=np.float64)
    if t.ndim != 4 or t.size == 0:
        raise ValueError("mosaic: need a non-empty (rows, cols, H, W) block")
    r, c, h, w = t.shape
    return t.transpose(0, 2, 1, 3).reshape(r * h, c * w)


def export_grid(state, dataset, rows, path):
    """PGM sheet: input | true frontal | generator output | masked output."""
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("export_grid: no rows selected")
    size = dataset.spec.image_size
    out = frontalize(state, dataset, rows)
    tiles = np.zeros((rows.size, 4, size, size))
    for i, row in enumerate(rows):
        mask, _ = morphable.symmetry_mask_pair(
            dataset.model, dataset.coeffs(int(row)), size, size
        )
        tiles[i, 0] = dataset.x[row]
        tiles[i, 1] = dataset.x_frontal[row]
        tiles[i, 2] = out[i, 0]
        tiles[i, 3] = out[i, 0] * mask
    container.write_pgm(path, mosaic(tiles))
    return path

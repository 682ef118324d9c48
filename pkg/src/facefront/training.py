"""Staged training: pretrain the pose regressor and the identity
recognizer, then run the three-stage adversarial schedule with per-stage
loss weights, alternating discriminator/generator updates and a late
unfreezing of the recognizer.

Every batch order is a pure function of (seed, stream, stage, epoch), so
an interrupted run resumed from a checkpoint continues bit-identically.
"""

import dataclasses
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import container, losses, morphable, networks, ops, synthdata, tensor


class TrainingError(RuntimeError):
    """Raised when training aborts (non-finite loss, bad state)."""


_STREAM_TRAIN = 7

_ORDER_PRETRAIN_R = 0
_ORDER_PRETRAIN_C = 1
_ORDER_D_REAL = 2
_ORDER_D_GEN = 3
_ORDER_G = 4

N_STAGES = 3

HISTORY_COLUMNS = (
    "stage",
    "epoch",
    "rec",
    "tv",
    "sym",
    "gan",
    "ident",
    "rparam",
    "d",
    "c",
    "l1_heldout",
    "lam_rec",
    "lam_tv",
    "lam_sym",
    "lam_gan",
    "lam_ident",
)


@dataclass(frozen=True)
class LossWeights:
    """Generator loss weights; zero disables the term."""

    rec: float
    tv: float
    sym: float
    gan: float
    ident: float

    def __post_init__(self):
        for name in _WEIGHT_NAMES:
            if getattr(self, name) < 0:
                raise ValueError("LossWeights.%s must be nonnegative" % name)

    def as_dict(self):
        return {name: float(getattr(self, name)) for name in _WEIGHT_NAMES}

    def to_vector(self):
        return np.array([getattr(self, n) for n in _WEIGHT_NAMES])


_WEIGHT_NAMES = ("rec", "tv", "sym", "gan", "ident")

# Stage schedule: reconstruction off and identity nearly off while the
# adversarial pair finds its footing, then both restored with smoothness
# and symmetry tuned down.
STAGE_WEIGHTS = (
    LossWeights(rec=0.0, tv=1.0, sym=1.0, gan=1.0, ident=0.01),
    LossWeights(rec=1.0, tv=0.5, sym=0.8, gan=1.0, ident=1.0),
    LossWeights(rec=1.0, tv=0.5, sym=0.8, gan=1.0, ident=1.0),
)

DROP_SWITCHES = ("drop_c", "drop_d", "drop_r", "drop_gid", "drop_gtv", "drop_gsym")


@dataclass(frozen=True)
class TrainConfig:
    """Full schedule: optimizer settings, stage lengths, loss weights and
    the six component-ablation switches."""

    seed: int = 0
    batch_size: int = 16
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_gan: float = 2e-4
    lr_pretrain: float = 1e-3
    lr_joint: float = 1e-4
    epochs_pretrain_r: int = 30
    epochs_pretrain_c: int = 30
    stage_epochs: tuple = (20, 20, 10)
    pose_weight: float = 5.0
    r_through_g: bool = True
    drop_c: bool = False
    drop_d: bool = False
    drop_r: bool = False
    drop_gid: bool = False
    drop_gtv: bool = False
    drop_gsym: bool = False
    stage_weights: tuple = STAGE_WEIGHTS

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs_pretrain_r < 0 or self.epochs_pretrain_c < 0:
            raise ValueError("pretrain epoch counts must be >= 0")
        if len(self.stage_epochs) != N_STAGES:
            raise ValueError("stage_epochs must list %d stages" % N_STAGES)
        if any(int(e) < 0 for e in self.stage_epochs):
            raise ValueError("stage epoch counts must be >= 0")
        if len(self.stage_weights) != N_STAGES:
            raise ValueError("stage_weights must list %d stages" % N_STAGES)
        object.__setattr__(
            self, "stage_epochs", tuple(int(e) for e in self.stage_epochs)
        )

    def weights_for_stage(self, stage):
        """Scheduled weights with ablation switches applied."""
        if not (0 <= stage < N_STAGES):
            raise ValueError("stage index out of range: %d" % stage)
        w = self.stage_weights[stage].as_dict()
        if self.drop_d:
            w["gan"] = 0.0
        if self.drop_c or self.drop_gid:
            w["ident"] = 0.0
        if self.drop_gtv:
            w["tv"] = 0.0
        if self.drop_gsym:
            w["sym"] = 0.0
        return w

    def to_vector(self):
        head = [
            float(self.seed),
            float(self.batch_size),
            self.beta1,
            self.beta2,
            self.adam_eps,
            self.lr_gan,
            self.lr_pretrain,
            self.lr_joint,
            float(self.epochs_pretrain_r),
            float(self.epochs_pretrain_c),
            float(self.stage_epochs[0]),
            float(self.stage_epochs[1]),
            float(self.stage_epochs[2]),
            self.pose_weight,
            float(self.r_through_g),
        ]
        head.extend(float(getattr(self, name)) for name in DROP_SWITCHES)
        for sw in self.stage_weights:
            head.extend(sw.to_vector())
        return np.array(head, dtype=np.float64)

    @classmethod
    def from_vector(cls, vec):
        v = np.asarray(vec, dtype=np.float64).reshape(-1)
        want = 21 + 5 * N_STAGES
        if v.size != want:
            raise ValueError("TrainConfig vector needs %d entries" % want)
        drops = {
            name: bool(round(v[15 + i])) for i, name in enumerate(DROP_SWITCHES)
        }
        weights = tuple(
            LossWeights(*v[21 + 5 * s : 26 + 5 * s]) for s in range(N_STAGES)
        )
        return cls(
            seed=int(round(v[0])),
            batch_size=int(round(v[1])),
            beta1=float(v[2]),
            beta2=float(v[3]),
            adam_eps=float(v[4]),
            lr_gan=float(v[5]),
            lr_pretrain=float(v[6]),
            lr_joint=float(v[7]),
            epochs_pretrain_r=int(round(v[8])),
            epochs_pretrain_c=int(round(v[9])),
            stage_epochs=tuple(int(round(e)) for e in v[10:13]),
            pose_weight=float(v[13]),
            r_through_g=bool(round(v[14])),
            stage_weights=weights,
            **drops,
        )


class Adam:
    """Adam with bias correction; moments keyed like the parameter dict."""

    def __init__(self, arrays, lr, beta1=0.5, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = OrderedDict((k, np.zeros_like(a)) for k, a in arrays.items())
        self.v = OrderedDict((k, np.zeros_like(a)) for k, a in arrays.items())

    def step(self, arrays, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for key, g in grads.items():
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            arrays[key] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _order(seed, stream, stage, epoch, n):
    rng = np.random.default_rng(
        (int(seed), _STREAM_TRAIN, int(stream), int(stage), int(epoch))
    )
    return rng.permutation(int(n))


def _with_channel(images):
    return images[:, None, :, :]


def _check_finite(value, term):
    if not np.all(np.isfinite(value)):
        raise TrainingError("non-finite loss in term %r" % term)
    return float(value)


def arch_set(spec):
    """The four network shapes implied by a dataset spec."""
    coeff_dim = morphable.POSE_DIM + spec.d_id + spec.d_exp + spec.d_tex
    size = spec.image_size
    return {
        "R": networks.regressor_arch(size, coeff_dim),
        "G": networks.generator_arch(size, coeff_dim),
        "D": networks.discriminator_arch(size),
        "C": networks.recognizer_arch(size, spec.n_identities),
    }


def heldout_indices(dataset):
    train, val_seen, val_unseen = synthdata.split_indices(dataset)
    return train, val_seen, val_unseen, np.concatenate([val_seen, val_unseen])


# ---------------------------------------------------------------------------
# pretraining


@dataclass
class PretrainResult:
    """Pretrained parameters plus the per-epoch mean training loss and the
    held-out metric (NME for the regressor, accuracy for the recognizer)."""

    params: networks.NetParams
    epoch_losses: np.ndarray
    metric: float
    baseline: float


def regressor_predictions(r_params, images, batch=64):
    """Forward-only regressor outputs (normalized coefficients)."""
    arch = r_params.arch
    out = []
    for lo in range(0, images.shape[0], batch):
        g = tensor.Graph()
        bound = networks.bind(g, r_params, trainable=False)
        x = g.leaf(_with_channel(images[lo : lo + batch]))
        out.append(networks.apply_regressor(g, bound, arch, x).data)
    return np.concatenate(out, axis=0)


def regressor_nme(r_params, dataset, indices):
    """Mean landmark NME (percent) of the regressor on given rows."""
    preds = regressor_predictions(r_params, dataset.x[indices])
    return _nme_of_normalized(preds, dataset, indices)


def mean_predictor_nme(dataset, indices):
    """NME of always predicting the mean coefficient vector."""
    zeros = np.zeros((len(indices), dataset.model.coeff_dim))
    return _nme_of_normalized(zeros, dataset, indices)


def _nme_of_normalized(preds_norm, dataset, indices):
    model = dataset.model
    vals = []
    for row, pred in zip(indices, preds_norm):
        c_pred = model.denormalize(pred)
        c_true = dataset.coeffs(int(row))
        lm_pred = model.landmarks_2d(c_pred)
        lm_true = model.landmarks_2d(c_true)
        vals.append(morphable.landmark_nme(lm_pred, lm_true))
    return float(np.mean(vals))


def pretrain_r(config, dataset, log=None):
    """Regress normalized coefficients from posed images under the
    weighted parameter distance; reports held-out landmark NME."""
    arch = arch_set(dataset.spec)["R"]
    params = networks.init_net(arch, config.seed)
    opt = Adam(
        params.arrays, config.lr_pretrain, config.beta1, config.beta2,
        config.adam_eps,
    )
    train_idx, val_seen, _, _ = heldout_indices(dataset)
    w_diag = morphable.pose_weight_vector(
        dataset.model.coeff_dim, config.pose_weight
    )
    targets = dataset.p_norm
    batch = config.batch_size
    epoch_losses = []
    for epoch in range(config.epochs_pretrain_r):
        order = _order(config.seed, _ORDER_PRETRAIN_R, 0, epoch, len(train_idx))
        rows = train_idx[order]
        total = 0.0
        iters = len(rows) // batch
        for it in range(iters):
            sel = rows[it * batch : (it + 1) * batch]
            g = tensor.Graph()
            bound = networks.bind(g, params, trainable=True)
            x = g.leaf(_with_channel(dataset.x[sel]))
            pred = networks.apply_regressor(g, bound, arch, x)
            loss = morphable.param_distance_loss(pred, targets[sel], w_diag)
            total += _check_finite(loss.data, "rparam")
            gm = g.backward(loss)
            opt.step(params.arrays, networks.collect_grads(bound, gm))
        epoch_losses.append(total / max(iters, 1))
        if log:
            log("pretrain-r epoch=%d loss=%.6f" % (epoch, epoch_losses[-1]))
    # held-out images of the training identities; identity-level
    # generalization is reported separately by the evaluation module
    nme = regressor_nme(params, dataset, val_seen)
    base = mean_predictor_nme(dataset, val_seen)
    if log:
        log("pretrain-r heldout nme=%.4f baseline=%.4f" % (nme, base))
    return PretrainResult(params, np.asarray(epoch_losses), nme, base)


def classifier_accuracy(c_params, images, labels, batch=64):
    arch = c_params.arch
    hits = 0
    for lo in range(0, images.shape[0], batch):
        g = tensor.Graph()
        bound = networks.bind(g, c_params, trainable=False)
        x = g.leaf(_with_channel(images[lo : lo + batch]))
        logits, _ = networks.apply_recognizer(g, bound, arch, x)
        hits += int((logits.data.argmax(axis=1) == labels[lo : lo + batch]).sum())
    return hits / float(images.shape[0])


def pretrain_c(config, dataset, log=None, label_override=None):
    """Identity classification on ground-truth frontal images; reports
    held-out accuracy on unseen frontals of the training identities."""
    arch = arch_set(dataset.spec)["C"]
    params = networks.init_net(arch, config.seed)
    opt = Adam(
        params.arrays, config.lr_pretrain, config.beta1, config.beta2,
        config.adam_eps,
    )
    train_idx, val_seen, _, _ = heldout_indices(dataset)
    labels = dataset.labels if label_override is None else label_override
    labels = np.asarray(labels, dtype=np.int64)
    batch = config.batch_size
    epoch_losses = []
    for epoch in range(config.epochs_pretrain_c):
        order = _order(config.seed, _ORDER_PRETRAIN_C, 0, epoch, len(train_idx))
        rows = train_idx[order]
        total = 0.0
        iters = len(rows) // batch
        for it in range(iters):
            sel = rows[it * batch : (it + 1) * batch]
            g = tensor.Graph()
            bound = networks.bind(g, params, trainable=True)
            x = g.leaf(_with_channel(dataset.x_frontal[sel]))
            logits, _ = networks.apply_recognizer(g, bound, arch, x)
            loss = losses.c_loss(logits, labels[sel])
            total += _check_finite(loss.data, "c")
            gm = g.backward(loss)
            opt.step(params.arrays, networks.collect_grads(bound, gm))
        epoch_losses.append(total / max(iters, 1))
        if log:
            log("pretrain-c epoch=%d loss=%.6f" % (epoch, epoch_losses[-1]))
    acc = classifier_accuracy(params, dataset.x_frontal[val_seen], labels[val_seen])
    chance = 1.0 / dataset.spec.n_identities
    if log:
        log("pretrain-c heldout accuracy=%.4f chance=%.4f" % (acc, chance))
    return PretrainResult(params, np.asarray(epoch_losses), acc, chance)


# ---------------------------------------------------------------------------
# joint training


@dataclass
class TrainState:
    """Everything needed to continue training bit-identically."""

    config: TrainConfig
    spec: synthdata.DatasetSpec
    nets: dict
    opt: dict
    stage: int
    epoch: int
    l1_start: float
    history: list

    def done(self):
        return self.stage >= N_STAGES


def _new_optimizers(config, nets):
    lr = {
        "R": config.lr_joint,
        "G": config.lr_gan,
        "D": config.lr_gan,
        "C": config.lr_joint,
    }
    return {
        name: Adam(
            net.arrays, lr[name], config.beta1, config.beta2, config.adam_eps
        )
        for name, net in nets.items()
    }


def init_joint_state(config, dataset, r_params=None, c_params=None):
    """Fresh G/D plus (copies of) the pretrained R and C."""
    archs = arch_set(dataset.spec)
    nets = {
        "R": r_params.copy() if r_params else networks.init_net(archs["R"], config.seed),
        "G": networks.init_net(archs["G"], config.seed),
        "D": networks.init_net(archs["D"], config.seed),
        "C": c_params.copy() if c_params else networks.init_net(archs["C"], config.seed),
    }
    state = TrainState(
        config=config,
        spec=dataset.spec,
        nets=nets,
        opt=_new_optimizers(config, nets),
        stage=0,
        epoch=0,
        l1_start=float("nan"),
        history=[],
    )
    _, _, _, heldout = heldout_indices(dataset)
    state.l1_start = heldout_l1(state, dataset, heldout)
    return state


def generate_batch(state, dataset, rows):
    """Forward-only frontalization of dataset rows: x_out, p_hat."""
    archs = arch_set(state.spec)
    g = tensor.Graph()
    x = g.leaf(_with_channel(dataset.x[rows]))
    if state.config.drop_r:
        p_hat = g.leaf(np.zeros((len(rows), dataset.model.coeff_dim)))
    else:
        rb = networks.bind(g, state.nets["R"], trainable=False)
        p_hat = networks.apply_regressor(g, rb, archs["R"], x)
    gb = networks.bind(g, state.nets["G"], trainable=False)
    x_out = networks.apply_generator(g, gb, archs["G"], x, p_hat)
    return x_out.data, p_hat.data


def heldout_l1(state, dataset, indices, batch=64):
    """Mean absolute error of the frontalized output on given rows."""
    total = 0.0
    count = 0
    for lo in range(0, len(indices), batch):
        rows = indices[lo : lo + batch]
        x_out, _ = generate_batch(state, dataset, rows)
        ref = _with_channel(dataset.x_frontal[rows])
        total += float(np.abs(x_out - ref).sum())
        count += ref.size
    return total / count


def _recognizer_features(state, images):
    archs = arch_set(state.spec)
    g = tensor.Graph()
    cb = networks.bind(g, state.nets["C"], trainable=False)
    _, feat = networks.apply_recognizer(g, cb, archs["C"], g.leaf(images))
    return feat.data


def _mask_pair(dataset, cache, row):
    got = cache.get(row)
    if got is None:
        size = dataset.spec.image_size
        m, mf = morphable.symmetry_mask_pair(
            dataset.model, dataset.coeffs(int(row)), size, size
        )
        got = (m[None, :, :], mf[None, :, :])
        cache[row] = got
    return got


def _d_step(state, dataset, archs, real_rows, gen_rows, sums):
    x_gen, _ = generate_batch(state, dataset, gen_rows)
    g = tensor.Graph()
    db = networks.bind(g, state.nets["D"], trainable=True)
    logits_real = networks.apply_discriminator(
        g, db, archs["D"], g.leaf(_with_channel(dataset.x_frontal[real_rows]))
    )
    logits_gen = networks.apply_discriminator(g, db, archs["D"], g.leaf(x_gen))
    loss = losses.d_loss(logits_real, logits_gen)
    sums["d"] += _check_finite(loss.data, "d")
    gm = g.backward(loss)
    state.opt["D"].step(state.nets["D"].arrays, networks.collect_grads(db, gm))


def _g_step(state, dataset, archs, rows, weights, r_trainable, mask_cache, sums):
    config = state.config
    g = tensor.Graph()
    gb = networks.bind(g, state.nets["G"], trainable=True)
    x_in = g.leaf(_with_channel(dataset.x[rows]))
    x_ref = _with_channel(dataset.x_frontal[rows])

    rb = None
    if config.drop_r:
        p_hat = g.leaf(np.zeros((len(rows), dataset.model.coeff_dim)))
    else:
        rb = networks.bind(g, state.nets["R"], trainable=r_trainable)
        p_hat = networks.apply_regressor(g, rb, archs["R"], x_in)
    p_for_g = p_hat
    if r_trainable and not config.r_through_g:
        p_for_g = g.leaf(p_hat.data)

    x_out = networks.apply_generator(g, gb, archs["G"], x_in, p_for_g)

    terms = {}
    if weights["rec"] > 0:
        terms["rec"] = losses.rec_loss(x_out, g.leaf(x_ref))
    if weights["tv"] > 0:
        terms["tv"] = losses.tv_loss(x_out)
    if weights["sym"] > 0:
        # Second generator pass on the mirrored input; its conditioning is
        # the analytic flip of the live p so gradients still reach R.
        if config.drop_r:
            p_flip = p_for_g
        else:
            p_flip = losses.flip_pose_normalized(p_for_g, dataset.model)
        x_out_flip = networks.apply_generator(
            g, gb, archs["G"], ops.hflip(x_in), p_flip
        )
        pairs = [_mask_pair(dataset, mask_cache, int(r)) for r in rows]
        mask = np.stack([p[0] for p in pairs])
        mask_flip = np.stack([p[1] for p in pairs])
        terms["sym"] = losses.sym_loss_terms(x_out, x_out_flip, mask, mask_flip)
    if weights["gan"] > 0:
        db = networks.bind(g, state.nets["D"], trainable=False)
        terms["gan"] = losses.g_gan_loss(
            networks.apply_discriminator(g, db, archs["D"], x_out)
        )
    if weights["ident"] > 0:
        cb = networks.bind(g, state.nets["C"], trainable=False)
        _, feat = networks.apply_recognizer(g, cb, archs["C"], x_out)
        ref_feat = _recognizer_features(state, x_ref)
        terms["ident"] = losses.g_id_loss(feat_f=feat, feat_ref=ref_feat)

    for name, t in terms.items():
        sums[name] += _check_finite(t.data, name)

    total = losses.total_g_loss(weights, terms)
    if r_trainable:
        w_diag = morphable.pose_weight_vector(
            dataset.model.coeff_dim, config.pose_weight
        )
        rterm = morphable.param_distance_loss(
            p_hat, dataset.p_norm[rows], w_diag
        )
        sums["rparam"] += _check_finite(rterm.data, "rparam")
        total = ops.add(total, rterm)

    gm = g.backward(total)
    state.opt["G"].step(state.nets["G"].arrays, networks.collect_grads(gb, gm))
    if r_trainable:
        state.opt["R"].step(state.nets["R"].arrays, networks.collect_grads(rb, gm))


def _c_step(state, dataset, archs, rows, sums):
    # both real views of the batch: posed inputs and frontal ground truths
    g = tensor.Graph()
    cb = networks.bind(g, state.nets["C"], trainable=True)
    reals = np.concatenate(
        [_with_channel(dataset.x[rows]), _with_channel(dataset.x_frontal[rows])]
    )
    logits, _ = networks.apply_recognizer(g, cb, archs["C"], g.leaf(reals))
    loss = losses.c_loss(logits, np.concatenate([dataset.labels[rows]] * 2))
    sums["c"] += _check_finite(loss.data, "c")
    gm = g.backward(loss)
    state.opt["C"].step(state.nets["C"].arrays, networks.collect_grads(cb, gm))


def _run_joint_epoch(state, dataset, train_idx, mask_cache, stage, epoch):
    config = state.config
    archs = arch_set(state.spec)
    weights = config.weights_for_stage(stage)
    r_trainable = stage >= 1 and not config.drop_r
    c_steps = stage == 2 and not config.drop_c
    batch = config.batch_size
    n = len(train_idx)
    iters = n // batch
    if iters == 0:
        raise TrainingError(
            "training split (%d) smaller than batch size (%d)" % (n, batch)
        )
    order_g = train_idx[_order(config.seed, _ORDER_G, stage, epoch, n)]
    sums = {k: 0.0 for k in ("rec", "tv", "sym", "gan", "ident", "rparam", "d", "c")}
    if not config.drop_d:
        order_real = train_idx[_order(config.seed, _ORDER_D_REAL, stage, epoch, n)]
        order_gen = train_idx[_order(config.seed, _ORDER_D_GEN, stage, epoch, n)]
    for it in range(iters):
        sl = slice(it * batch, (it + 1) * batch)
        if not config.drop_d:
            _d_step(state, dataset, archs, order_real[sl], order_gen[sl], sums)
        _g_step(
            state, dataset, archs, order_g[sl], weights, r_trainable,
            mask_cache, sums,
        )
        if c_steps:
            _c_step(state, dataset, archs, order_g[sl], sums)
    return {k: v / iters for k, v in sums.items()}


def train_joint(config, dataset, r_params=None, c_params=None, state=None, log=None):
    """Run (or continue) the three-stage joint schedule.

    Per iteration: one discriminator step fed two fresh batches (real
    frontals, generated frontals), one generator step on the weighted
    loss, and in the final stage one recognizer step on real posed
    images. The regressor joins the generator step from stage 2 on.
    """
    if state is None:
        state = init_joint_state(config, dataset, r_params, c_params)
    config = state.config
    train_idx, _, _, heldout = heldout_indices(dataset)
    mask_cache = {}
    while state.stage < N_STAGES:
        stage = state.stage
        weights = config.weights_for_stage(stage)
        while state.epoch < config.stage_epochs[stage]:
            epoch = state.epoch
            means = _run_joint_epoch(
                state, dataset, train_idx, mask_cache, stage, epoch
            )
            l1 = heldout_l1(state, dataset, heldout)
            row = [float(stage), float(epoch)]
            row.extend(means[k] for k in ("rec", "tv", "sym", "gan", "ident",
                                          "rparam", "d", "c"))
            row.append(l1)
            row.extend(weights[k] for k in _WEIGHT_NAMES)
            state.history.append(np.array(row, dtype=np.float64))
            state.epoch = epoch + 1
            if log:
                log(
                    "stage=%d epoch=%d rec=%.4f tv=%.4f sym=%.4f gan=%.4f "
                    "ident=%.4f rparam=%.4f d=%.4f c=%.4f l1=%.4f"
                    % (stage, epoch, means["rec"], means["tv"], means["sym"],
                       means["gan"], means["ident"], means["rparam"],
                       means["d"], means["c"], l1)
                )
        state.stage += 1
        state.epoch = 0
    return state


# ---------------------------------------------------------------------------
# checkpoints


def _net_records(prefix, net):
    return [(prefix + key, arr) for key, arr in net.arrays.items()]


def save_net(params, spec, path):
    """Store one network's parameters plus the dataset spec that shaped it."""
    records = [
        ("spec", spec.to_vector()),
        ("net_tag", np.array([float(networks._NET_SEED_TAG[params.name])])),
    ]
    records.extend(_net_records("param/", params))
    container.write_records(path, records)


def load_net(path):
    """Inverse of save_net: (NetParams, DatasetSpec)."""
    rec = container.read_records(path)
    if "spec" not in rec or "net_tag" not in rec:
        raise container.ContainerError("%s: not a network parameter file" % path)
    spec = synthdata.DatasetSpec.from_vector(rec["spec"])
    tag = int(round(rec["net_tag"][0]))
    names = {v: k for k, v in networks._NET_SEED_TAG.items()}
    if tag not in names:
        raise container.ContainerError("%s: unknown network tag %d" % (path, tag))
    name = names[tag]
    arch = arch_set(spec)[name]
    ref = networks.init_net(arch, 0)
    arrays = OrderedDict()
    for key, template in ref.arrays.items():
        full = "param/" + key
        if full not in rec:
            raise container.ContainerError("%s: missing record %s" % (path, full))
        arrays[key] = rec[full].reshape(template.shape)
    return networks.NetParams(name, arch, arrays), spec


def checkpoint(state, path):
    """Serialize a TrainState for bit-exact resumption."""
    records = [
        ("config", state.config.to_vector()),
        ("spec", state.spec.to_vector()),
        ("counters", np.array([float(state.stage), float(state.epoch)])),
        ("l1_start", np.array([state.l1_start])),
    ]
    if state.history:
        records.append(("history", np.stack(state.history)))
    else:
        records.append(("history", np.zeros((0, len(HISTORY_COLUMNS)))))
    for name in sorted(state.nets):
        records.extend(_net_records("net/%s/" % name, state.nets[name]))
        opt = state.opt[name]
        records.append(("opt/%s/t" % name, np.array([float(opt.t)])))
        for key, arr in opt.m.items():
            records.append(("opt/%s/m/%s" % (name, key), arr))
        for key, arr in opt.v.items():
            records.append(("opt/%s/v/%s" % (name, key), arr))
    container.write_records(path, records)


def resume(path):
    """Load a TrainState checkpoint written by checkpoint()."""
    rec = container.read_records(path)
    for need in ("config", "spec", "counters", "l1_start", "history"):
        if need not in rec:
            raise container.ContainerError("%s: missing record %r" % (path, need))
    config = TrainConfig.from_vector(rec["config"])
    spec = synthdata.DatasetSpec.from_vector(rec["spec"])
    archs = arch_set(spec)
    nets = {}
    for name in ("C", "D", "G", "R"):
        ref = networks.init_net(archs[name], 0)
        arrays = OrderedDict()
        for key, template in ref.arrays.items():
            full = "net/%s/%s" % (name, key)
            if full not in rec:
                raise container.ContainerError(
                    "%s: missing record %s" % (path, full)
                )
            arrays[key] = rec[full].reshape(template.shape)
        nets[name] = networks.NetParams(name, archs[name], arrays)
    opt = _new_optimizers(config, nets)
    for name in nets:
        opt[name].t = int(round(rec["opt/%s/t" % name][0]))
        for key in nets[name].arrays:
            opt[name].m[key] = rec["opt/%s/m/%s" % (name, key)].reshape(
                nets[name].arrays[key].shape
            )
            opt[name].v[key] = rec["opt/%s/v/%s" % (name, key)].reshape(
                nets[name].arrays[key].shape
            )
    counters = rec["counters"]
    history = rec["history"]
    rows = [np.array(r) for r in history] if history.size else []
    return TrainState(
        config=config,
        spec=spec,
        nets=nets,
        opt=opt,
        stage=int(round(counters[0])),
        epoch=int(round(counters[1])),
        l1_start=float(rec["l1_start"][0]),
        history=rows,
    )

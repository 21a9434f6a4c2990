"""Three-conv / three-pool / one-dense binary image classifier in numpy.

Layout is NHWC. Each stage is a valid 3x3 convolution (stride 1) followed by
ReLU and 2x2 max pooling (stride 2, floor); the flattened features feed one
dense unit whose sigmoid is the malicious-class probability. Gradients are
derived by hand and checked against finite differences in the test suite.
"""

import copy
import csv
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateDataset, IncompatibleModel, InvalidConfig, ShapeMismatch

INPUT_SIZE = 100
MODEL_MAGIC = b"MDVXCNN\x00"
MODEL_FORMAT = 1


@dataclass(frozen=True)
class Architecture:
    filters: tuple = (16, 32, 64)
    kernel: int = 3
    pool: int = 2
    input_size: int = INPUT_SIZE

    def feature_shapes(self):
        """Spatial size after every conv and pool stage."""
        shapes = []
        size = self.input_size
        for _ in self.filters:
            size = size - self.kernel + 1
            if size < self.pool:
                raise ShapeMismatch(f"architecture collapses the input to {size} pixels")
            conv = size
            size //= self.pool
            shapes.append((conv, size))
        return shapes

    @property
    def dense_inputs(self):
        return self.feature_shapes()[-1][1] ** 2 * self.filters[-1]


@dataclass
class CnnModel:
    arch: Architecture
    params: dict
    rng_seed: int = 0
    epoch_count: int = 0

    def __post_init__(self):
        dense = self.params.get("dense_w")
        if dense is not None and dense.size != self.arch.dense_inputs:
            raise ShapeMismatch(f"dense layer takes {dense.size} inputs, "
                                f"conv stack produces {self.arch.dense_inputs}")

    @classmethod
    def initialize(cls, arch=None, seed=0):
        """He-style uniform init scaled by fan-in; biases start at zero."""
        arch = arch or Architecture()
        rng = np.random.default_rng(seed)
        params = {}
        cin = 1
        k = arch.kernel
        for i, cout in enumerate(arch.filters):
            limit = np.sqrt(6.0 / (cin * k * k))
            params[f"conv{i}_w"] = rng.uniform(-limit, limit, size=(k, k, cin, cout))
            params[f"conv{i}_b"] = np.zeros(cout)
            cin = cout
        limit = np.sqrt(6.0 / arch.dense_inputs)
        params["dense_w"] = rng.uniform(-limit, limit, size=arch.dense_inputs)
        params["dense_b"] = np.zeros(1)
        return cls(arch, params, seed, 0)

    @classmethod
    def zeros(cls, arch=None):
        model = cls.initialize(arch)
        for v in model.params.values():
            v[...] = 0.0
        return model

    def copy(self):
        return copy.deepcopy(self)

    @property
    def parameter_count(self):
        return sum(v.size for v in self.params.values())


# -- forward / backward ----------------------------------------------------

def _as_batch(images):
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (INPUT_SIZE, INPUT_SIZE):
        raise ShapeMismatch(f"expected {INPUT_SIZE}x{INPUT_SIZE} images, got {x.shape}")
    return x


def _conv_forward(x, w, b):
    n, h, wd, c = x.shape
    k, _, cin, cout = w.shape
    oh, ow = h - k + 1, wd - k + 1
    # patch columns ordered (kernel row, kernel col, channel) to match HWIO weights
    cols = np.concatenate([x[:, i:i + oh, j:j + ow, :] for i in range(k) for j in range(k)],
                          axis=-1).reshape(n * oh * ow, k * k * c)
    z = cols @ w.reshape(k * k * cin, cout) + b
    return z.reshape(n, oh, ow, cout), cols


def _conv_backward(x_shape, cols, w, dz, need_input, need_params=True):
    n, h, wd, c = x_shape
    k, _, cin, cout = w.shape
    oh, ow = h - k + 1, wd - k + 1
    dflat = dz.reshape(-1, cout)
    dw = db = None
    if need_params:
        dw = (cols.T @ dflat).reshape(w.shape)
        db = dflat.sum(axis=0)
    if not need_input:
        return None, dw, db
    dcols = (dflat @ w.reshape(k * k * cin, cout).T).reshape(n, oh, ow, k * k, c)
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, i:i + oh, j:j + ow, :] += dcols[:, :, :, i * k + j, :]
    return dx, dw, db


def _pool_subgrids(a, p):
    ph, pw = a.shape[1] // p, a.shape[2] // p
    return [a[:, di:ph * p:p, dj:pw * p:p] for di in range(p) for dj in range(p)]


def _pool_forward(a, p):
    subs = _pool_subgrids(a, p)
    pooled = subs[0].copy()
    for s in subs[1:]:
        np.maximum(pooled, s, out=pooled)
    return pooled


def _pool_backward(a, pooled, dout, p):
    """Route each gradient to the window maximum; the first index wins ties."""
    da = np.zeros_like(a)
    taken = np.zeros(pooled.shape, dtype=bool)
    for src, dst in zip(_pool_subgrids(a, p), _pool_subgrids(da, p)):
        hit = (src == pooled) & ~taken
        np.multiply(dout, hit, out=dst)
        taken |= hit
    return da


def _forward(model, x, dtype=np.float64):
    arch = model.arch
    params = {k: v.astype(dtype, copy=False) for k, v in model.params.items()}
    h = x.astype(dtype, copy=False)[..., None]
    cache = []
    for i in range(len(arch.filters)):
        z, cols = _conv_forward(h, params[f"conv{i}_w"], params[f"conv{i}_b"])
        a = np.maximum(z, 0.0)
        pooled = _pool_forward(a, arch.pool)
        cache.append((h.shape, cols, a, pooled))
        h = pooled
    flat = h.reshape(h.shape[0], -1)
    logits = flat @ params["dense_w"] + params["dense_b"][0]
    return logits.astype(np.float64), (cache, flat, h.shape, params)


def _backward(model, state, dlogits, need_input=False, need_params=True):
    cache, flat, pooled_shape, params = state
    arch = model.arch
    dlogits = dlogits.astype(flat.dtype, copy=False)
    grads = {}
    if need_params:
        grads["dense_w"] = flat.T @ dlogits
        grads["dense_b"] = np.array([dlogits.sum()])
    g = np.outer(dlogits, params["dense_w"]).reshape(pooled_shape)
    for i in reversed(range(len(arch.filters))):
        x_shape, cols, a, pooled = cache[i]
        dz = _pool_backward(a, pooled, g, arch.pool)
        dz *= a > 0
        g, dw, db = _conv_backward(x_shape, cols, params[f"conv{i}_w"], dz,
                                   need_input or i > 0, need_params)
        if need_params:
            grads[f"conv{i}_w"] = dw
            grads[f"conv{i}_b"] = db
    dx = g[..., 0] if need_input else None
    return grads, dx


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_from_logits(logits, targets):
    """Numerically stable binary cross-entropy, one value per sample."""
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    return np.maximum(z, 0) - t * z + np.log1p(np.exp(-np.abs(z)))


def logits(model, images):
    return _forward(model, _as_batch(images))[0]


def batched_logits(model, images, batch_size=64, dtype=np.float64):
    x = _as_batch(images)
    return np.concatenate([_forward(model, x[i:i + batch_size], dtype)[0]
                           for i in range(0, len(x), batch_size)])


def predict(model, images, batch_size=64):
    return sigmoid(batched_logits(model, images, batch_size))


def forward(model, image):
    """Malicious-class probability of a single 100x100 image."""
    x = _as_batch(image)
    if len(x) != 1:
        raise ShapeMismatch("forward takes a single image; use predict for batches")
    return float(sigmoid(_forward(model, x)[0])[0])


def _check_target(target):
    if target not in (0, 1):
        raise InvalidConfig(f"target label must be 0 or 1, got {target!r}")


def score_and_gradient(model, image, target):
    """Probability and input gradient of BCE(probability, target) in one pass."""
    _check_target(target)
    x = _as_batch(image)
    z, state = _forward(model, x)
    p = sigmoid(z)
    _, dx = _backward(model, state, p - target, need_input=True)
    return float(p[0]), dx[0]


def scores_and_gradients(model, images, target, dtype=np.float64):
    """Batched probabilities and input gradients; parameter gradients are skipped."""
    _check_target(target)
    x = _as_batch(images)
    z, state = _forward(model, x, dtype)
    p = sigmoid(z)
    _, dx = _backward(model, state, p - target, need_input=True, need_params=False)
    return p, dx.astype(np.float64)


def input_gradient(model, image, target):
    return score_and_gradient(model, image, target)[1]


def loss_and_grads(model, images, labels, dtype=np.float64):
    """Mean BCE over a batch and its gradient for every parameter."""
    x = _as_batch(images)
    y = np.asarray(labels, dtype=np.float64)
    z, state = _forward(model, x, dtype)
    loss = bce_from_logits(z, y).mean()
    grads, _ = _backward(model, state, (sigmoid(z) - y) / len(x))
    return loss, {k: g.astype(np.float64) for k, g in grads.items()}, sigmoid(z)


# -- metrics ---------------------------------------------------------------

def auc(scores, labels):
    """Area under the ROC curve via the rank-sum statistic (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateDataset("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# -- training --------------------------------------------------------------

@dataclass
class EpochMetrics:
    fold: int
    epoch: int
    loss: float
    val_loss: float
    auc: float
    val_auc: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    hyperparams: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict, repr=False)  # epoch -> model copy

    @property
    def last(self):
        return self.epochs[-1] if self.epochs else None

    def at_epoch(self, epoch):
        for m in self.epochs:
            if m.epoch == epoch:
                return m
        raise KeyError(epoch)


CSV_COLUMNS = ["fold", "epoch", "loss", "val_loss", "auc", "val_auc"]


def write_metrics_csv(path, reports):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for report in reports:
            for m in report.epochs:
                writer.writerow(asdict(m))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # forward/backward precision; parameters and optimizer state stay float64
    compute_dtype: str = "float32"


def _check_two_classes(labels):
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise DegenerateDataset("dataset must contain both classes")


def train(model, images, labels, epochs, config=None, validation=None, fold=0,
          snapshot_epochs=()):
    """Train ``model`` in place with Adam on mean BCE.

    Training-set loss/AUC are accumulated from the predictions made during the
    epoch (before each update); validation metrics are computed after it.
    Returns ``(model, TrainReport)``.
    """
    config = config or TrainConfig()
    x = _as_batch(images)
    y = np.asarray(labels, dtype=np.float64)
    _check_two_classes(y)
    report = TrainReport(hyperparams={**asdict(config), "optimizer": "adam",
                                      "arch": asdict(model.arch), "seed": model.rng_seed})
    if epochs <= 0:
        return model, report
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v = {k: np.zeros_like(p) for k, p in model.params.items()}
    step = 0
    dtype = np.dtype(config.compute_dtype)
    for _ in range(epochs):
        epoch = model.epoch_count + 1
        rng = np.random.default_rng([model.rng_seed, epoch])
        order = rng.permutation(len(x))
        seen_scores = np.empty(len(x))
        losses = []
        for start in range(0, len(x), config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads, scores = loss_and_grads(model, x[batch], y[batch], dtype)
            losses.append(loss * len(batch))
            seen_scores[start:start + len(batch)] = scores
            step += 1
            lr_t = config.learning_rate * np.sqrt(1 - config.beta2 ** step) / (1 - config.beta1 ** step)
            for k, g in grads.items():
                m[k] = config.beta1 * m[k] + (1 - config.beta1) * g
                v[k] = config.beta2 * v[k] + (1 - config.beta2) * g * g
                model.params[k] -= lr_t * m[k] / (np.sqrt(v[k]) + config.adam_eps)
        model.epoch_count = epoch
        train_loss = float(np.sum(losses) / len(x))
        train_auc = auc(seen_scores, y[order])
        val_loss = val_auc = float("nan")
        if validation is not None:
            vx, vy = validation
            vz = batched_logits(model, vx, dtype=dtype)
            val_loss = float(bce_from_logits(vz, vy).mean())
            val_auc = auc(vz, vy)
        report.epochs.append(EpochMetrics(fold, epoch, train_loss, val_loss, train_auc, val_auc))
        if epoch in snapshot_epochs:
            report.snapshots[epoch] = model.copy()
    return model, report


def kfold_indices(labels, k=5, seed=0):
    """Stratified, seeded split into ``k`` disjoint validation folds."""
    labels = np.asarray(labels)
    if k < 2:
        raise InvalidConfig("k-fold training needs k >= 2")
    if len(labels) < k:
        raise DegenerateDataset(f"need at least {k} samples for {k}-fold training")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    offset = 0
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        for i, idx in enumerate(members):
            folds[(offset + i) % k].append(int(idx))
        offset += len(members)
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


def kfold_train(images, labels, k=5, epochs=1, arch=None, seed=0, config=None,
                snapshot_epochs=()):
    """Train one model per fold; model ``i`` never sees validation fold ``i``."""
    x = _as_batch(images)
    y = np.asarray(labels)
    _check_two_classes(y)
    folds = kfold_indices(y, k, seed)
    results = []
    for i, val_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(len(y)), val_idx)
        model = CnnModel.initialize(arch, seed=seed * 1000 + i)
        model, report = train(model, x[train_idx], y[train_idx], epochs, config,
                              validation=(x[val_idx], y[val_idx]), fold=i,
                              snapshot_epochs=snapshot_epochs)
        report.hyperparams["validation_indices"] = val_idx.tolist()
        results.append((model, report))
    return results


# -- persistence -----------------------------------------------------------

def save_model(model, path):
    names = list(model.params)
    header = {
        "arch": asdict(model.arch),
        "params": [[n, list(model.params[n].shape)] for n in names],
        "parameter_count": int(model.parameter_count),
        "rng_seed": int(model.rng_seed),
        "epoch_count": int(model.epoch_count),
    }
    raw = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes() for n in names)
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC + struct.pack("<II", MODEL_FORMAT, len(raw)) + raw + payload)


def load_model(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:8] != MODEL_MAGIC:
        raise IncompatibleModel(f"{path}: not a model file")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != MODEL_FORMAT:
        raise IncompatibleModel(f"{path}: unsupported model format {version}")
    try:
        header = json.loads(blob[16:16 + hlen])
    except ValueError:
        raise IncompatibleModel(f"{path}: corrupt header") from None
    payload = blob[16 + hlen:]
    count = header["parameter_count"]
    declared = sum(int(np.prod(shape)) for _, shape in header["params"])
    if declared != count or len(payload) != 8 * count:
        raise IncompatibleModel(f"{path}: payload holds {len(payload) // 8} values, header declares {count}")
    arch_doc = header["arch"]
    arch = Architecture(tuple(arch_doc["filters"]), arch_doc["kernel"], arch_doc["pool"],
                        arch_doc["input_size"])
    values = np.frombuffer(payload, dtype="<f8")
    params = {}
    pos = 0
    for name, shape in header["params"]:
        size = int(np.prod(shape))
        params[name] = values[pos:pos + size].reshape(shape).astype(np.float64)
        pos += size
    model = CnnModel(arch, params, header["rng_seed"], header["epoch_count"])
    expected = CnnModel.initialize(arch).params
    if set(expected) != set(params) or any(expected[n].shape != params[n].shape for n in params):
        raise IncompatibleModel(f"{path}: parameter shapes do not match the architecture")
    return model

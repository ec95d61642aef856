"""Small convolutional detector trained with hand-written backpropagation.

Architecture (input ``[n_mels, n_frames]`` mel matrix, dB):

    per-mel-bin standardisation (fixed statistics from the training split)
    conv 3x3 (1 -> 8, same padding) -> ReLU -> maxpool 2x2
    conv 3x3 (8 -> 16, same padding) -> ReLU -> maxpool 2x2
    global average pool -> 16 features                 } feature extractor
    per-feature standardisation (refreshed per stage)   }
    dense 16 -> 128 -> ReLU -> dropout                  } head
    dense 128 -> 1 -> sigmoid                           } head (final layer)

The same network serves as baseline detector, ADM and fine-tuned detector.
The two standardisations are fixed buffers rather than trainable tensors: the
input one is computed once from the main training split, the feature one is
recomputed from the current extractor at the start of every training stage,
which plays the part of batch-normalisation statistics in a larger model.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .dataset import TaskView
from .errors import CheckpointError, DimensionError, InvalidInputError

log = logging.getLogger(__name__)

BCE_EPS = 1e-7

EXTRACTOR = ("conv1.w", "conv1.b", "conv2.w", "conv2.b")
HEAD = ("dense1.w", "dense1.b", "dense2.w", "dense2.b")
LAST = ("dense2.w", "dense2.b")
TRAINABLE = EXTRACTOR + HEAD
# L2 applies to weights only, not biases.
DECAYED = ("conv1.w", "conv2.w", "dense1.w", "dense2.w")
NORM = ("norm.mean", "norm.std")
FEATURE_NORM = ("feat.mean", "feat.std")
BUFFERS = NORM + FEATURE_NORM


class Freeze(str, Enum):
    NONE = "none"
    EXTRACTOR = "extractor"
    ALL_BUT_LAST = "all_but_last"

    def trainable(self) -> tuple[str, ...]:
        return {Freeze.NONE: TRAINABLE, Freeze.EXTRACTOR: HEAD, Freeze.ALL_BUT_LAST: LAST}[self]


@dataclass(frozen=True)
class ModelConfig:
    n_mels: int = 128
    n_frames: int = 94
    channels: tuple[int, int] = (8, 16)
    hidden: int = 128


@dataclass
class TrainConfig:
    epochs: int = 50
    lr0: float = 1e-3
    decay_factor: float = 0.5
    decay_every: int = 10
    l2: float = 1e-4
    dropout_p: float = 0.5
    batch: int = 16
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch <= 0 or self.decay_every <= 0:
            raise InvalidInputError("epochs, batch and decay_every must be positive")
        if self.lr0 <= 0 or self.l2 < 0 or not 0 < self.decay_factor <= 1:
            raise InvalidInputError("invalid learning-rate or L2 settings")
        if not 0 <= self.dropout_p < 1:
            raise InvalidInputError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if not 0 <= self.momentum < 1:
            raise InvalidInputError(f"momentum must be in [0, 1), got {self.momentum}")

    def lr_at(self, epoch: int) -> float:
        return self.lr0 * self.decay_factor ** (epoch // self.decay_every)


@dataclass
class DetectorModel:
    config: ModelConfig
    params: dict[str, np.ndarray]

    @classmethod
    def init(cls, config: ModelConfig = ModelConfig(), seed: int = 0, dtype=np.float32) -> "DetectorModel":
        """He-normal weights, zero biases, identity input normalisation."""
        rng = np.random.default_rng(seed)
        c1, c2 = config.channels
        h = config.hidden

        def he(shape, fan_in):
            return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)

        params = {
            "conv1.w": he((c1, 1, 3, 3), 9),
            "conv1.b": np.zeros(c1, dtype),
            "conv2.w": he((c2, c1, 3, 3), 9 * c1),
            "conv2.b": np.zeros(c2, dtype),
            "dense1.w": he((c2, h), c2),
            "dense1.b": np.zeros(h, dtype),
            "dense2.w": (rng.standard_normal((h, 1)) * np.sqrt(1.0 / h)).astype(dtype),
            "dense2.b": np.zeros(1, dtype),
            "norm.mean": np.zeros(config.n_mels, dtype),
            "norm.std": np.ones(config.n_mels, dtype),
            "feat.mean": np.zeros(c2, dtype),
            "feat.std": np.ones(c2, dtype),
        }
        return cls(config, params)

    def copy(self) -> "DetectorModel":
        return DetectorModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "DetectorModel":
        return DetectorModel(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    @property
    def dtype(self):
        return self.params["conv1.w"].dtype

    def n_parameters(self) -> int:
        return sum(self.params[k].size for k in TRAINABLE)

    def set_normalization(self, features: np.ndarray) -> None:
        """Per-mel-bin mean/std over all clips and frames of ``features`` ([n, mels, frames])."""
        f = np.asarray(features, dtype=np.float64)
        mean = f.mean(axis=(0, 2))
        std = f.std(axis=(0, 2))
        std = np.where(std > 1e-6, std, 1.0)
        self.params["norm.mean"] = mean.astype(self.dtype)
        self.params["norm.std"] = std.astype(self.dtype)

    def set_feature_normalization(self, pooled: np.ndarray) -> None:
        """Per-feature mean/std of extractor output ``pooled`` ([n, channels[1]])."""
        g = np.asarray(pooled, dtype=np.float64)
        std = g.std(axis=0)
        self.params["feat.mean"] = g.mean(axis=0).astype(self.dtype)
        self.params["feat.std"] = np.where(std > 1e-6, std, 1.0).astype(self.dtype)


# ----------------------------------------------------------------- layer maths


# Activations are channels-last: [B, H, W, C]. Weights keep the [out, in, 3, 3] layout.


def _im2col(xp, h, w):
    # [B, H+2, W+2, C] -> [B*H*W, 9*C], column order (row tap, column tap, channel)
    cols = np.concatenate([xp[:, i:i + h, j:j + w, :] for i in range(3) for j in range(3)], axis=-1)
    return cols.reshape(-1, cols.shape[-1])


def _conv_forward(x, weight, bias):
    """3x3 same-padded convolution; returns output and the im2col matrix for backward."""
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = _im2col(xp, h, w)
    out = cols @ weight.transpose(2, 3, 1, 0).reshape(9 * c, -1) + bias
    return out.reshape(b, h, w, -1), cols


def _conv_backward(dout, cols, weight, need_input_grad: bool):
    b, h, w, o = dout.shape
    c = weight.shape[1]
    d2 = dout.reshape(-1, o)
    dw = (cols.T @ d2).reshape(3, 3, c, o).transpose(3, 2, 0, 1)
    db = d2.sum(axis=0)
    if not need_input_grad:
        return dw, db, None
    dcols = (d2 @ weight.transpose(2, 3, 1, 0).reshape(9 * c, o).T).reshape(b, h, w, 9 * c)
    dxp = np.zeros((b, h + 2, w + 2, c), dtype=dout.dtype)
    for k in range(9):
        i, j = divmod(k, 3)
        dxp[:, i:i + h, j:j + w, :] += dcols[..., k * c:(k + 1) * c]
    return dw, db, dxp[:, 1:-1, 1:-1, :]


_QUADRANTS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _pool_forward(x):
    """2x2 max-pool (odd trailing row/column dropped); returns output and first-max masks."""
    ho, wo = x.shape[1] // 2, x.shape[2] // 2
    quads = [x[:, di: 2 * ho: 2, dj: 2 * wo: 2, :] for di, dj in _QUADRANTS]
    out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
    # route the gradient to the first maximum only, as argmax would
    taken = np.zeros(out.shape, dtype=bool)
    masks = []
    for q in quads:
        m = (q == out) & ~taken
        taken |= m
        masks.append(m)
    return out, masks


def _pool_backward(dout, masks, x_shape):
    ho, wo = x_shape[1] // 2, x_shape[2] // 2
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for (di, dj), m in zip(_QUADRANTS, masks):
        dx[:, di: 2 * ho: 2, dj: 2 * wo: 2, :] = dout * m
    return dx


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # keep the probability strictly inside (0, 1) even where exp saturates
    tiny = np.finfo(z.dtype).tiny
    return np.clip(out, tiny, 1.0 - np.finfo(z.dtype).epsneg)


def _check_input(model: DetectorModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=model.dtype)
    if x.ndim == 2:
        x = x[None]
    cfg = model.config
    if x.ndim != 3 or x.shape[1:] != (cfg.n_mels, cfg.n_frames):
        raise DimensionError(f"expected input [.., {cfg.n_mels}, {cfg.n_frames}], got {x.shape}")
    return x


def extract(model: DetectorModel, x: np.ndarray, cache: dict | None = None) -> np.ndarray:
    """Feature extractor output, ``[B, channels[1]]``."""
    p = model.params
    x = _check_input(model, x)
    xn = ((x - p["norm.mean"][:, None]) / p["norm.std"][:, None])[..., None]
    a1, cols1 = _conv_forward(xn, p["conv1.w"], p["conv1.b"])
    m1, mask1 = _pool_forward(np.maximum(a1, 0))
    a2, cols2 = _conv_forward(m1, p["conv2.w"], p["conv2.b"])
    m2, mask2 = _pool_forward(np.maximum(a2, 0))
    g = m2.mean(axis=(1, 2))
    if cache is not None:
        cache.update(cols1=cols1, a1=a1, mask1=mask1, cols2=cols2, a2=a2, mask2=mask2, m2_shape=m2.shape)
    return g


def _standardize_features(model, g):
    p = model.params
    return (g - p["feat.mean"]) / p["feat.std"]


def _head(model, g, train_mode, rng, dropout_p, cache=None):
    p = model.params
    g = _standardize_features(model, g)
    z1 = g @ p["dense1.w"] + p["dense1.b"]
    h = np.maximum(z1, 0)
    if train_mode and dropout_p > 0:
        if rng is None:
            raise InvalidInputError("train_mode forward needs an rng for dropout")
        mask = (rng.random(h.shape) >= dropout_p).astype(h.dtype) / (1.0 - dropout_p)
    else:
        mask = None
    hd = h * mask if mask is not None else h
    z2 = hd @ p["dense2.w"] + p["dense2.b"]
    prob = _sigmoid(z2[:, 0])
    if cache is not None:
        cache.update(g=g, z1=z1, h=h, mask=mask, hd=hd, prob=prob)
    return prob


def forward(model: DetectorModel, mel, train_mode: bool = False, rng=None,
            dropout_p: float = 0.5) -> np.ndarray:
    """Probability of the positive class for one matrix or a batch ``[B, mels, frames]``."""
    g = extract(model, mel)
    return _head(model, g, train_mode, rng, dropout_p)


def embed(model: DetectorModel, mel) -> np.ndarray:
    """Dense-128 activations in eval mode; one row per input."""
    g = _standardize_features(model, extract(model, mel))
    p = model.params
    return np.maximum(g @ p["dense1.w"] + p["dense1.b"], 0)


def bce_loss(p, y) -> np.ndarray:
    """Per-sample binary cross-entropy with ``p`` clamped to ``[1e-7, 1 - 1e-7]``."""
    p = np.clip(np.asarray(p, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def l2_penalty(model: DetectorModel, l2: float, names=DECAYED) -> float:
    return 0.5 * l2 * sum(float(np.sum(model.params[k].astype(np.float64) ** 2)) for k in names)


def batch_loss(model: DetectorModel, x, y, l2: float = 0.0, train_mode: bool = False,
               rng=None, dropout_p: float = 0.5, decayed=DECAYED) -> float:
    """Mean BCE over the batch plus ``0.5 * l2 * sum(w^2)`` over ``decayed`` weights."""
    prob = forward(model, x, train_mode, rng, dropout_p)
    return float(bce_loss(prob, y).mean()) + l2_penalty(model, l2, decayed)


def backward(model: DetectorModel, x, y, l2: float = 0.0, frozen=(), train_mode: bool = False,
             rng=None, dropout_p: float = 0.5, features=None) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact gradients of :func:`batch_loss` for every trainable tensor.

    Frozen tensors receive zero gradients (and no weight decay). ``features``
    may carry precomputed extractor output when the extractor is frozen.
    """
    p = model.params
    frozen = set(frozen)
    trains_extractor = not frozen.issuperset(EXTRACTOR)
    cache: dict = {}
    if features is None or trains_extractor:
        g = extract(model, x, cache)
    else:
        g = np.asarray(features, dtype=model.dtype)
    prob = _head(model, g, train_mode, rng, dropout_p, cache)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    decayed = [k for k in DECAYED if k not in frozen]
    loss = float(bce_loss(prob, y).mean()) + l2_penalty(model, l2, decayed)

    pd = prob.astype(np.float64)
    clamped = (pd < BCE_EPS) | (pd > 1.0 - BCE_EPS)
    dz2 = (np.where(clamped, 0.0, pd - y) / n).astype(model.dtype)[:, None]

    grads = {k: np.zeros_like(p[k]) for k in TRAINABLE}
    grads["dense2.w"] = cache["hd"].T @ dz2
    grads["dense2.b"] = dz2.sum(axis=0)
    if not frozen.issuperset(("dense1.w", "dense1.b")) or trains_extractor:
        dhd = dz2 @ p["dense2.w"].T
        dh = dhd * cache["mask"] if cache["mask"] is not None else dhd
        dz1 = dh * (cache["z1"] > 0)
        grads["dense1.w"] = cache["g"].T @ dz1
        grads["dense1.b"] = dz1.sum(axis=0)
        if trains_extractor:
            dg = (dz1 @ p["dense1.w"].T) / p["feat.std"]
            b, ho, wo, c2 = cache["m2_shape"]
            dm2 = np.broadcast_to((dg / (ho * wo))[:, None, None, :], cache["m2_shape"])
            dr2 = _pool_backward(dm2, cache["mask2"], cache["a2"].shape)
            da2 = dr2 * (cache["a2"] > 0)
            grads["conv2.w"], grads["conv2.b"], dm1 = _conv_backward(da2, cache["cols2"], p["conv2.w"], True)
            dr1 = _pool_backward(dm1, cache["mask1"], cache["a1"].shape)
            da1 = dr1 * (cache["a1"] > 0)
            grads["conv1.w"], grads["conv1.b"], _ = _conv_backward(da1, cache["cols1"], p["conv1.w"], False)
    for k in decayed:
        grads[k] = grads[k] + l2 * p[k]
    for k in frozen:
        grads[k] = np.zeros_like(p[k])
    return loss, grads


# ------------------------------------------------------------------- training


@dataclass
class History:
    epochs: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "lr"])
            for e, l, r in zip(self.epochs, self.loss, self.lr):
                w.writerow([e, repr(l), repr(r)])


def train_stage(model: DetectorModel, view: TaskView, config: TrainConfig,
                freeze: Freeze | str = Freeze.NONE, seed_offset: int = 0,
                callback=None) -> tuple[DetectorModel, History]:
    """SGD with momentum and step-decayed learning rate; returns a trained copy.

    The head-input feature statistics are recomputed from ``view`` before the
    first step; trainable tensors start exactly as in ``model``.
    ``callback(epoch, model)`` runs once before training (epoch -1) and
    after every epoch.
    """
    freeze = Freeze(freeze)
    if len(view) == 0:
        raise InvalidInputError("cannot train on an empty view")
    model = model.copy()
    trainable = freeze.trainable()
    frozen = tuple(k for k in TRAINABLE if k not in trainable)
    rng = np.random.default_rng([config.seed, seed_offset])
    x_all = view.features.astype(model.dtype, copy=False)
    y_all = view.labels
    pooled = np.concatenate([extract(model, x_all[i:i + 64]) for i in range(0, len(view), 64)])
    model.set_feature_normalization(pooled)
    if freeze == Freeze.NONE:
        pooled = None
    # otherwise the extractor never changes during this stage and its output is reused
    velocity = {k: np.zeros_like(model.params[k]) for k in trainable}
    history = History()
    n = len(view)
    if callback is not None:
        callback(-1, model)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch):
            idx = order[lo: lo + config.batch]
            loss, grads = backward(model, x_all[idx], y_all[idx], config.l2, frozen, True, rng,
                                   config.dropout_p, None if pooled is None else pooled[idx])
            total += loss * len(idx)
            for k in trainable:
                v = velocity[k]
                v *= config.momentum
                v += grads[k]
                model.params[k] -= (lr * v).astype(model.dtype)
        history.epochs.append(epoch)
        history.loss.append(total / n)
        history.lr.append(lr)
        log.debug("epoch %d lr %.3g loss %.5f", epoch, lr, total / n)
        if callback is not None:
            callback(epoch, model)
    return model, history


def predict(model: DetectorModel, features, batch: int = 64) -> np.ndarray:
    x = np.asarray(features)
    return np.concatenate([forward(model, x[i:i + batch]) for i in range(0, len(x), batch)])


def embed_batch(model: DetectorModel, features, batch: int = 64) -> np.ndarray:
    x = np.asarray(features)
    return np.concatenate([embed(model, x[i:i + batch]) for i in range(0, len(x), batch)])


STAGES = ("baseline", "adm", "final")
# seed offsets keep the three stages' shuffling and dropout streams independent
_STAGE_OFFSET = {"baseline": 1, "adm": 2, "final": 3}


@dataclass
class ProtocolResult:
    baseline: DetectorModel
    adm: DetectorModel
    final: DetectorModel
    histories: dict[str, History]


def _stage_config(config: TrainConfig, epochs: dict | None, stage: str) -> TrainConfig:
    if not epochs or stage not in epochs:
        return config
    return replace(config, epochs=int(epochs[stage]))


def train_baseline(main_view: TaskView, config: TrainConfig, model_config: ModelConfig | None = None,
                   epochs: dict | None = None, callback=None) -> tuple[DetectorModel, History]:
    """Stage 1: fresh model, input statistics from ``main_view``, everything trainable."""
    if model_config is None:
        _, mels, frames = main_view.features.shape
        model_config = ModelConfig(n_mels=mels, n_frames=frames)
    init = DetectorModel.init(model_config, seed=config.seed)
    init.set_normalization(main_view.features)
    return train_stage(init, main_view, _stage_config(config, epochs, "baseline"), Freeze.NONE,
                       _STAGE_OFFSET["baseline"], callback)


def train_adm(baseline: DetectorModel, adm_view: TaskView, config: TrainConfig,
              epochs: dict | None = None, callback=None) -> tuple[DetectorModel, History]:
    """Stage 2: fake vs artifact-fake on top of the frozen baseline extractor."""
    return train_stage(baseline, adm_view, _stage_config(config, epochs, "adm"), Freeze.EXTRACTOR,
                       _STAGE_OFFSET["adm"], callback)


def train_final(adm: DetectorModel, main_view: TaskView, config: TrainConfig,
                freeze: Freeze | str = Freeze.NONE, epochs: dict | None = None,
                callback=None) -> tuple[DetectorModel, History]:
    """Stage 3: back to real vs fake, starting from the ADM weights."""
    return train_stage(adm, main_view, _stage_config(config, epochs, "final"), freeze,
                       _STAGE_OFFSET["final"], callback)


def run_protocol(main_view: TaskView, adm_view: TaskView, config: TrainConfig,
                 model_config: ModelConfig | None = None,
                 final_freeze: Freeze | str = Freeze.NONE,
                 epochs: dict | None = None) -> ProtocolResult:
    """Baseline on real/fake, ADM on fake/artifact with the extractor frozen, then fine-tune.

    ``epochs`` optionally overrides ``config.epochs`` per stage, e.g.
    ``{"baseline": 10, "final": 10}``.
    """
    baseline, h1 = train_baseline(main_view, config, model_config, epochs)
    adm, h2 = train_adm(baseline, adm_view, config, epochs)
    final, h3 = train_final(adm, main_view, config, final_freeze, epochs)
    return ProtocolResult(baseline, adm, final, {"baseline": h1, "adm": h2, "final": h3})


# ----------------------------------------------------------------- checkpoints

SPFW_MAGIC = b"SPFW"
SPFW_VERSION = 1


def save_checkpoint(model: DetectorModel, path) -> None:
    """Binary tensor table: magic, version, count, then (name, shape, float32 LE data) entries."""
    cfg = model.config
    tensors = dict(model.params)
    tensors["input.shape"] = np.array([cfg.n_mels, cfg.n_frames], dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", SPFW_MAGIC, SPFW_VERSION, len(tensors)))
        for name in sorted(tensors):
            a = np.ascontiguousarray(tensors[name], dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes())


def load_checkpoint(path) -> DetectorModel:
    data = Path(path).read_bytes()
    try:
        magic, version, count = struct.unpack_from("<4sII", data, 0)
        if magic != SPFW_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        if version != SPFW_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        pos = 12
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2: pos + 2 + nlen].decode("utf-8")
            pos += 2 + nlen
            (ndim,) = struct.unpack_from("<I", data, pos)
            shape = struct.unpack_from(f"<{ndim}I", data, pos + 4)
            pos += 4 + 4 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if pos + size > len(data):
                raise CheckpointError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(data, dtype="<f4", count=size // 4, offset=pos).reshape(shape).copy()
            pos += size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from None
    missing = set(TRAINABLE + BUFFERS + ("input.shape",)) - set(tensors)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    mels, frames = (int(v) for v in tensors.pop("input.shape"))
    cfg = ModelConfig(n_mels=mels, n_frames=frames,
                      channels=(tensors["conv1.w"].shape[0], tensors["conv2.w"].shape[0]),
                      hidden=tensors["dense1.w"].shape[1])
    params = {k: tensors[k].astype(np.float32) for k in TRAINABLE + BUFFERS}
    return DetectorModel(cfg, params)


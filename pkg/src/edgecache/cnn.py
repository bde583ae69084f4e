"""Small convolutional classifiers, one per flow row, written in numpy.

Each model maps a feature image (height 5 by default) to a probability
row over the ECs for one flow: conv (stride 1, same padding, no bias),
batch-norm, ReLU, flatten, fully-connected, softmax.  The training loss is
the summed cross-entropy plus ``lambda/2 * |W|^2``, where ``W`` holds the
conv filters, batch-norm scales and fully-connected weights and bias (the
batch-norm shift is not regularized).
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
BN_EPS = 1e-5
PROB_FLOOR = 1e-12
MAX_CONV_LAYERS = 1

# Parameters that enter the L2 penalty.
REGULARIZED = ("conv_w", "bn_gamma", "fc_w", "fc_b")
PARAM_NAMES = ("conv_w", "bn_gamma", "bn_beta", "fc_w", "fc_b")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    conv_layers: int = 1
    filters: int = 16
    kernel: tuple = (3, 3)
    l2_lambda: float = 1e-4
    momentum: float = 0.9
    bn_momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(int(v) for v in self.kernel))
        for name in ("epochs", "batch_size", "learning_rate", "conv_layers", "filters"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if len(self.kernel) != 2 or min(self.kernel) <= 0 or self.kernel[0] % 2 == 0 \
                or self.kernel[1] % 2 == 0:
            raise ValueError("kernel must be two odd positive sizes")
        if self.l2_lambda < 0 or not 0 <= self.momentum < 1 or not 0 <= self.bn_momentum < 1:
            raise ValueError("l2_lambda must be >= 0 and momenta in [0, 1)")
        if self.conv_layers > MAX_CONV_LAYERS:
            raise NotImplementedError(f"only {MAX_CONV_LAYERS} conv layer is implemented")

    def to_dict(self):
        d = asdict(self)
        d["kernel"] = list(self.kernel)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class LabeledDataset:
    """Feature images with the optimal placement of every flow as labels.

    ``labels`` has shape ``(N, K, E)`` and every ``labels[i, k]`` is one-hot.
    """

    images: list
    labels: np.ndarray
    instances: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.ndim != 3 or len(self.images) != self.labels.shape[0]:
            raise ValueError("labels must be (N, K, E) with one entry per image")
        if np.any(self.labels.sum(axis=2) != 1):
            raise ValueError("every label row must be one-hot")
        if any(im.shape[0] != self.labels.shape[1] for im in self.images):
            raise ValueError("image heights must match the label rows")

    def __len__(self):
        return len(self.images)

    @property
    def pixels(self):
        return np.stack([im.pixels for im in self.images])

    def flow_labels(self, k):
        return self.labels[:, k, :]

    def subset(self, idx):
        idx = list(idx)
        inst = [self.instances[i] for i in idx] if self.instances else []
        return LabeledDataset([self.images[i] for i in idx], self.labels[idx], inst)


@dataclass
class ProbMatrix:
    """Stacked softmax rows; ``ignorable[k]`` marks padding rows."""

    o: np.ndarray
    ignorable: tuple = ()

    def __post_init__(self):
        self.o = np.asarray(self.o, dtype=float)
        self.ignorable = tuple(bool(v) for v in self.ignorable) or (False,) * self.o.shape[0]

    @property
    def real(self):
        return self.o[~np.array(self.ignorable, dtype=bool)]


def _glorot(rng, shape, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


class CnnModel:
    """One conv layer classifier for ``height x width`` images."""

    def __init__(self, height, width, num_classes, config=None, seed=None):
        self.config = config or TrainConfig()
        self.height, self.width, self.num_classes = int(height), int(width), int(num_classes)
        F = self.config.filters
        kh, kw = self.config.kernel
        rng = np.random.default_rng(self.config.seed if seed is None else seed)
        n_flat = F * self.height * self.width
        self.params = {
            "conv_w": _glorot(rng, (F, 1, kh, kw), kh * kw, F * kh * kw),
            "bn_gamma": np.ones(F),
            "bn_beta": np.zeros(F),
            "fc_w": _glorot(rng, (n_flat, self.num_classes), n_flat, self.num_classes),
            "fc_b": np.zeros(self.num_classes),
        }
        self.running_mean = np.zeros(F)
        self.running_var = np.ones(F)
        self.input_mean = np.zeros((self.height, self.width))

    # -- forward / backward ---------------------------------------------------

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != (self.height, self.width):
            raise ValueError(f"model expects {self.height}x{self.width} images, "
                             f"got {x.shape[1]}x{x.shape[2]}")
        return x

    def forward(self, images, train=False):
        """Class probabilities ``(n, E)`` and the activations for backprop.

        ``train=True`` normalizes with batch statistics (returned in the
        cache); otherwise the running statistics are used.  Nothing on the
        model is modified.
        """
        x = self._check(images) - self.input_mean
        n = x.shape[0]
        F = self.config.filters
        kh, kw = self.config.kernel
        xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
        cols = sliding_window_view(xp, (kh, kw), axis=(1, 2)).reshape(n, -1, kh * kw)
        conv = cols @ self.params["conv_w"].reshape(F, kh * kw).T  # (n, HW, F)
        if train:
            mu = conv.mean(axis=(0, 1))
            var = conv.var(axis=(0, 1))
        else:
            mu, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (conv - mu) * inv_std
        bn = self.params["bn_gamma"] * xhat + self.params["bn_beta"]
        act = np.maximum(bn, 0.0)
        flat = act.transpose(0, 2, 1).reshape(n, -1)  # (F, H, W) order
        logits = flat @ self.params["fc_w"] + self.params["fc_b"]
        logits -= logits.max(axis=1, keepdims=True)
        expo = np.exp(logits)
        probs = expo / expo.sum(axis=1, keepdims=True)
        cache = dict(cols=cols, xhat=xhat, inv_std=inv_std, bn=bn, flat=flat, train=train,
                     mu=mu, var=var)
        return probs, cache

    def predict(self, images):
        return self.forward(images)[0]

    def penalty(self):
        return 0.5 * sum(float(np.sum(self.params[n] ** 2)) for n in REGULARIZED)

    def loss(self, images, labels, l2_lambda=None, train=True):
        """Summed cross-entropy over the batch plus the L2 term."""
        lam = self.config.l2_lambda if l2_lambda is None else l2_lambda
        probs, _ = self.forward(images, train=train)
        return cross_entropy(probs, labels) + lam * self.penalty()

    def gradients(self, images, labels, l2_lambda=None, train=True, return_cache=False):
        """Loss value and its gradient for every entry of :attr:`params`."""
        lam = self.config.l2_lambda if l2_lambda is None else l2_lambda
        labels = np.asarray(labels, dtype=float)
        probs, c = self.forward(images, train=train)
        value = cross_entropy(probs, labels) + lam * self.penalty()
        F = self.config.filters
        kh, kw = self.config.kernel
        n = probs.shape[0]
        # d/dlogits of -sum y ln softmax, for label rows summing to one
        dlogits = probs * labels.sum(axis=1, keepdims=True) - labels
        g = {"fc_w": c["flat"].T @ dlogits, "fc_b": dlogits.sum(axis=0)}
        dflat = dlogits @ self.params["fc_w"].T
        dact = dflat.reshape(n, F, -1).transpose(0, 2, 1)
        dbn = dact * (c["bn"] > 0)
        g["bn_gamma"] = np.sum(dbn * c["xhat"], axis=(0, 1))
        g["bn_beta"] = np.sum(dbn, axis=(0, 1))
        dxhat = dbn * self.params["bn_gamma"]
        if c["train"]:
            m = dxhat.shape[0] * dxhat.shape[1]
            dconv = (c["inv_std"] / m) * (m * dxhat - dxhat.sum(axis=(0, 1))
                                          - c["xhat"] * np.sum(dxhat * c["xhat"], axis=(0, 1)))
        else:
            dconv = dxhat * c["inv_std"]
        g["conv_w"] = np.einsum("npk,npf->fk", c["cols"], dconv).reshape(F, 1, kh, kw)
        for name in REGULARIZED:
            g[name] = g[name] + lam * self.params[name]
        return (value, g, c) if return_cache else (value, g)

    # -- serialization ----------------------------------------------------------

    def to_dict(self):
        def arr(a):
            return {"shape": list(a.shape), "data": np.ravel(a).tolist()}

        return {
            "format_version": FORMAT_VERSION,
            "height": self.height,
            "width": self.width,
            "num_classes": self.num_classes,
            "hyperparameters": self.config.to_dict(),
            "input_mean": arr(self.input_mean),
            "layers": [
                {"type": "conv", "weight": arr(self.params["conv_w"])},
                {"type": "batchnorm", "scale": arr(self.params["bn_gamma"]),
                 "shift": arr(self.params["bn_beta"]),
                 "running_mean": arr(self.running_mean),
                 "running_var": arr(self.running_var)},
                {"type": "fc", "weight": arr(self.params["fc_w"]),
                 "bias": arr(self.params["fc_b"])},
            ],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {d.get('format_version')!r}")

        def arr(a):
            return np.array(a["data"], dtype=float).reshape(a["shape"])

        model = cls(d["height"], d["width"], d["num_classes"],
                    TrainConfig.from_dict(d["hyperparameters"]))
        layers = {layer["type"]: layer for layer in d["layers"]}
        model.params = {
            "conv_w": arr(layers["conv"]["weight"]),
            "bn_gamma": arr(layers["batchnorm"]["scale"]),
            "bn_beta": arr(layers["batchnorm"]["shift"]),
            "fc_w": arr(layers["fc"]["weight"]),
            "fc_b": arr(layers["fc"]["bias"]),
        }
        model.running_mean = arr(layers["batchnorm"]["running_mean"])
        model.running_var = arr(layers["batchnorm"]["running_var"])
        model.input_mean = arr(d["input_mean"])
        if np.any(model.running_var <= 0):
            raise ValueError("running variances must be positive")
        return model

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def cross_entropy(probs, labels):
    return float(-np.sum(np.asarray(labels) * np.log(np.maximum(probs, PROB_FLOOR))))


def forward(model, image):
    """Probability row(s) for one image or a batch, inference mode."""
    probs, cache = model.forward(getattr(image, "pixels", image))
    return probs, cache


def loss(model, batch, flow_index, l2_lambda=None):
    """Training-mode loss of ``model`` on flow ``flow_index`` of ``batch``."""
    return model.loss(batch.pixels, batch.flow_labels(flow_index), l2_lambda)


@dataclass
class TrainResult:
    model: CnnModel
    train_loss: list
    val_loss: list
    flow_index: int


def train(dataset, config, flow_index, validation=None):
    """Fit the classifier of one flow row with momentum gradient descent.

    The recorded training loss of an epoch is the mean per-sample loss of
    its mini-batches (train mode); validation loss is the mean per-sample
    cross-entropy in inference mode.
    """
    if len(dataset) == 0:
        raise ValueError("empty training set")
    x = dataset.pixels
    y = dataset.flow_labels(flow_index).astype(float)
    n, H, W = x.shape
    ss = np.random.SeedSequence([config.seed, flow_index])
    init_seed, shuffle_seed = ss.spawn(2)
    model = CnnModel(H, W, y.shape[1], config, seed=np.random.default_rng(init_seed))
    model.input_mean = x.mean(axis=0)
    rng = np.random.default_rng(shuffle_seed)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    train_curve, val_curve = [], []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            value, grads, cache = model.gradients(x[idx], y[idx], return_cache=True)
            total += value
            m = config.bn_momentum
            model.running_mean = m * model.running_mean + (1 - m) * cache["mu"]
            model.running_var = m * model.running_var + (1 - m) * cache["var"]
            for name, grad in grads.items():
                velocity[name] = config.momentum * velocity[name] - config.learning_rate * grad
                model.params[name] = model.params[name] + velocity[name]
        train_curve.append(total / n)
        if validation is not None and len(validation):
            probs = model.predict(validation.pixels)
            val_curve.append(cross_entropy(probs, validation.flow_labels(flow_index)) /
                             len(validation))
    return TrainResult(model, train_curve, val_curve, flow_index)


def _train_job(args):
    return train(*args)


def train_ensemble(dataset, config, validation=None, jobs=1):
    """Train one model per flow row; rows are independent and may run in parallel."""
    K = dataset.labels.shape[1]
    work = [(dataset, config, k, validation) for k in range(K)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_train_job, work))
    return [_train_job(w) for w in work]


def predict_matrix(models, image):
    """Stack the probability rows of ``models[k]`` applied to ``image``."""
    pixels = getattr(image, "pixels", np.asarray(image))
    if len(models) != pixels.shape[0]:
        raise ValueError(f"need {pixels.shape[0]} models for a {pixels.shape[0]}-row image, "
                         f"got {len(models)}")
    rows = [m.predict(pixels)[0] for m in models]
    return ProbMatrix(np.vstack(rows), getattr(image, "padded", ()))


def save_models(models, path):
    with open(path, "w") as fh:
        json.dump({"format_version": FORMAT_VERSION,
                   "models": [m.to_dict() for m in models]}, fh)


def load_models(path):
    with open(path) as fh:
        d = json.load(fh)
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format_version {d.get('format_version')!r}")
    return [CnnModel.from_dict(m) for m in d["models"]]

"""The target classifier and the perturbation generator.

Classifier: conv -> relu -> pool -> conv -> relu -> pool -> affine head.
Generator: three same-size conv layers; tanh output scaled by an
L-infinity bound, so the emitted pattern respects the bound by
construction. Both are trained with plain minibatch SGD on
softmax-cross-entropy; all randomness flows from explicit seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._binio import Reader, Writer
from .autodiff import Graph, sgd_step
from .data import Dataset, Image
from .errors import DivergenceError, FormatError, NumericError, ShapeError
from .tensor import as_tensor, one_hot

ARCH_CLASSIFIER = "conv2-head-v1"
ARCH_GENERATOR = "gen3-tanh-v1"
CKPT_MAGIC = b"ADVLCKP1"
CKPT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 0.1
    epochs: int = 12
    batch_size: int = 32
    seed: int = 0


class Classifier:
    """Small convolutional classifier over [C, H, W] images in [0, 1].

    `weights` is a name -> float64 array dict; prediction is the argmax
    of the logits with ties broken toward the lowest class index.
    """

    def __init__(self, weights: dict, class_count: int, input_shape,
                 channels=(6, 12), seed: int = 0):
        self.weights = dict(weights)
        self.class_count = int(class_count)
        self.input_shape = tuple(input_shape)
        self.channels = tuple(channels)
        self.seed = int(seed)
        self.metrics: dict = {}
        self._graphs: dict = {}

    # -- graph construction -------------------------------------------

    def _graph(self, kind: str, n: int) -> Graph:
        key = (kind, n)
        if key not in self._graphs:
            g = Graph()
            x = g.input("x", (n, *self.input_shape))
            logits = append_classifier_ops(g, x, self.input_shape,
                                           self.class_count, self.channels)
            if kind == "logits":
                g.set_output(logits)
            else:
                y = g.input("y", (n, self.class_count))
                g.set_output(g.softmax_cross_entropy(logits, y))
            self._graphs[key] = g
        return self._graphs[key]

    # -- evaluation ----------------------------------------------------

    def logits_batch(self, images: np.ndarray) -> np.ndarray:
        images = as_tensor(images)
        if images.shape[1:] != self.input_shape:
            raise ShapeError(f"images {images.shape[1:]} do not match model "
                             f"input {self.input_shape}")
        g = self._graph("logits", images.shape[0])
        return g.forward({**self.weights, "x": images})

    def predict(self, image) -> tuple[int, np.ndarray, np.ndarray]:
        """(label, logits, softmax probabilities) for one image."""
        pixels = image.pixels if isinstance(image, Image) else image
        logits = self.logits_batch(as_tensor(pixels)[None])[0]
        z = logits - logits.max()
        ez = np.exp(z)
        probs = ez / ez.sum()
        return int(np.argmax(logits)), logits, probs

    def predict_batch(self, images: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits_batch(images), axis=1)

    def loss_batch(self, images, labels) -> float:
        g = self._graph("loss", len(labels))
        return float(g.forward({**self.weights, "x": images,
                                "y": one_hot(labels, self.class_count)}))

    def input_gradient(self, image, label: int) -> np.ndarray:
        """Gradient of the cross-entropy loss w.r.t. the image pixels."""
        if not 0 <= label < self.class_count:
            raise ShapeError(f"label {label} outside [0, {self.class_count})")
        pixels = image.pixels if isinstance(image, Image) else image
        g = self._graph("loss", 1)
        g.forward({**self.weights, "x": as_tensor(pixels)[None],
                   "y": one_hot([label], self.class_count)})
        return g.backward(wrt="x")[0]

    def logit_vjp(self, image, seed_vec: np.ndarray):
        """(gradient of seed_vec . logits w.r.t. the pixels, logits).

        Used by the attacks that differentiate individual logits; one
        forward pass serves any number of seed vectors via vjp_again.
        """
        pixels = image.pixels if isinstance(image, Image) else image
        g = self._graph("logits", 1)
        logits = g.forward({**self.weights, "x": as_tensor(pixels)[None]})[0]
        grad = g.backward(wrt="x", seed=as_tensor(seed_vec)[None])[0]
        return grad, logits

    def vjp_again(self, seed_vec: np.ndarray) -> np.ndarray:
        """Another input gradient from the last logit_vjp forward pass."""
        g = self._graph("logits", 1)
        return g.backward(wrt="x", seed=as_tensor(seed_vec)[None])[0]

    def copy(self) -> "Classifier":
        clf = Classifier({k: v.copy() for k, v in self.weights.items()},
                         self.class_count, self.input_shape, self.channels,
                         self.seed)
        clf.metrics = dict(self.metrics)
        return clf


def append_classifier_ops(g: Graph, x, input_shape, class_count,
                          channels, prefix: str = "", kind: str = "param"):
    """Append the classifier ops to a graph; returns the logits node.

    `kind` selects whether the weights are graph params (trainable) or
    plain inputs (frozen, e.g. when attacking through the model).
    """
    c, h, w = input_shape
    f1, f2 = channels
    reg = g.param if kind == "param" else g.input
    w1 = reg(prefix + "conv1_w", (f1, c, 3, 3))
    b1 = reg(prefix + "conv1_b", (f1,))
    w2 = reg(prefix + "conv2_w", (f2, f1, 3, 3))
    b2 = reg(prefix + "conv2_b", (f2,))
    d = f2 * (h // 4) * (w // 4)
    wf = reg(prefix + "fc_w", (d, class_count))
    bf = reg(prefix + "fc_b", (class_count,))
    h1 = g.maxpool2(g.relu(g.conv2d(x, w1, b1, pad=1)))
    h2 = g.maxpool2(g.relu(g.conv2d(h1, w2, b2, pad=1)))
    return g.affine(h2, wf, bf)


def new_classifier(class_count, input_shape, channels=(6, 12),
                   seed: int = 0) -> Classifier:
    c, h, w = input_shape
    if h % 4 or w % 4:
        raise ShapeError("input sides must be divisible by 4 (two 2x2 pools)")
    f1, f2 = channels
    rng = np.random.default_rng([seed, 11])
    d = f2 * (h // 4) * (w // 4)
    weights = {
        "conv1_w": rng.normal(0, np.sqrt(2.0 / (c * 9)), (f1, c, 3, 3)),
        "conv1_b": np.zeros(f1),
        "conv2_w": rng.normal(0, np.sqrt(2.0 / (f1 * 9)), (f2, f1, 3, 3)),
        "conv2_b": np.zeros(f2),
        "fc_w": rng.normal(0, np.sqrt(1.0 / d), (d, class_count)),
        "fc_b": np.zeros(class_count),
    }
    return Classifier(weights, class_count, input_shape, channels, seed)


def _fit(clf: Classifier, dataset: Dataset, config: TrainConfig,
         shuffle_stream: int) -> list[float]:
    """Minibatch SGD over `dataset`; returns per-epoch mean losses."""
    images = dataset.images_array()
    onehot = one_hot(dataset.labels_array(), clf.class_count)
    n = len(dataset)
    rng = np.random.default_rng([config.seed, shuffle_stream])
    epoch_losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            sel = order[start:start + config.batch_size]
            g = clf._graph("loss", len(sel))
            try:
                loss = float(g.forward({**clf.weights, "x": images[sel],
                                        "y": onehot[sel]}))
            except NumericError as exc:
                raise DivergenceError(f"training diverged at epoch {epoch}: "
                                      f"{exc}") from exc
            if not np.isfinite(loss):
                raise DivergenceError(f"training diverged at epoch {epoch}")
            grads = g.backward()
            clf.weights = sgd_step(clf.weights, grads, config.lr)
            losses.append(loss)
        epoch_losses.append(float(np.mean(losses)))
    return epoch_losses


def train_classifier(dataset: Dataset, config: TrainConfig,
                     eval_dataset: Dataset | None = None,
                     channels=(6, 12)) -> Classifier:
    """Train a fresh classifier; deterministic given config.seed."""
    if config.epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {config.epochs}")
    clf = new_classifier(dataset.class_count, dataset.image_shape,
                         channels, seed=config.seed)
    losses = _fit(clf, dataset, config, shuffle_stream=23)
    clf.metrics = {
        "epoch_losses": losses,
        "train_accuracy": _accuracy(clf, dataset),
    }
    if eval_dataset is not None:
        clf.metrics["test_accuracy"] = _accuracy(clf, eval_dataset)
    return clf


def continue_training(clf: Classifier, dataset: Dataset,
                      config: TrainConfig) -> Classifier:
    """Warm-start training from the classifier's current parameters."""
    if config.epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {config.epochs}")
    out = clf.copy()
    losses = _fit(out, dataset, config, shuffle_stream=29)
    out.metrics = dict(clf.metrics)
    out.metrics["retrain_epoch_losses"] = losses
    return out


def _accuracy(clf, dataset):
    preds = clf.predict_batch(dataset.images_array())
    return float(np.mean(preds == dataset.labels_array()))


def extend_classes(clf: Classifier, extra: int,
                   dataset: Dataset | None = None,
                   seed: int = 0) -> Classifier:
    """Widen the affine head by `extra` new classes.

    New columns get small seeded noise; when `dataset` is given the new
    biases are lowered until no training image flips to a new class, so
    predictions at the moment of extension are unchanged.
    """
    if extra < 1:
        raise ValueError(f"extra must be >= 1, got {extra}")
    rng = np.random.default_rng([seed, 37])
    fc_w, fc_b = clf.weights["fc_w"], clf.weights["fc_b"]
    d = fc_w.shape[0]
    new_w = rng.normal(0, 1e-3, (d, extra))
    new_b = np.full(extra, -1.0)
    out = Classifier({**{k: v.copy() for k, v in clf.weights.items()},
                      "fc_w": np.concatenate([fc_w, new_w], axis=1),
                      "fc_b": np.concatenate([fc_b, new_b])},
                     clf.class_count + extra, clf.input_shape, clf.channels,
                     clf.seed)
    if dataset is not None:
        logits = out.logits_batch(dataset.images_array())
        old_max = logits[:, :clf.class_count].max(axis=1)
        new_max = logits[:, clf.class_count:].max(axis=1)
        slack = float((old_max - new_max).min())
        if slack <= 0:
            adj = out.weights["fc_b"].copy()
            adj[clf.class_count:] += slack - 1e-6
            out.weights["fc_b"] = adj
    return out


# ----------------------------------------------------------------------
# generator
# ----------------------------------------------------------------------

class Generator:
    """Maps a fixed noise tensor to an L-infinity-bounded perturbation."""

    def __init__(self, weights: dict, noise: np.ndarray, linf_bound: float,
                 image_shape, hidden: int = 8, seed: int = 0):
        if not linf_bound > 0:
            raise ValueError(f"linf_bound must be positive, got {linf_bound}")
        self.weights = dict(weights)
        self.noise = as_tensor(noise)
        self.linf_bound = float(linf_bound)
        self.image_shape = tuple(image_shape)
        self.hidden = int(hidden)
        self.seed = int(seed)
        self._graph_cache = None

    def _delta_graph(self):
        if self._graph_cache is None:
            g = Graph()
            z = g.constant(self.noise[None])
            delta = append_generator_ops(g, z, self.image_shape[0],
                                         self.hidden, self.linf_bound)
            g.set_output(delta)
            self._graph_cache = g
        return self._graph_cache

    def delta(self) -> np.ndarray:
        """Current perturbation pattern [C, H, W]."""
        g = self._delta_graph()
        return g.forward(self.weights)[0]


def append_generator_ops(g: Graph, z, out_channels, hidden, linf_bound,
                         prefix: str = "gen_", kind: str = "param"):
    """Append generator ops; returns the bounded perturbation node [1,C,H,W]."""
    reg = g.param if kind == "param" else g.input
    zc = z.shape[1]
    w1 = reg(prefix + "conv1_w", (hidden, zc, 3, 3))
    b1 = reg(prefix + "conv1_b", (hidden,))
    w2 = reg(prefix + "conv2_w", (hidden, hidden, 3, 3))
    b2 = reg(prefix + "conv2_b", (hidden,))
    w3 = reg(prefix + "conv3_w", (out_channels, hidden, 3, 3))
    b3 = reg(prefix + "conv3_b", (out_channels,))
    h1 = g.relu(g.conv2d(z, w1, b1, pad=1))
    h2 = g.relu(g.conv2d(h1, w2, b2, pad=1))
    return g.scale(g.tanh(g.conv2d(h2, w3, b3, pad=1)), linf_bound)


def new_generator(image_shape, linf_bound: float, seed: int = 0,
                  hidden: int = 8, noise_channels: int = 4) -> Generator:
    """Fresh generator with a seeded fixed uniform noise input.

    The final layer starts at zero, so the initial perturbation is
    exactly zero.
    """
    c, h, w = image_shape
    rng = np.random.default_rng([seed, 51])
    noise = rng.uniform(0.0, 1.0, (noise_channels, h, w))
    weights = {
        "gen_conv1_w": rng.normal(0, np.sqrt(2.0 / (noise_channels * 9)),
                                  (hidden, noise_channels, 3, 3)),
        "gen_conv1_b": np.zeros(hidden),
        "gen_conv2_w": rng.normal(0, np.sqrt(2.0 / (hidden * 9)),
                                  (hidden, hidden, 3, 3)),
        "gen_conv2_b": np.zeros(hidden),
        "gen_conv3_w": np.zeros((c, hidden, 3, 3)),
        "gen_conv3_b": np.zeros(c),
    }
    return Generator(weights, noise, linf_bound, image_shape, hidden, seed)


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------

def _save_weights(wr: Writer, weights: dict):
    wr.u32(len(weights))
    for name in sorted(weights):
        wr.text(name)
        wr.array(weights[name], np.float64)


def _load_weights(rd: Reader) -> dict:
    return {rd.text(): rd.array(np.float64) for _ in range(rd.u32())}


def save_classifier(clf: Classifier, path) -> None:
    with open(path, "wb") as fh:
        wr = Writer(fh, CKPT_MAGIC, CKPT_VERSION)
        wr.text(ARCH_CLASSIFIER)
        wr.u32(clf.class_count)
        for d in clf.input_shape:
            wr.u32(d)
        for ch in clf.channels:
            wr.u32(ch)
        wr.i64(clf.seed)
        _save_weights(wr, clf.weights)


def load_classifier(path) -> Classifier:
    with open(path, "rb") as fh:
        rd = Reader(fh, CKPT_MAGIC, CKPT_VERSION, str(path))
        arch = rd.text()
        if arch != ARCH_CLASSIFIER:
            raise FormatError(f"{path}: checkpoint holds {arch!r}, expected "
                              f"{ARCH_CLASSIFIER!r}")
        class_count = rd.u32()
        input_shape = tuple(rd.u32() for _ in range(3))
        channels = tuple(rd.u32() for _ in range(2))
        seed = rd.i64()
        weights = _load_weights(rd)
    return Classifier(weights, class_count, input_shape, channels, seed)


def save_generator(gen: Generator, path) -> None:
    with open(path, "wb") as fh:
        wr = Writer(fh, CKPT_MAGIC, CKPT_VERSION)
        wr.text(ARCH_GENERATOR)
        for d in gen.image_shape:
            wr.u32(d)
        wr.u32(gen.hidden)
        wr.i64(gen.seed)
        wr.f64(gen.linf_bound)
        wr.array(gen.noise, np.float64)
        _save_weights(wr, gen.weights)


def load_generator(path) -> Generator:
    with open(path, "rb") as fh:
        rd = Reader(fh, CKPT_MAGIC, CKPT_VERSION, str(path))
        arch = rd.text()
        if arch != ARCH_GENERATOR:
            raise FormatError(f"{path}: checkpoint holds {arch!r}, expected "
                              f"{ARCH_GENERATOR!r}")
        image_shape = tuple(rd.u32() for _ in range(3))
        hidden = rd.u32()
        seed = rd.i64()
        linf_bound = rd.f64()
        noise = rd.array(np.float64)
        weights = _load_weights(rd)
    return Generator(weights, noise, linf_bound, image_shape, hidden, seed)

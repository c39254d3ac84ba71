"""The four attacks behind one record type.

fgsm: one signed-gradient step of size epsilon.
deepfool: iterative projection onto the nearest linearized class
    boundary, overshoot to cross it.
cw_l2: targeted L2 minimization under a tanh change of variables with
    binary search on the objective trade-off constant.
train_universal / apply_universal: a small conv generator turns a fixed
    noise pattern into one bounded perturbation that fools many images.

Every attack clips its output into [0, 1], so the AdversarialExample
invariants hold by construction. Budget exhaustion is reported through
the success flag, never as an exception.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, sgd_step
from .data import Dataset, Image, LabeledExample
from .errors import DivergenceError, NumericError, ShapeError
from .models import (Classifier, Generator, append_classifier_ops,
                     append_generator_ops)
from .tensor import as_tensor, l2_distance, linf_distance, one_hot


@dataclass(eq=False)
class AdversarialExample:
    """Original/perturbed image pair plus everything needed to score it."""

    original: Image
    adversarial: Image
    true_label: int
    clean_prediction: int
    adv_prediction: int
    l2_distance: float
    linf_distance: float
    attack_name: str
    success: bool
    labeler_label: int | None = None


@dataclass(eq=False)
class UniversalPerturbation:
    """One fixed pattern added to any image of the right shape."""

    delta: np.ndarray
    linf_bound: float

    def __post_init__(self):
        self.delta = as_tensor(self.delta)
        if np.abs(self.delta).max(initial=0.0) > self.linf_bound + 1e-12:
            raise ShapeError("perturbation exceeds its L-infinity bound")


def _finish(classifier, example, adv_pixels, attack_name,
            clean_prediction) -> AdversarialExample:
    """Clip, re-predict and package an attack result."""
    adv = np.clip(adv_pixels, 0.0, 1.0)
    adv_pred = int(classifier.predict_batch(adv[None])[0])
    orig = example.image.pixels
    return AdversarialExample(
        original=example.image, adversarial=Image(adv),
        true_label=example.label, clean_prediction=int(clean_prediction),
        adv_prediction=adv_pred,
        l2_distance=l2_distance(adv, orig),
        linf_distance=linf_distance(adv, orig),
        attack_name=attack_name,
        success=adv_pred != example.label)


# ----------------------------------------------------------------------
# FGSM
# ----------------------------------------------------------------------

def fgsm(classifier: Classifier, example: LabeledExample,
         epsilon: float) -> AdversarialExample:
    """x + epsilon * sign(grad_x loss), clipped into [0, 1]."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    clean_pred = int(classifier.predict_batch(example.image.pixels[None])[0])
    grad = classifier.input_gradient(example.image, example.label)
    adv = example.image.pixels + epsilon * np.sign(grad)
    return _finish(classifier, example, adv, "fgsm", clean_pred)


# ----------------------------------------------------------------------
# DeepFool
# ----------------------------------------------------------------------

def deepfool(classifier: Classifier, example: LabeledExample,
             max_iters: int = 50, overshoot: float = 0.02
             ) -> AdversarialExample:
    """Minimal-perturbation attack by iterative linearization.

    At each step the closest class boundary of the linearized model is
    found (minimizing |f_k - f_pred| / ||grad f_k - grad f_pred||) and
    the accumulated perturbation steps onto it; the overshoot factor
    pushes the final point across. Stops when the prediction changes.
    """
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    x0 = example.image.pixels
    k = classifier.class_count
    clean_pred = int(classifier.predict_batch(x0[None])[0])
    if clean_pred != example.label:
        return _finish(classifier, example, x0, "deepfool", clean_pred)

    eye = np.eye(k)
    r_tot = np.zeros_like(x0)
    for _ in range(max_iters):
        xi = x0 + (1.0 + overshoot) * r_tot
        logits = classifier.logits_batch(xi[None])[0]
        if int(np.argmax(logits)) != clean_pred:
            break
        best = None
        for cls in range(k):
            if cls == clean_pred:
                continue
            w_k = classifier.vjp_again(eye[cls] - eye[clean_pred])
            norm = float(np.linalg.norm(w_k.ravel()))
            if norm == 0.0:
                continue
            dist = abs(float(logits[cls] - logits[clean_pred])) / norm
            if best is None or dist < best[0]:
                best = (dist, w_k, norm)
        if best is None:
            raise NumericError("degenerate linearization: zero gradient "
                               "difference for every class")
        dist, w_k, norm = best
        r_tot = r_tot + dist * w_k / norm
    adv = x0 + (1.0 + overshoot) * r_tot
    return _finish(classifier, example, adv, "deepfool", clean_pred)


# ----------------------------------------------------------------------
# Carlini-Wagner L2
# ----------------------------------------------------------------------

_ATANH_CLAMP = 1.0 - 1e-6


def cw_l2(classifier: Classifier, example: LabeledExample, target_label: int,
          steps: int = 200, initial_c: float = 1e-2,
          binary_search_rounds: int = 5, confidence: float = 0.0,
          lr: float = 1e-2) -> AdversarialExample:
    """Targeted L2 attack with box constraints by change of variables.

    Optimizes ||x' - x||^2 + c * max(max_{k != t} Z_k - Z_t, -confidence)
    over w with x' = (tanh(w) + 1) / 2, by plain gradient descent;
    c is binary-searched between rounds. Returns the smallest-L2
    iterate that reached the target, else the final iterate.
    """
    if target_label == example.label:
        raise ValueError("target_label must differ from the true label")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not 0 <= target_label < classifier.class_count:
        raise ShapeError(f"target_label {target_label} outside "
                         f"[0, {classifier.class_count})")

    x0 = example.image.pixels
    clean_pred = int(classifier.predict_batch(x0[None])[0])
    w_init = np.arctanh((2.0 * x0 - 1.0) * _ATANH_CLAMP)
    eye = np.eye(classifier.class_count)
    others = [cls for cls in range(classifier.class_count)
              if cls != target_label]

    c = float(initial_c)
    c_lo, c_hi = 0.0, np.inf
    best_adv, best_l2 = None, np.inf
    last = None
    for _ in range(binary_search_rounds):
        w = w_init.copy()
        found = False
        for step in range(steps):
            x_adv = (np.tanh(w) + 1.0) / 2.0
            seed = np.zeros(classifier.class_count)
            grad_margin, logits = classifier.logit_vjp(x_adv, seed)
            k_star = others[int(np.argmax(logits[others]))]
            margin = float(logits[k_star] - logits[target_label])
            l2sq = float(((x_adv - x0) ** 2).sum())
            objective = l2sq + c * max(margin, -confidence)
            if not np.isfinite(objective):
                raise NumericError(f"non-finite objective at step {step}")
            if logits[target_label] - logits[k_star] > confidence:
                found = True
                l2 = np.sqrt(l2sq)
                if l2 < best_l2:
                    best_l2, best_adv = l2, x_adv.copy()
            grad = 2.0 * (x_adv - x0)
            if margin > -confidence:
                grad = grad + c * classifier.vjp_again(
                    eye[k_star] - eye[target_label])
            w = w - lr * grad * 0.5 * (1.0 - np.tanh(w) ** 2)
            last = x_adv
        if found:
            c_hi = min(c_hi, c)
            c = (c_lo + c_hi) / 2.0
        else:
            c_lo = max(c_lo, c)
            c = (c_lo + c_hi) / 2.0 if np.isfinite(c_hi) else c * 10.0

    adv = best_adv if best_adv is not None else last
    return _finish(classifier, example, adv, "cw", clean_pred)


def least_likely_label(classifier: Classifier, image) -> int:
    """The class the classifier ranks last on this image."""
    pixels = image.pixels if isinstance(image, Image) else image
    logits = classifier.logits_batch(as_tensor(pixels)[None])[0]
    return int(np.argmin(logits))


# ----------------------------------------------------------------------
# universal perturbation (generator-based)
# ----------------------------------------------------------------------

def train_universal(classifier: Classifier, generator: Generator,
                    dataset: Dataset, epochs: int, lr: float,
                    batch_size: int = 32) -> UniversalPerturbation:
    """Train the generator so its fixed output pattern fools the classifier.

    Non-targeted objective: maximize the cross-entropy of the clean
    predictions on clip(x + delta, 0, 1). Only generator parameters move;
    the classifier is frozen. Returns the final bounded pattern.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if generator.image_shape != dataset.image_shape:
        raise ShapeError(f"generator {generator.image_shape} vs dataset "
                         f"{dataset.image_shape}")

    images = dataset.images_array()
    clean = classifier.predict_batch(images)
    onehot = one_hot(clean, classifier.class_count)
    n = len(dataset)

    graphs: dict[int, Graph] = {}

    def graph_for(m: int) -> Graph:
        if m not in graphs:
            g = Graph()
            z = g.constant(generator.noise[None])
            delta = append_generator_ops(g, z, generator.image_shape[0],
                                         generator.hidden,
                                         generator.linf_bound)
            x = g.input("x", (m, *generator.image_shape))
            adv = g.clip(g.add(x, delta), 0.0, 1.0)
            logits = append_classifier_ops(g, adv, classifier.input_shape,
                                           classifier.class_count,
                                           classifier.channels,
                                           prefix="clf_", kind="input")
            y = g.input("y", (m, classifier.class_count))
            g.set_output(g.scale(g.softmax_cross_entropy(logits, y), -1.0))
            graphs[m] = g
        return graphs[m]

    clf_feed = {"clf_" + k: v for k, v in classifier.weights.items()}
    rng = np.random.default_rng([generator.seed, 77])
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            sel = order[start:start + batch_size]
            g = graph_for(len(sel))
            try:
                loss = float(g.forward({**generator.weights, **clf_feed,
                                        "x": images[sel], "y": onehot[sel]}))
            except NumericError as exc:
                raise DivergenceError(f"universal training diverged at "
                                      f"epoch {epoch}: {exc}") from exc
            if not np.isfinite(loss):
                raise DivergenceError(f"universal training diverged at "
                                      f"epoch {epoch}")
            grads = g.backward()
            generator.weights = sgd_step(generator.weights, grads, lr)
    return UniversalPerturbation(generator.delta(), generator.linf_bound)


def apply_universal(perturbation: UniversalPerturbation,
                    image: Image) -> Image:
    """clip(x + delta, 0, 1)."""
    if perturbation.delta.shape != image.shape:
        raise ShapeError(f"perturbation {perturbation.delta.shape} vs image "
                         f"{image.shape}")
    return Image(np.clip(image.pixels + perturbation.delta, 0.0, 1.0))


def universal_adv_set(classifier: Classifier,
                      perturbation: UniversalPerturbation,
                      examples) -> list[AdversarialExample]:
    """Apply one fixed pattern to every example (no per-image computation)."""
    out = []
    images = np.stack([ex.image.pixels for ex in examples])
    clean = classifier.predict_batch(images)
    for ex, pred in zip(examples, clean):
        adv = ex.image.pixels + perturbation.delta
        out.append(_finish(classifier, ex, adv, "gap", int(pred)))
    return out

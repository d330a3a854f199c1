"""Desk-scale stand-in for the classifier experiments: a seeded generator of
tone-controlled lesion swatches and a multinomial logistic classifier trained
with the weighted cross-entropy."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import cv2
import numpy as np

from .errors import InvalidSpec
from .tone import lab_to_rgb, lightness_for_ita
from .weighting import fair_cross_entropy_logits, softmax

SKIN_B = 15.0
SKIN_A = 12.0
N_HIST_FEATURES = 16


@dataclass
class SynthSpec:
    n_samples: int = 4000
    # (mean ITA, std, proportion)
    tone_mixture: list = field(default_factory=lambda: [(45.0, 8.0, 0.8), (5.0, 10.0, 0.2)])
    # mixture components are truncated at this many standard deviations
    tone_truncation: float = 2.0
    n_classes: int = 3
    label_noise_base: float = 0.05
    rarity_noise_gain: float = 0.3
    seed: int = 0
    image_size: int = 64
    pixel_ita_std: float = 6.0
    hair_prob: float = 0.3
    test_fraction: float = 0.5
    # lesion is this many L* units darker than the skin, per class
    class_contrast: list = field(default_factory=lambda: [8.0, 18.0, 28.0])
    contrast_std: float = 2.0
    # class-independent per-image offsets of the lesion's L* and a*
    nuisance_std: float = 3.0
    # rarer tones show the class contrast increasingly in a* instead of L*
    appearance_shift: float = 1.33

    def validate(self):
        if self.n_samples < 1:
            raise InvalidSpec("n_samples must be >= 1")
        if not self.tone_mixture:
            raise InvalidSpec("tone_mixture is empty")
        props = [float(m[2]) for m in self.tone_mixture]
        if any(p < 0 for p in props) or abs(sum(props) - 1.0) > 1e-9:
            raise InvalidSpec(f"mixture proportions must be non-negative and sum to 1, got {props}")
        if any(float(m[1]) <= 0 for m in self.tone_mixture):
            raise InvalidSpec("mixture standard deviations must be positive")
        if not self.tone_truncation > 0:
            raise InvalidSpec("tone_truncation must be positive")
        if self.n_classes < 2:
            raise InvalidSpec("need at least two classes")
        if len(self.class_contrast) != self.n_classes:
            raise InvalidSpec("class_contrast needs one entry per class")
        for name in ("label_noise_base", "hair_prob", "test_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidSpec(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 <= self.label_noise_base + self.rarity_noise_gain <= 1.0 or self.rarity_noise_gain < 0:
            raise InvalidSpec("label_noise_base + rarity_noise_gain must lie in [0, 1]")
        if not 0.0 <= self.appearance_shift <= 2.0:
            raise InvalidSpec("appearance_shift must lie in [0, 2]")
        if self.image_size < 8:
            raise InvalidSpec("image_size must be >= 8")
        return self

    def to_dict(self):
        d = asdict(self)
        d["tone_mixture"] = [list(map(float, m)) for m in self.tone_mixture]
        return d

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise InvalidSpec(f"unknown SynthSpec fields: {sorted(unknown)}")
        spec = cls(**known)
        spec.tone_mixture = [tuple(map(float, m)) for m in spec.tone_mixture]
        return spec.validate()

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SynthSample:
    sample_id: str
    image: np.ndarray
    lesion: np.ndarray
    hair: np.ndarray
    label: int
    true_label: int
    tone: float
    component: int
    flipped: bool
    split: str


def mixture_pdf(x, mixture):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for mean, std, prop in mixture:
        out += prop * np.exp(-0.5 * ((x - mean) / std) ** 2) / (std * math.sqrt(2 * math.pi))
    return out


def density_quantile(tones, mixture, seed, n_ref=20000):
    """Fraction of the tone population whose mixture density is below each tone's."""
    rng = np.random.default_rng([seed, 0x5EED])
    props = np.array([m[2] for m in mixture])
    comp = rng.choice(len(mixture), size=n_ref, p=props)
    means = np.array([m[0] for m in mixture])[comp]
    stds = np.array([m[1] for m in mixture])[comp]
    ref = np.sort(mixture_pdf(rng.normal(means, stds), mixture))
    return np.searchsorted(ref, mixture_pdf(tones, mixture), side="right") / n_ref


def _render(rng, spec, tone, label, rarity):
    s = spec.image_size
    # spatially smooth texture, rescaled to the requested per-pixel spread
    field_ = cv2.GaussianBlur(rng.normal(size=(s, s)), (0, 0), s / 8.0, borderType=cv2.BORDER_REFLECT)
    field_ = (field_ - field_.mean()) / (field_.std() or 1.0)
    ita_px = tone + spec.pixel_ita_std * field_
    L = np.clip(lightness_for_ita(ita_px, SKIN_B), 2.0, 98.0)
    lab = np.stack([L, np.full_like(L, SKIN_A), np.full_like(L, SKIN_B)], axis=-1)

    yy, xx = np.mgrid[0:s, 0:s]
    cy, cx = (s - 1) / 2 + rng.uniform(-2, 2, size=2)
    ry, rx = rng.uniform(0.18, 0.28, size=2) * s
    lesion = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0

    skin_L = float(np.clip(lightness_for_ita(tone, SKIN_B), 2.0, 98.0))
    contrast = spec.class_contrast[label] + rng.normal(0, spec.contrast_std)
    angle = 0.5 * math.pi * spec.appearance_shift * rarity
    n_les = int(lesion.sum())
    off_L, off_a = rng.normal(0, spec.nuisance_std, size=2)
    lesion_L = np.clip(skin_L - contrast * math.cos(angle) - 4.0 + off_L
                       + rng.normal(0, 1.0, size=n_les), 0.0, 100.0)
    lesion_a = SKIN_A + 6.0 + contrast * math.sin(angle) + off_a + rng.normal(0, 1.0, size=n_les)
    lab[lesion] = np.column_stack([lesion_L, lesion_a, np.full_like(lesion_L, 18.0)])
    image = np.clip(np.rint(lab_to_rgb(lab)), 0, 255).astype(np.uint8)

    hair = np.zeros((s, s), dtype=bool)
    if rng.random() < spec.hair_prob:
        canvas = np.zeros((s, s), dtype=np.uint8)
        for _ in range(int(rng.integers(1, 3))):
            p0 = tuple(int(v) for v in rng.integers(0, s, size=2))
            p1 = tuple(int(v) for v in rng.integers(0, s, size=2))
            cv2.line(canvas, p0, p1, 255, thickness=int(rng.integers(1, 3)))
        hair = canvas > 0
        image[hair] = (image[hair] * 0.25).astype(np.uint8)
    return image, lesion, hair


def generate_synthetic(spec):
    """Deterministic list of :class:`SynthSample` under ``spec.seed``.

    Tones come from the mixture; labels are flipped (training split only) with
    probability ``label_noise_base + rarity_noise_gain * (1 - q)`` where ``q``
    is the tone's density quantile.
    """
    spec.validate()
    top = np.random.default_rng(spec.seed)
    props = np.array([m[2] for m in spec.tone_mixture], dtype=np.float64)
    comps = top.choice(len(spec.tone_mixture), size=spec.n_samples, p=props)
    z = top.normal(size=spec.n_samples)
    while np.any(np.abs(z) > spec.tone_truncation):
        bad = np.abs(z) > spec.tone_truncation
        z[bad] = top.normal(size=int(bad.sum()))
    tones = np.array([spec.tone_mixture[c][0] + spec.tone_mixture[c][1] * z[i] for i, c in enumerate(comps)])
    labels = top.integers(0, spec.n_classes, size=spec.n_samples)
    is_test = top.random(spec.n_samples) < spec.test_fraction
    rarity = 1.0 - density_quantile(tones, spec.tone_mixture, spec.seed)
    flip_p = spec.label_noise_base + spec.rarity_noise_gain * rarity
    width = len(str(spec.n_samples - 1))

    samples = []
    for i in range(spec.n_samples):
        rng = np.random.default_rng([spec.seed, i])
        true_label = int(labels[i])
        image, lesion, hair = _render(rng, spec, float(tones[i]), true_label, float(rarity[i]))
        flipped = bool(not is_test[i] and rng.random() < flip_p[i])
        label = true_label
        if flipped:
            label = int((true_label + rng.integers(1, spec.n_classes)) % spec.n_classes)
        samples.append(SynthSample(
            sample_id=f"s{i:0{width}d}", image=image, lesion=lesion, hair=hair,
            label=label, true_label=true_label, tone=float(tones[i]), component=int(comps[i]),
            flipped=flipped, split="test" if is_test[i] else "train"))
    return samples


# ---------------------------------------------------------------------------
# features and classifier


def downsample_mass(mass, n_out=N_HIST_FEATURES):
    mass = np.asarray(mass, dtype=np.float64)
    return np.array([chunk.sum() for chunk in np.array_split(mass, n_out)])


def make_features(mass, median_ita, lesion_lab=None):
    """Downsampled skin ITA histogram + median ITA (+ lesion colour when known)."""
    parts = [downsample_mass(mass), [median_ita / 100.0]]
    if lesion_lab is not None:
        parts.append(np.asarray(lesion_lab, dtype=np.float64) / 100.0)
    return np.concatenate(parts)


@dataclass
class TrainConfig:
    iterations: int = 1500
    learning_rate: float = 0.5
    l2: float = 1e-3
    seed: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class ToyModel:
    weights: np.ndarray
    bias: np.ndarray
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    loss_history: list = field(default_factory=list, repr=False)
    non_convergence: bool = False

    @property
    def n_classes(self):
        return self.bias.shape[0]

    def logits(self, X):
        Z = (np.asarray(X, dtype=np.float64) - self.feature_mean) / self.feature_scale
        return Z @ self.weights.T + self.bias

    def predict_proba(self, X):
        return softmax(self.logits(X))

    def predict(self, X):
        return np.argmax(self.logits(X), axis=1)

    def to_dict(self):
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
            "final_loss": self.loss_history[-1] if self.loss_history else None,
            "non_convergence": self.non_convergence,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["weights"]), np.asarray(d["bias"]),
                   np.asarray(d["feature_mean"]), np.asarray(d["feature_scale"]),
                   non_convergence=bool(d.get("non_convergence", False)))


def train_toy(X, y, n_classes, sample_weights=None, config=TrainConfig(), class_weights=None):
    """Full-batch gradient descent on the weighted cross-entropy plus L2."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    n, f = X.shape
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    T = np.eye(n_classes)[y]

    W = np.zeros((n_classes, f))
    b = np.zeros(n_classes)
    history = []
    for _ in range(config.iterations):
        loss, G = fair_cross_entropy_logits(Z @ W.T + b, T, w, class_weights)
        loss += 0.5 * config.l2 * float((W * W).sum())
        history.append(loss)
        W -= config.learning_rate * (G.T @ Z + config.l2 * W)
        b -= config.learning_rate * G.sum(axis=0)
    tail = max(1, config.iterations // 10)
    non_conv = len(history) > tail and history[-1] > history[-tail - 1]
    return ToyModel(W, b, mean, scale, history, non_conv)

"""Model contract and bundled toy models.

A segmentation model is any callable `model(image, rng=None) -> probs` where
probs has the image's spatial shape and values in [0, 1].  Models that emit
logits instead set `outputs_logits = True` and the exporter applies the
sigmoid.  Aleatoric models return `(probs_or_logits, variance)` with
variance >= 0.  Stochastic models (MC dropout) must use the passed
numpy Generator for their randomness so exports are reproducible; they
advertise themselves with `stochastic = True`.

Error predictors for auxiliary mode are callables
`predictor(image, labels) -> raw_uncertainty >= 0`.

The bundled toy models are tiny numpy networks (local smoothing + logistic
head) so tests and demos need no accelerator, dataset, or training.
"""

from __future__ import annotations

import importlib

import numpy as np


def _smooth(image: np.ndarray, radius: int) -> np.ndarray:
    """Box average over a (2*radius+1)^d neighborhood via axis shifts."""
    out = image.astype(np.float64)
    for axis in range(out.ndim):
        acc = out.copy()
        for shift in range(1, radius + 1):
            acc += np.roll(out, shift, axis=axis)
            acc += np.roll(out, -shift, axis=axis)
        out = acc / (2 * radius + 1)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


class ToySegmenter:
    """Deterministic logistic segmenter with an optional dropout site."""

    def __init__(self, gain=8.0, bias=0.5, dropout=0.0, smooth=1):
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        self.gain = float(gain)
        self.bias = float(bias)
        self.dropout = float(dropout)
        self.smooth = int(smooth)
        self.stochastic = dropout > 0.0

    def __call__(self, image: np.ndarray, rng: np.random.Generator | None = None):
        features = _smooth(image, self.smooth)
        if self.dropout > 0.0 and rng is not None:
            keep = rng.random(features.shape) >= self.dropout
            features = features * keep / (1.0 - self.dropout)
        return _sigmoid(self.gain * (features - self.bias))


class ToyLogitSegmenter(ToySegmenter):
    """Same network, but emits logits; exercises the exporter's transform."""

    outputs_logits = True

    def __call__(self, image, rng=None):
        features = _smooth(image, self.smooth)
        if self.dropout > 0.0 and rng is not None:
            keep = rng.random(features.shape) >= self.dropout
            features = features * keep / (1.0 - self.dropout)
        return self.gain * (features - self.bias)


class ToyAleatoricSegmenter:
    """Two-headed toy model: probabilities plus a per-voxel variance."""

    def __init__(self, gain=8.0, bias=0.5, noise_scale=0.2, smooth=1):
        self.seg = ToySegmenter(gain=gain, bias=bias, smooth=smooth)
        self.noise_scale = float(noise_scale)

    def __call__(self, image, rng=None):
        probs = self.seg(image)
        variance = self.noise_scale * probs * (1.0 - probs)
        return probs, variance


class ToyErrorPredictor:
    """Raw uncertainty concentrated where the decision is close to the boundary."""

    def __init__(self, width=0.1, smooth=1):
        self.width = float(width)
        self.smooth = int(smooth)

    def __call__(self, image, labels):
        features = _smooth(image, self.smooth)
        return np.exp(-((features - 0.5) / self.width) ** 2)


_BUILTINS = {
    "toy": ToySegmenter,
    "toy-logits": ToyLogitSegmenter,
    "toy-aleatoric": ToyAleatoricSegmenter,
    "toy-error": ToyErrorPredictor,
}


def load_model(ref: str):
    """Resolve a model reference.

    Builtins: "toy", "toy-logits", "toy-aleatoric", "toy-error", each with
    optional key=value parameters after a colon ("toy:dropout=0.5,gain=6").
    Anything containing ":" with a module path loads "pkg.module:attr"; a
    class is instantiated with no arguments.
    """
    name, _, params = ref.partition(":")
    if name in _BUILTINS:
        kwargs = {}
        if params:
            for pair in params.split(","):
                key, _, value = pair.partition("=")
                if not _:
                    raise ValueError(f"bad model parameter '{pair}' in '{ref}'")
                kwargs[key.strip()] = float(value)
        return _BUILTINS[name](**kwargs)
    if ":" not in ref:
        raise ValueError(f"unknown model reference '{ref}'")
    module_name, attr = ref.split(":", 1)
    obj = getattr(importlib.import_module(module_name), attr)
    return obj() if isinstance(obj, type) else obj

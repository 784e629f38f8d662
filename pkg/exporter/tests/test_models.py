"""Toy models and model-reference resolution."""

import numpy as np
import pytest

from seguq_export.models import (
    ToyAleatoricSegmenter,
    ToyErrorPredictor,
    ToyLogitSegmenter,
    ToySegmenter,
    load_model,
)


def _image(seed=0, dims=(16, 16)):
    return np.random.default_rng(seed).random(dims)


def test_toy_segmenter_is_deterministic():
    model = ToySegmenter()
    image = _image()
    assert np.array_equal(model(image), model(image))
    probs = model(image)
    assert probs.shape == image.shape
    assert probs.min() >= 0.0 and probs.max() <= 1.0


def test_dropout_needs_rng_to_be_stochastic():
    model = ToySegmenter(dropout=0.5)
    image = _image()
    assert model.stochastic
    assert np.array_equal(model(image), model(image))  # no rng, no noise
    a = model(image, np.random.default_rng(1))
    b = model(image, np.random.default_rng(2))
    assert not np.array_equal(a, b)
    # same rng stream reproduces the same sample
    assert np.array_equal(model(image, np.random.default_rng(1)), a)


def test_logit_variant_matches_sigmoid():
    image = _image(3)
    probs = ToySegmenter(gain=5.0, bias=0.4)(image)
    logits = ToyLogitSegmenter(gain=5.0, bias=0.4)(image)
    assert np.allclose(1.0 / (1.0 + np.exp(-logits)), probs)


def test_aleatoric_variance_nonnegative():
    probs, variance = ToyAleatoricSegmenter()(_image(4))
    assert variance.min() >= 0.0
    assert probs.shape == variance.shape


def test_error_predictor_nonnegative():
    image = _image(5)
    labels = (image > 0.5).astype(np.uint8)
    raw = ToyErrorPredictor()(image, labels)
    assert raw.min() >= 0.0
    assert raw.shape == image.shape


def test_load_model_builtins_and_params():
    assert isinstance(load_model("toy"), ToySegmenter)
    model = load_model("toy:dropout=0.3,gain=6")
    assert model.dropout == 0.3 and model.gain == 6.0
    assert isinstance(load_model("toy-aleatoric"), ToyAleatoricSegmenter)
    assert isinstance(load_model("toy-error:width=0.2"), ToyErrorPredictor)


def test_load_model_dynamic_import():
    model = load_model("seguq_export.models:ToySegmenter")
    assert isinstance(model, ToySegmenter)


def test_load_model_rejects_unknown():
    with pytest.raises(ValueError):
        load_model("nonsense")
    with pytest.raises(ValueError):
        load_model("toy:dropout")

import os
import tempfile

import numpy as np
import pytest

import forgrad


def test_presets_and_forward():
    assert "cnn-max" in forgrad.preset_names()
    net = forgrad.make_preset("cnn-max", 3)
    x = np.zeros((1, 28, 28))
    p = forgrad.probabilities(net, x)
    assert p.shape == (2,)
    assert p.sum() == pytest.approx(1.0)
    assert forgrad.predict(net, x) in (0, 1)


def test_saliency_of_linear_model_is_weight_magnitude():
    net = forgrad.make_preset("linear", 5)
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(1, 28, 28))
    g = forgrad.attribute(net, x, 1, method="saliency")
    ig = forgrad.attribute(net, x, 1, method="integrated-gradients", ig_steps=3)
    gi = forgrad.attribute(net, x, 1, method="gradient-input")
    assert g.shape == (28, 28)
    assert np.all(g >= 0)
    np.testing.assert_allclose(ig, gi, atol=1e-12)


def test_lowpass_bypass_and_mean():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(28, 28))
    assert np.array_equal(forgrad.lowpass(m, 28.0), m)
    np.testing.assert_allclose(forgrad.lowpass(m, 0.0), np.full_like(m, m.mean()), atol=1e-12)
    with pytest.raises(forgrad.NegativeSigma):
        forgrad.lowpass(m, -1.0)


def test_filtered_attribution_differs_from_unfiltered():
    net = forgrad.make_preset("cnn-max", 2)
    images, labels = forgrad.synthetic(4, 2)
    raw = forgrad.attribute(net, images[0], labels[0])
    same = forgrad.attribute(net, images[0], labels[0], sigma=28.0)
    low = forgrad.attribute(net, images[0], labels[0], sigma=4.0)
    assert np.array_equal(raw, same)
    assert not np.allclose(raw, low)


def test_metrics_and_errors():
    net = forgrad.make_preset("cnn-max", 2)
    images, labels = forgrad.synthetic(2, 9)
    amap = forgrad.attribute(net, images[0], labels[0])
    r = forgrad.metrics(net, images[0], amap, labels[0])
    assert r["faithfulness"] == pytest.approx(r["insertion"] - r["deletion"], abs=1e-15)
    with pytest.raises(forgrad.ConfigError):
        forgrad.attribute(net, images[0], 0, method="no-such-method")
    assert issubclass(forgrad.ConfigError, forgrad.ForgradError)


def test_sigma_search_returns_grid_member():
    net = forgrad.make_preset("cnn-max", 2)
    images, labels = forgrad.synthetic(6, 4)
    star, curve = forgrad.sigma_search(net, images, labels, grid=[28.0, 8.0])
    assert star in (28.0, 8.0)
    assert [s for s, _ in curve] == [28.0, 8.0]


def test_cli_passthrough():
    with tempfile.TemporaryDirectory() as d:
        code, _, _ = forgrad.cli(["gen-data", "--out", d, "--n", "20", "--seed", "1"])
        assert code == 0
        assert os.listdir(d)
        code, _, err = forgrad.cli(["no-such-command"])
        assert code == 1

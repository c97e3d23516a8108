import numpy as np
import pytest

from gevadapt import beamform, sim
from gevadapt.errors import InvalidConfigError, ShapeError
from gevadapt.signal import stft

from .oracles import crandn


@pytest.fixture(scope="module")
def scene():
    return sim.make_scene(sim.SceneConfig(seed=11))


def test_high_snr_speech_mask_near_one():
    s = sim.make_scene(sim.SceneConfig(snr_db=60.0, seed=3))
    px = np.abs(s.x.data[0]) ** 2
    speechy = px > 1e-3 * px.max()
    assert s.ideal_masks.speech[speechy].min() > 0.99


def test_additivity_exact(scene):
    assert np.array_equal(scene.y.data, scene.x.data + scene.n.data)


@pytest.mark.parametrize("kind", list(sim.NoiseKind))
@pytest.mark.parametrize("snr", [-5.0, 0.0, 10.0])
def test_measured_snr_matches_config(kind, snr):
    s = sim.make_scene(sim.SceneConfig(snr_db=snr, noise_kind=kind, seed=4))
    assert abs(sim.measured_snr_db(s) - snr) < 0.1


def test_deterministic():
    a = sim.make_scene(sim.SceneConfig(seed=5))
    b = sim.make_scene(sim.SceneConfig(seed=5))
    assert np.array_equal(a.y.data, b.y.data)
    assert np.array_equal(a.classes, b.classes)
    c = sim.make_scene(sim.SceneConfig(seed=6))
    assert not np.array_equal(a.y.data, c.y.data)


def test_scene_shapes_and_classes(scene):
    assert scene.y.data.shape == (6, 98, 201)
    assert scene.classes.shape == (98,)
    assert scene.classes.min() >= 0 and scene.classes.max() < 8
    assert len(np.unique(scene.classes)) > 2


def test_speaker_changes_spectrum():
    a = sim.make_scene(sim.SceneConfig(speaker=sim.SPEAKERS["A"], seed=1))
    e = sim.make_scene(sim.SceneConfig(speaker=sim.SPEAKERS["E"], seed=1))
    assert not np.allclose(np.abs(a.x.data), np.abs(e.x.data))


def test_ideal_masks_without_noise():
    x = crandn(np.random.default_rng(0), 2, 4, 5)
    x[0, 1, 2] = 0
    m = sim.ideal_masks(x, np.zeros_like(x))
    expected = np.ones((4, 5))
    expected[1, 2] = 0
    np.testing.assert_array_equal(m.speech, expected)


def test_ideal_masks_equal_magnitudes():
    x = crandn(np.random.default_rng(1), 2, 4, 5)
    n = x * np.exp(1j * 0.7)
    m = sim.ideal_masks(x, n)
    np.testing.assert_allclose(m.speech, 0.5, rtol=1e-14)
    np.testing.assert_allclose(m.noise, 0.5, rtol=1e-14)


def test_ideal_masks_range_and_complement(scene):
    m = scene.ideal_masks
    assert np.all((m.speech >= 0) & (m.speech <= 1))
    np.testing.assert_allclose(m.speech + m.noise, 1.0)


def test_ideal_masks_threshold():
    x = crandn(np.random.default_rng(2), 1, 3, 3)
    m = sim.ideal_masks(x, 0.5 * x, threshold=0.5)
    assert set(np.unique(m.speech)) <= {0.0, 1.0}


def test_ideal_masks_shape_mismatch():
    with pytest.raises(ShapeError):
        sim.ideal_masks(np.ones((2, 3, 4)), np.ones((2, 3, 5)))


def test_selector_gain_nonpositive(scene):
    snrs = sim.channel_snrs_db(scene)
    for ch in range(scene.y.n_channels):
        w = sim.selector(scene.y.n_bins, scene.y.n_channels, ch)
        gain = sim.snr_gain(beamform.apply_beamformer(w, scene.y), scene, w)
        assert gain == pytest.approx(snrs[ch] - snrs.max(), abs=1e-9)
        assert gain <= 1e-12


def test_gain_scale_invariant(scene):
    rng = np.random.default_rng(3)
    w = crandn(rng, scene.y.n_bins, scene.y.n_channels)
    g1 = sim.snr_gain(None, scene, w)
    # a common positive scale leaves the ratio unchanged
    assert sim.snr_gain(None, scene, 7.3 * w) == pytest.approx(g1, abs=1e-9)


def test_gain_shape_check(scene):
    w = sim.selector(scene.y.n_bins, scene.y.n_channels)
    with pytest.raises(ShapeError):
        sim.snr_gain(np.zeros((3, 3)), scene, w)


def test_diffuse_white_ideal_gev_beats_every_channel():
    for seed in range(10):
        s = sim.make_scene(sim.SceneConfig(noise_kind="diffuse_white", seed=seed))
        m = s.ideal_masks
        w = beamform.beamformer_weights(beamform.spatial_covariance(s.y, m.speech),
                                        beamform.spatial_covariance(s.y, m.noise))
        assert sim.output_snr_db(s, w) > sim.channel_snrs_db(s).max()


def test_waves_match_spectrogram(scene):
    np.testing.assert_allclose(stft(scene.waves["y"]).data, scene.y.data, atol=1e-12)


@pytest.mark.parametrize("kwargs", [dict(n_channels=1), dict(duration=0.1), dict(snr_db=np.inf),
                                    dict(n_classes=1), dict(ref_channel=6),
                                    dict(noise_kind="pink")])
def test_config_validation(kwargs):
    with pytest.raises((InvalidConfigError, ValueError)):
        sim.SceneConfig(**kwargs)


def test_speaker_validation():
    with pytest.raises(InvalidConfigError):
        sim.SpeakerProfile(20.0, 0.9, 1.0)
    with pytest.raises(InvalidConfigError):
        sim.SpeakerProfile(120.0, 1.5, 1.0)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gevadapt import maskestim, sim
from gevadapt.errors import FreezeViolationError, InvalidConfigError, ShapeError
from gevadapt.grad import check

TINY = maskestim.MaskNetConfig(input_dim=7, hidden_dims=(5, 4), seed=3)


def _mag(rng, *shape):
    return np.abs(rng.standard_normal(shape)) + 0.01


def test_init_deterministic():
    a, b = maskestim.init_params(TINY), maskestim.init_params(TINY)
    assert a.digest() == b.digest()
    assert maskestim.init_params(maskestim.MaskNetConfig(seed=1)).digest() != \
        maskestim.init_params(maskestim.MaskNetConfig(seed=2)).digest()


@pytest.mark.parametrize("recurrent", [False, True])
def test_output_width_402(recurrent):
    cfg = maskestim.MaskNetConfig(recurrent_first_layer=recurrent)
    params = maskestim.init_params(cfg)
    last = max(k for k in params.params if k.startswith("dense") and k.endswith(".w"))
    assert params[last].shape[1] == 402
    pair = maskestim.forward(_mag(np.random.default_rng(0), 5, 201), params)
    assert pair.speech.shape == pair.noise.shape == (5, 201)


def test_zero_hidden_layers_rejected():
    with pytest.raises(InvalidConfigError):
        maskestim.MaskNetConfig(hidden_dims=())


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), scale=st.floats(1e-3, 1e3), recurrent=st.booleans())
def test_masks_in_unit_interval(seed, scale, recurrent):
    cfg = maskestim.MaskNetConfig(7, (5, 4), recurrent, seed % 1000)
    params = maskestim.init_params(cfg)
    rng = np.random.default_rng(seed)
    for k in params.params:
        params.params[k] = scale * rng.standard_normal(params.params[k].shape)
    pair = maskestim.forward(_mag(rng, 3, 6, 7), params)
    for m in (pair.speech, pair.noise):
        assert np.all((m >= 0) & (m <= 1))


def test_zero_output_layer_gives_half():
    params = maskestim.init_params(TINY)
    params.params["dense2.w"][:] = 0
    params.params["dense2.b"][:] = 0
    pair = maskestim.forward(_mag(np.random.default_rng(1), 4, 7), params)
    assert np.all(pair.speech == 0.5) and np.all(pair.noise == 0.5)


def test_forward_shape_error():
    with pytest.raises(ShapeError):
        maskestim.forward(np.ones((4, 8)), maskestim.init_params(TINY))


def test_batch_matches_single_channel():
    params = maskestim.init_params(TINY)
    mag = _mag(np.random.default_rng(2), 3, 6, 7)
    batch = maskestim.forward(mag, params)
    for m in range(3):
        single = maskestim.forward(mag[m], params)
        np.testing.assert_allclose(batch.speech[m], single.speech, rtol=1e-14)


def test_median_identical_channels():
    mask = np.random.default_rng(3).uniform(size=(4, 5))
    np.testing.assert_array_equal(maskestim.median_mask(np.stack([mask] * 5)), mask)


def test_median_odd_example():
    assert maskestim.median_mask(np.array([0.9, 0.1, 0.5])) == 0.5


def test_median_m6_sorting_oracle():
    masks = np.random.default_rng(4).uniform(size=(6, 8, 9))
    out = maskestim.median_mask(masks)
    for t in range(8):
        for f in range(9):
            s = sorted(masks[:, t, f])
            assert out[t, f] == (s[2] + s[3]) / 2


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), m=st.integers(1, 7))
def test_median_permutation_invariant(seed, m):
    rng = np.random.default_rng(seed)
    masks = rng.uniform(size=(m, 3, 4))
    perm = rng.permutation(m)
    np.testing.assert_array_equal(maskestim.median_mask(masks), maskestim.median_mask(masks[perm]))


def test_median_vjp_mass_conservation():
    rng = np.random.default_rng(5)
    for m in range(1, 8):
        cot = rng.standard_normal((3, 4))
        g = maskestim.median_mask_vjp(rng.uniform(size=(m, 3, 4)), cot)
        np.testing.assert_array_equal(g.sum(axis=0), cot)


def test_backward_finite_differences():
    for op in ("masknet_backward", "masknet_rnn_backward"):
        assert check.finite_diff_check(op, seed=7).max_rel_err < 1e-5


def _record(rng):
    params = maskestim.init_params(TINY)
    _, rec = maskestim.forward(_mag(rng, 2, 5, 7), params, return_record=True)
    return params, rec


def test_backward_zero_cotangent():
    params, rec = _record(np.random.default_rng(8))
    maskestim.backward(rec, maskestim.MaskPair(np.zeros((2, 5, 7)), np.zeros((2, 5, 7))), params)
    assert all(np.all(g == 0) for g in params.grads.values())


def test_backward_accumulates():
    rng = np.random.default_rng(9)
    params, rec = _record(rng)
    cot = maskestim.MaskPair(rng.standard_normal((2, 5, 7)), rng.standard_normal((2, 5, 7)))
    maskestim.backward(rec, cot, params)
    once = {k: v.copy() for k, v in params.grads.items()}
    maskestim.backward(rec, cot, params)
    for k in once:
        np.testing.assert_array_equal(params.grads[k], 2 * once[k])


def test_backward_frozen():
    params, rec = _record(np.random.default_rng(10))
    params.freeze()
    with pytest.raises(FreezeViolationError):
        maskestim.backward(rec, maskestim.MaskPair(np.ones((2, 5, 7)), np.ones((2, 5, 7))), params)


def test_pretrain_halves_bce(ff_pretrained):
    _, _, losses = ff_pretrained
    assert losses[-1] < 0.5 * losses[0]


def test_pretrained_mask_error_on_heldout_scene(ff_pretrained):
    cfg, params, _ = ff_pretrained
    scene = sim.make_scene(sim.SceneConfig(seed=999))
    pair = maskestim.forward(np.abs(scene.y.data[scene.meta.ref_channel]), params, cfg)
    assert np.mean(np.abs(pair.speech - scene.ideal_masks.speech)) < 0.15


def test_pretrain_zero_lr_keeps_params():
    scenes = sim.make_scenes(sim.SceneConfig(), [0])
    cfg = maskestim.MaskNetConfig(hidden_dims=(8,))
    params = maskestim.init_params(cfg)
    before = params.digest()
    maskestim.pretrain_supervised(scenes, params, epochs=2, lr=0.0, cfg=cfg)
    assert params.digest() == before


def test_pretrain_deterministic():
    scenes = sim.make_scenes(sim.SceneConfig(), [1])
    cfg = maskestim.MaskNetConfig(hidden_dims=(8,))
    digests = [maskestim.pretrain_supervised(scenes, maskestim.init_params(cfg), 2, 1e-2, cfg)[0]
               .digest() for _ in range(2)]
    assert digests[0] == digests[1]


def test_bce_perfect_fit_is_entropy():
    y = np.random.default_rng(11).uniform(0.05, 0.95, size=50)
    entropy = -np.mean(y * np.log(y) + (1 - y) * np.log(1 - y))
    assert maskestim.bce(y, y) == pytest.approx(entropy, rel=1e-12)
    # derivative in the prediction vanishes at p = y
    eps = 1e-6
    for i in range(0, 50, 7):
        e = np.zeros(50)
        e[i] = eps
        slope = (maskestim.bce(y + e, y) - maskestim.bce(y - e, y)) / (2 * eps)
        assert abs(slope) < 1e-8

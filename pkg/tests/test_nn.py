import numpy as np
import pytest

from gevadapt import am, maskestim, nn
from gevadapt.errors import FormatError, FreezeViolationError, InvalidConfigError, ShapeError


def _store():
    return maskestim.init_params(maskestim.MaskNetConfig(7, (5,), True, 1))


def test_checkpoint_round_trip(tmp_path):
    store = am.init_params(am.AmConfig(n_states=3, hidden_dims=(4,)))
    store.buffers["feat_mean"] += 1.5
    store.freeze()
    path = tmp_path / "a.ckpt"
    nn.save_checkpoint(path, store)
    back = nn.load_checkpoint(path, {"kind": "am"})
    assert back.digest() == store.digest()
    assert back.frozen and back.meta == store.meta
    assert am.AmConfig.from_meta(back.meta) == am.AmConfig(n_states=3, hidden_dims=(4,))


def test_checkpoint_kind_mismatch(tmp_path):
    path = tmp_path / "m.ckpt"
    nn.save_checkpoint(path, _store())
    with pytest.raises(FormatError):
        nn.load_checkpoint(path, {"kind": "am"})


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"garbage")
    with pytest.raises(FormatError):
        nn.load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "m.ckpt"
    nn.save_checkpoint(path, _store())
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(FormatError):
        nn.load_checkpoint(path)


def test_digest_sensitivity():
    a = _store()
    b = a.copy()
    assert a.digest() == b.digest()
    b.params["dense0.b"][0] += 1e-300
    assert a.digest() != b.digest()


def test_copy_is_independent():
    a = _store()
    b = a.copy()
    b.params["dense0.w"] += 1
    b.grads["dense0.w"] += 1
    assert not np.array_equal(a["dense0.w"], b["dense0.w"])
    assert np.all(a.grads["dense0.w"] == 0)


def test_frozen_store_rejects_updates():
    store = _store().freeze()
    with pytest.raises(FreezeViolationError):
        store.sgd_step(0.1)
    with pytest.raises(FreezeViolationError):
        store.accumulate({"dense0.b": np.zeros(14)})


def test_accumulate_shape_check():
    with pytest.raises(ShapeError):
        _store().accumulate({"dense0.b": np.zeros(3)})


def test_sgd_step():
    store = _store()
    before = store["dense0.b"].copy()
    store.grads["dense0.b"][:] = 2.0
    store.sgd_step(0.25)
    np.testing.assert_array_equal(store["dense0.b"], before - 0.5)


def test_adam_first_step_magnitude():
    store = _store()
    for g in store.grads.values():
        g[...] = 3.0
    before = {k: v.copy() for k, v in store.params.items()}
    nn.Adam(store, lr=0.01).step()
    for k in before:
        np.testing.assert_allclose(before[k] - store[k], 0.01, rtol=1e-6)


def test_adam_negative_lr():
    with pytest.raises(InvalidConfigError):
        nn.Adam(_store(), lr=-1.0)


def test_softmax_stable():
    out = nn.softmax(np.array([[1000.0, 1000.0], [-1000.0, 0.0]]))
    np.testing.assert_allclose(out, [[0.5, 0.5], [0.0, 1.0]], atol=1e-300)

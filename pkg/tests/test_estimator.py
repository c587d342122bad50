import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mind.estimator import MindDenoiser
from mind.imagedata import make_phantom

TINY = dict(input_size=16, batch_size=2, epochs=1, steps_per_epoch=2, base_channels=8, embed_dim=16, transformer_layers=1)


def test_params_round_trip():
    est = MindDenoiser(**TINY)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    est.set_params(lr0=5e-4)
    assert est.run_config().lr0 == 5e-4


def test_not_fitted():
    with pytest.raises(NotFittedError):
        MindDenoiser().transform(np.zeros((16, 16)))


def test_untrained_transform_is_identity():
    est = MindDenoiser.untrained(**TINY)
    x = np.random.default_rng(0).random((2, 16, 16))
    np.testing.assert_array_equal(est.transform(x), x)
    np.testing.assert_array_equal(est.predict(x[0]), x[0])


def test_fit_score_save_load(tmp_path):
    rng = np.random.default_rng(0)
    X = np.stack([make_phantom(32, rng) for _ in range(3)])
    est = MindDenoiser(**TINY).fit(X)
    assert len(est.history_) == 2
    assert np.isfinite(est.score(X[:, :16, :16], X[:, :16, :16]))
    est.save(tmp_path / "m.ckpt")
    back = MindDenoiser.from_checkpoint(tmp_path / "m.ckpt")
    assert back.get_params() == est.get_params()
    np.testing.assert_allclose(back.transform(X[0, :16, :16]), est.transform(X[0, :16, :16]), atol=1e-6)


def test_fit_rejects_small_images():
    with pytest.raises(ValueError):
        MindDenoiser(**TINY).fit(np.zeros((2, 8, 8)))

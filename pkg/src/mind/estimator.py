"""scikit-learn compatible front end for the MIND denoiser."""

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .backbone import MIND
from .evalkit import psnr
from .trainer import RunConfig, Trainer, configure_threads, load_model, save_model
from .validation import check_divisible, check_image_batch


class MindDenoiser(TransformerMixin, BaseEstimator):
    """Noise-adaptive denoiser with the usual ``fit`` / ``transform`` / ``predict``.

    ``fit`` takes *clean* images (N, H, W) in [0, 1]; noisy training pairs are
    synthesised on the fly.  ``transform`` (alias ``predict``) denoises.

    All constructor arguments map one-to-one onto :class:`RunConfig` fields,
    so ``get_params``/``set_params``/``clone`` work as usual.
    """

    def __init__(
        self,
        input_size=64,
        batch_size=8,
        epochs=30,
        steps_per_epoch=17,
        lr0=1e-4,
        lr_min=1e-6,
        seed=42,
        scales=3,
        base_channels=32,
        embed_dim=64,
        patch=4,
        transformer_layers=2,
        r=4,
        use_naab=True,
        use_nle=True,
        use_multiscale=True,
        use_crossmodal=True,
        noise_kinds=("gaussian", "poisson", "speckle", "motion_blur"),
        noise_level=None,
        adversarial_enabled=False,
        augment=True,
    ):
        self.input_size = input_size
        self.batch_size = batch_size
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.lr0 = lr0
        self.lr_min = lr_min
        self.seed = seed
        self.scales = scales
        self.base_channels = base_channels
        self.embed_dim = embed_dim
        self.patch = patch
        self.transformer_layers = transformer_layers
        self.r = r
        self.use_naab = use_naab
        self.use_nle = use_nle
        self.use_multiscale = use_multiscale
        self.use_crossmodal = use_crossmodal
        self.noise_kinds = noise_kinds
        self.noise_level = noise_level
        self.adversarial_enabled = adversarial_enabled
        self.augment = augment

    def run_config(self):
        params = self.get_params()
        params["noise_kinds"] = list(params["noise_kinds"])
        return RunConfig(**params)

    def fit(self, X, y=None):
        """Train on clean images ``X``; ``y`` is ignored."""
        X = check_image_batch(X, min_size=self.input_size)
        configure_threads()
        trainer = Trainer(self.run_config(), list(X))
        self.history_ = trainer.run()
        self.model_ = trainer.model.eval()
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        """Denoise one image (H, W) or a stack (N, H, W)."""
        check_is_fitted(self, "model_")
        batch = check_image_batch(X)
        check_divisible(batch.shape, self.model_.config.multiple)
        with torch.no_grad():
            out = self.model_(torch.as_tensor(batch)).denoised.numpy()[:, 0]
        return out[0] if np.ndim(X) == 2 else out

    predict = transform

    def score(self, X, y):
        """Mean PSNR (dB) of ``transform(X)`` against clean ``y``."""
        out = check_image_batch(self.transform(X))
        ref = check_image_batch(y)
        return float(np.mean([psnr(a, b) for a, b in zip(out, ref)]))

    def save(self, path):
        check_is_fitted(self, "model_")
        return save_model(self.model_, self.run_config(), path)

    @classmethod
    def from_checkpoint(cls, path):
        model, cfg = load_model(path)
        params = {k: v for k, v in cfg.to_dict().items() if k in cls._get_param_names()}
        params["noise_kinds"] = tuple(params["noise_kinds"])
        est = cls(**params)
        est.model_ = model
        est.n_features_in_ = 1
        return est

    @classmethod
    def untrained(cls, **params):
        """Estimator holding a freshly initialised (identity) network."""
        est = cls(**params)
        cfg = est.run_config()
        torch.manual_seed(cfg.seed)
        est.model_ = MIND(cfg.model_config(), cfg.flags()).eval()
        est.n_features_in_ = 1
        return est

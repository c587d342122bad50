"""Training loop: Adam with cosine learning-rate decay, seeded batches, checkpoints.

Every random choice at global step ``t`` is drawn from
``numpy.random.default_rng([seed, t])``, so a run resumed from a checkpoint
sees exactly the batches an uninterrupted run would have seen.
"""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .backbone import MIND, AblationFlags, ModelConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .degrade import KINDS, degrade, sample_spec
from .errors import ConfigError, DatasetError, ParameterError, TrainingError
from .imagedata import load_dataset
from .objective import (
    Discriminator,
    LossWeightsConfig,
    PerceptualExtractor,
    discriminator_loss,
    total_loss,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "mind-checkpoint"


@dataclass
class RunConfig:
    input_size: int = 64
    batch_size: int = 8
    epochs: int = 30
    steps_per_epoch: int = 17
    lr0: float = 1e-4
    lr_min: float = 1e-6
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 42
    # architecture
    scales: int = 3
    base_channels: int = 32
    embed_dim: int = 64
    patch: int = 4
    transformer_layers: int = 2
    r: int = 4
    nle_window: int = 15
    # ablation switches
    use_naab: bool = True
    use_nle: bool = True
    use_multiscale: bool = True
    use_crossmodal: bool = True
    # objective
    loss_alpha: list = field(default_factory=lambda: [1.0, 0.8, 0.6, 0.4, 0.1])
    loss_beta: float = 0.15
    adversarial_enabled: bool = False
    perceptual_seed: int = 0
    # data
    dataset_root: str = None
    noise_kinds: list = field(default_factory=lambda: list(KINDS))
    noise_level: float = None
    augment: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ConfigError("steps_per_epoch and batch_size must be >= 1")
        if not 0 < self.lr_min < self.lr0:
            raise ConfigError(f"need 0 < lr_min < lr0, got {self.lr_min}, {self.lr0}")
        unknown = set(self.noise_kinds) - set(KINDS)
        if not self.noise_kinds or unknown:
            raise ConfigError(f"noise_kinds must be a non-empty subset of {KINDS}")
        self.model_config()  # architecture checks
        if self.input_size % self.model_config().multiple or self.input_size < 16:
            raise ConfigError(
                f"input_size {self.input_size} must be >= 16 and a multiple of {self.model_config().multiple}"
            )
        self.loss_config()

    @property
    def total_steps(self):
        return self.epochs * self.steps_per_epoch

    def model_config(self):
        return ModelConfig(
            scales=self.scales,
            base_channels=self.base_channels,
            embed_dim=self.embed_dim,
            patch=self.patch,
            transformer_layers=self.transformer_layers,
            r=self.r,
            window=self.nle_window,
        )

    def flags(self):
        return AblationFlags(self.use_naab, self.use_nle, self.use_multiscale, self.use_crossmodal)

    def loss_config(self):
        return LossWeightsConfig(
            alpha=tuple(self.loss_alpha),
            beta_decay=self.loss_beta,
            adversarial_enabled=self.adversarial_enabled,
        )

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **kw):
        d = self.to_dict()
        d.update(kw)
        return RunConfig.from_dict(d)


def cosine_lr(step, total_steps, lr0=1e-4, lr_min=1e-6):
    """lr_min + (lr0 - lr_min) * (1 + cos(pi * step / total)) / 2."""
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]")
    return lr_min + (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


def configure_threads():
    """Apply MIND_THREADS (default 1 = strict, bit-reproducible mode)."""
    n = int(os.environ.get("MIND_THREADS", "1"))
    if n < 1:
        raise ConfigError(f"MIND_THREADS must be >= 1, got {n}")
    torch.set_num_threads(n)
    return n


def build_model(cfg):
    torch.manual_seed(cfg.seed)
    return MIND(cfg.model_config(), cfg.flags())


def make_batch(images, cfg, step):
    """Clean/noisy patch pair for one step, a pure function of (images, cfg, step)."""
    rng = np.random.default_rng([cfg.seed, step])
    s = cfg.input_size
    clean = np.empty((cfg.batch_size, s, s))
    noisy = np.empty_like(clean)
    for b in range(cfg.batch_size):
        img = images[int(rng.integers(len(images)))]
        h, w = img.shape
        if h < s or w < s:
            raise DatasetError(f"image {h}x{w} smaller than input_size {s}")
        r0 = int(rng.integers(h - s + 1))
        c0 = int(rng.integers(w - s + 1))
        patch = img[r0 : r0 + s, c0 : c0 + s]
        if cfg.augment:
            patch = np.rot90(patch, int(rng.integers(4)))
            patch = np.clip(patch * rng.uniform(0.9, 1.1), 0.0, 1.0)
        spec = sample_spec(rng, tuple(cfg.noise_kinds), cfg.noise_level)
        clean[b] = patch
        noisy[b] = degrade(patch, spec)
    return clean, noisy


class Trainer:
    """Owns model, optimizer and (optionally) discriminator for one run."""

    def __init__(self, cfg, images):
        if len(images) == 0:
            raise DatasetError("training set is empty")
        self.cfg = cfg
        self.images = [np.asarray(im, dtype=np.float64) for im in images]
        self.model = build_model(cfg)
        self.extractor = PerceptualExtractor(cfg.perceptual_seed)
        self.loss_cfg = cfg.loss_config()
        self.optimizer = self._adam(self.model.parameters())
        self.discriminator = None
        self.d_optimizer = None
        if cfg.adversarial_enabled:
            self.discriminator = Discriminator()
            self.d_optimizer = self._adam(self.discriminator.parameters())
        self.step = 0
        self.history = []
        self.best_loss = math.inf
        self.best_epoch = None

    def _adam(self, params):
        c = self.cfg
        return torch.optim.Adam(params, lr=c.lr0, betas=(c.adam_beta1, c.adam_beta2), eps=c.adam_eps)

    def train_step(self):
        cfg = self.cfg
        clean, noisy = make_batch(self.images, cfg, self.step)
        clean_t = torch.as_tensor(clean[:, None], dtype=torch.float32)
        noisy_t = torch.as_tensor(noisy[:, None], dtype=torch.float32)
        lr = cosine_lr(self.step, cfg.total_steps, cfg.lr0, cfg.lr_min)
        for opt in (self.optimizer, self.d_optimizer):
            if opt is not None:
                for group in opt.param_groups:
                    group["lr"] = lr

        self.model.train()
        out = self.model(noisy_t)
        sigma = float(out.sigma.detach().mean())
        total, report = total_loss(
            out.denoised, clean_t, sigma, self.loss_cfg, self.extractor, self.discriminator
        )
        report.step = self.step
        report.extra = {"lr": lr, "epoch": self.step // cfg.steps_per_epoch}
        if not math.isfinite(report.total):
            raise TrainingError(
                f"non-finite loss at step {self.step}", step=self.step, report=report
            )
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        self.optimizer.step()

        if self.discriminator is not None:
            self.d_optimizer.zero_grad(set_to_none=True)
            discriminator_loss(self.discriminator, clean_t, out.denoised).backward()
            self.d_optimizer.step()

        self.history.append(report)
        self.step += 1
        return report

    def run(self, out_dir=None, stop_after_epochs=None, save_every_epoch=False):
        cfg = self.cfg
        out_dir = Path(out_dir) if out_dir is not None else None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
        end_epoch = cfg.epochs if stop_after_epochs is None else min(cfg.epochs, stop_after_epochs)
        while self.step < end_epoch * cfg.steps_per_epoch:
            epoch = self.step // cfg.steps_per_epoch
            reports = [self.train_step() for _ in range(cfg.steps_per_epoch - self.step % cfg.steps_per_epoch)]
            mean_loss = float(np.mean([r.total for r in reports]))
            logger.info("epoch %d/%d  loss %.6f", epoch + 1, cfg.epochs, mean_loss)
            if mean_loss < self.best_loss:
                self.best_loss = mean_loss
                self.best_epoch = epoch
                if out_dir is not None:
                    self.save(out_dir / "best.ckpt")
            if out_dir is not None and save_every_epoch:
                self.save(out_dir / f"epoch_{epoch + 1:03d}.ckpt")
        if out_dir is not None:
            self.save(out_dir / "final.ckpt")
            with open(out_dir / "history.jsonl", "w") as fh:
                for r in self.history:
                    fh.write(r.to_json() + "\n")
        return self.history

    # --- persistence -----------------------------------------------------

    def state_tensors(self):
        tensors = {}
        for name, p in self.model.state_dict().items():
            tensors[f"model/{name}"] = p.detach().cpu().numpy()
        _optim_tensors(tensors, "optim", self.model, self.optimizer)
        if self.discriminator is not None:
            for name, p in self.discriminator.state_dict().items():
                tensors[f"disc/{name}"] = p.detach().cpu().numpy()
            _optim_tensors(tensors, "disc_optim", self.discriminator, self.d_optimizer)
        return tensors

    def metadata(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "step": self.step,
            "epoch": self.step // self.cfg.steps_per_epoch,
            "run_config": self.cfg.to_dict(),
            "rng": {"scheme": "numpy default_rng([seed, step])", "seed": self.cfg.seed, "next_step": self.step},
            "best_loss": None if math.isinf(self.best_loss) else self.best_loss,
            "best_epoch": self.best_epoch,
        }

    def save(self, path):
        return save_checkpoint(self.state_tensors(), self.metadata(), path)

    @classmethod
    def from_checkpoint(cls, path, images, cfg=None):
        tensors, meta = load_checkpoint(path)
        cfg = cfg or RunConfig.from_dict(meta["run_config"])
        self = cls(cfg, images)
        load_model_state(self.model, tensors)
        _load_optim(tensors, "optim", self.model, self.optimizer, meta["step"])
        if self.discriminator is not None:
            load_model_state(self.discriminator, tensors, prefix="disc/")
            _load_optim(tensors, "disc_optim", self.discriminator, self.d_optimizer, meta["step"])
        self.step = int(meta["step"])
        self.best_loss = math.inf if meta.get("best_loss") is None else meta["best_loss"]
        self.best_epoch = meta.get("best_epoch")
        return self


def _optim_tensors(tensors, prefix, module, optimizer):
    for name, p in module.named_parameters():
        state = optimizer.state.get(p)
        if not state:
            continue
        tensors[f"{prefix}/{name}/exp_avg"] = state["exp_avg"].cpu().numpy()
        tensors[f"{prefix}/{name}/exp_avg_sq"] = state["exp_avg_sq"].cpu().numpy()


def _load_optim(tensors, prefix, module, optimizer, step):
    for name, p in module.named_parameters():
        key = f"{prefix}/{name}/exp_avg"
        if key not in tensors:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(float(step)),
            "exp_avg": torch.as_tensor(tensors[key]).clone(),
            "exp_avg_sq": torch.as_tensor(tensors[f"{prefix}/{name}/exp_avg_sq"]).clone(),
        }


def load_model_state(module, tensors, prefix="model/"):
    state = {
        k[len(prefix):]: torch.as_tensor(v)
        for k, v in tensors.items()
        if k.startswith(prefix)
    }
    module.load_state_dict(state)
    return module


def load_model(path):
    """Rebuild a :class:`MIND` from a checkpoint; returns ``(model, run_config)``."""
    tensors, meta = load_checkpoint(path)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError("checkpoint carries no MIND run configuration")
    cfg = RunConfig.from_dict(meta["run_config"])
    model = MIND(cfg.model_config(), cfg.flags())
    try:
        load_model_state(model, tensors)
    except RuntimeError as exc:
        raise ConfigError(f"checkpoint does not match its architecture: {exc}") from None
    model.eval()
    return model, cfg


def save_model(model, cfg, path):
    """Checkpoint holding only model weights (no optimizer moments)."""
    tensors = {f"model/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {
        "format": CHECKPOINT_FORMAT,
        "step": 0,
        "epoch": 0,
        "run_config": cfg.to_dict(),
        "rng": {"scheme": "numpy default_rng([seed, step])", "seed": cfg.seed, "next_step": 0},
        "best_loss": None,
        "best_epoch": None,
    }
    return save_checkpoint(tensors, meta, path)


def save_untrained(cfg, path):
    """Checkpoint of a freshly initialised model (zero-initialised heads)."""
    return save_model(build_model(cfg), cfg, path)


def dataset_images(cfg):
    if cfg.dataset_root is None:
        raise DatasetError("run config has no dataset_root")
    return [s.clean for s in load_dataset(cfg.dataset_root)]


def train(cfg, images=None, out_dir=None, resume_from=None, stop_after_epochs=None, save_every_epoch=False):
    """Train a model; returns ``(trainer, history)``.

    ``images`` overrides ``cfg.dataset_root``.  With ``resume_from`` the
    model, optimizer moments and step counter are restored from a checkpoint.
    """
    configure_threads()
    if images is None:
        images = dataset_images(cfg)
    if resume_from is not None:
        trainer = Trainer.from_checkpoint(resume_from, images, cfg)
    else:
        trainer = Trainer(cfg, images)
    history = trainer.run(out_dir, stop_after_epochs, save_every_epoch)
    return trainer, history

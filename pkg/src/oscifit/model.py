"""Unified Encoder-Regressor-Decoder network, dual loss and training loop.

The encoder compresses a normalized series into a bottleneck vector, the
regressor maps the bottleneck to normalized latent parameters, and the
decoder rebuilds the noiseless series from ``bottleneck ⊕ latents``. The
training objective is ``β·MSE_reg + (1-β)·MSE_dec``.
"""

import dataclasses
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ndnet
from .ndnet import (
    Concat,
    Conv1D,
    Dense,
    Flatten,
    Linear,
    MaxPool1D,
    ReLU,
    Reshape,
    Sequential,
    Sigmoid,
    UpSample1D,
)
from .rng import make_stream, sub_stream
from .signalgen import LATENT_FULL, LATENT_PARTIAL

log = logging.getLogger(__name__)

__all__ = [
    "ArchConfig",
    "TrainConfig",
    "LossReport",
    "UnifiedNet",
    "TrainingError",
    "build_model",
    "weighted_loss",
    "auto_beta",
    "train",
    "predict",
    "save_model",
    "load_model",
    "DEFAULT_BETA",
]

DEFAULT_BETA = 0.001


class TrainingError(RuntimeError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class ArchConfig:
    """Layer sizes of the three sub-networks.

    ``paper()`` is the full-size layer table for T=512; ``desk()`` keeps
    the topology but halves channels, kernels and dense widths for CPU training.
    """

    T: int = 512
    bottleneck_dim: int = 64
    latent_names: tuple = LATENT_FULL
    channels: int = 64
    enc_kernels: tuple = (64, 32)
    enc_dense: int = 128
    reg_kernels: tuple = (64, 32, 32)
    reg_dense: tuple = (256, 128, 64)
    dec_kernel: int = 32
    profile: str = "paper"

    def __post_init__(self):
        object.__setattr__(self, "latent_names", tuple(self.latent_names))
        object.__setattr__(self, "enc_kernels", tuple(self.enc_kernels))
        object.__setattr__(self, "reg_kernels", tuple(self.reg_kernels))
        object.__setattr__(self, "reg_dense", tuple(self.reg_dense))
        if self.T % 16 or self.T < 32:
            raise ValueError(f"T must be a multiple of 16 and >= 32, got {self.T}")
        if len(self.enc_kernels) != 2 or len(self.reg_kernels) != 3 or len(self.reg_dense) != 3:
            raise ValueError("encoder needs 2 kernels, regressor 3 kernels and 3 dense widths")
        if self.bottleneck_dim < 1 or self.latent_dim < 1:
            raise ValueError("bottleneck and latent dimensions must be positive")

    @property
    def latent_dim(self):
        return len(self.latent_names)

    @property
    def dec_dense(self):
        return self.T // 4

    @classmethod
    def paper(cls, latent_names=LATENT_FULL, T=512):
        return cls(T=T, latent_names=latent_names)

    @classmethod
    def desk(cls, latent_names=LATENT_FULL, T=256):
        return cls(
            T=T,
            bottleneck_dim=32,
            latent_names=latent_names,
            channels=32,
            enc_kernels=(32, 16),
            enc_dense=64,
            reg_kernels=(32, 16, 16),
            reg_dense=(128, 64, 32),
            dec_kernel=16,
            profile="desk",
        )

    @classmethod
    def for_profile(cls, profile, partial=False, T=None):
        names = LATENT_PARTIAL if partial else LATENT_FULL
        make = {"paper": cls.paper, "desk": cls.desk}[profile]
        return make(names) if T is None else make(names, T=T)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrainConfig:
    beta: float = DEFAULT_BETA
    epochs: int = 3
    sets: int = 4
    samples_per_set: int = 5000
    batch: int = 64
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        for name in ("epochs", "sets", "samples_per_set", "batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @classmethod
    def paper(cls, **kw):
        return cls(epochs=17, sets=12, samples_per_set=100_000, **kw)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class LossReport:
    mse_reg: float
    mse_dec: float
    weighted: float


class UnifiedNet:
    def __init__(self, arch, encoder, regressor, decoder, history=None, train_config=None):
        self.arch = arch
        self.encoder = encoder
        self.regressor = regressor
        self.decoder = decoder
        self.concat = Concat()
        self.history = list(history or [])
        self.train_config = train_config

    @property
    def latent_names(self):
        return self.arch.latent_names

    @property
    def stacks(self):
        return (self.encoder, self.regressor, self.decoder)

    @property
    def params(self):
        return [p for s in self.stacks for p in s.params]

    @property
    def grads(self):
        return [g for s in self.stacks for g in s.grads]

    @property
    def dtype(self):
        return self.params[0].dtype

    def n_params(self):
        return sum(s.n_params() for s in self.stacks)

    def forward(self, x):
        """``x``: (B, T) normalized noisy series -> (signal (B, T), latents (B, d))."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.arch.T:
            raise ValueError(f"expected input of shape (batch, {self.arch.T}), got {x.shape}")
        z = self.encoder.forward(x)
        r = self.regressor.forward(z)
        signal = self.decoder.forward(self.concat.forward([z, r]))
        return signal, r

    def backward(self, d_signal, d_latent):
        dz_dec, dr_dec = self.concat.backward(self.decoder.backward(d_signal))
        dz_reg = self.regressor.backward(d_latent + dr_dec)
        self.encoder.backward(dz_dec + dz_reg)

    def loss_and_grads(self, x, signal_target, latent_target, beta):
        signal, latent = self.forward(x)
        report = weighted_loss(signal, latent, signal_target, latent_target, beta)
        d_signal = (1.0 - beta) * ndnet.mse_grad(signal, signal_target.astype(signal.dtype, copy=False))
        d_latent = beta * ndnet.mse_grad(latent, latent_target.astype(latent.dtype, copy=False))
        self.backward(d_signal.astype(self.dtype, copy=False), d_latent.astype(self.dtype, copy=False))
        return report

    def predict(self, x, batch=256):
        x = np.asarray(x)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[-1] != self.arch.T:
            raise ValueError(f"expected series of length {self.arch.T}, got {x.shape[-1]}")
        sig, lat = [], []
        for start in range(0, len(x), batch):
            s, r = self.forward(x[start:start + batch])
            sig.append(s)
            lat.append(r)
        sig = np.concatenate(sig)
        lat = np.concatenate(lat)
        return (sig[0], lat[0]) if single else (sig, lat)

    def evaluate(self, x, signal_target, latent_target, beta, batch=256):
        """Loss over a whole set, accumulated batch by batch."""
        n = len(x)
        se_dec = se_reg = 0.0
        for start in range(0, n, batch):
            s, r = self.forward(x[start:start + batch])
            ds = s.astype(np.float64) - signal_target[start:start + batch]
            dr = r.astype(np.float64) - latent_target[start:start + batch]
            se_dec += float(np.sum(ds * ds))
            se_reg += float(np.sum(dr * dr))
        mse_dec = se_dec / (n * self.arch.T)
        mse_reg = se_reg / (n * self.arch.latent_dim)
        return LossReport(mse_reg, mse_dec, beta * mse_reg + (1.0 - beta) * mse_dec)


def _encoder(a, rng, dtype):
    ch = a.channels
    flat = (a.T // 16) * ch
    return Sequential(
        [
            Reshape(a.T, 1),
            Conv1D(1, ch, a.enc_kernels[0], rng, dtype, input_grad=False),
            ReLU(),
            MaxPool1D(4),
            Conv1D(ch, ch, a.enc_kernels[1], rng, dtype),
            ReLU(),
            MaxPool1D(4),
            Flatten(),
            Dense(flat, a.enc_dense, rng, dtype),
            ReLU(),
            Dense(a.enc_dense, a.bottleneck_dim, rng, dtype),
            ReLU(),
        ]
    )


def _regressor(a, rng, dtype):
    ch = a.channels
    length = math.ceil(math.ceil(a.bottleneck_dim / 4) / 4)
    d1, d2, d3 = a.reg_dense
    k1, k2, k3 = a.reg_kernels
    return Sequential(
        [
            Reshape(a.bottleneck_dim, 1),
            Conv1D(1, ch, k1, rng, dtype),
            ReLU(),
            MaxPool1D(4),
            Conv1D(ch, ch, k2, rng, dtype),
            ReLU(),
            MaxPool1D(4),
            Conv1D(ch, ch, k3, rng, dtype),
            ReLU(),
            Flatten(),
            Dense(length * ch, d1, rng, dtype),
            ReLU(),
            Dense(d1, d2, rng, dtype),
            ReLU(),
            Dense(d2, d3, rng, dtype),
            ReLU(),
            Dense(d3, a.latent_dim, rng, dtype),
            Linear(),
        ]
    )


def _decoder(a, rng, dtype):
    ch, k = a.channels, a.dec_kernel
    return Sequential(
        [
            Dense(a.bottleneck_dim + a.latent_dim, a.dec_dense, rng, dtype),
            ReLU(),
            Reshape(a.dec_dense, 1),
            Conv1D(1, ch, k, rng, dtype),
            ReLU(),
            MaxPool1D(2),
            UpSample1D(4),
            Conv1D(ch, ch, k, rng, dtype),
            ReLU(),
            MaxPool1D(2),
            UpSample1D(4),
            Conv1D(ch, ch, k, rng, dtype),
            ReLU(),
            MaxPool1D(2),
            UpSample1D(2),
            Conv1D(ch, 1, k, rng, dtype),
            Sigmoid(),
            Reshape(a.T),
        ]
    )


def build_model(arch, rng=0, dtype=np.float32):
    """Fresh He-uniform initialized network; ``rng`` is a Generator or an int seed."""
    if not isinstance(rng, np.random.Generator):
        rng = make_stream(rng)
    enc = _encoder(arch, rng, dtype)
    reg = _regressor(arch, rng, dtype)
    dec = _decoder(arch, rng, dtype)
    if enc.output_shape((arch.T,)) != (arch.bottleneck_dim,):
        raise ValueError("encoder output does not match bottleneck_dim")
    if reg.output_shape((arch.bottleneck_dim,)) != (arch.latent_dim,):
        raise ValueError("regressor output does not match latent_dim")
    if dec.output_shape((arch.bottleneck_dim + arch.latent_dim,)) != (arch.T,):
        raise ValueError("decoder output does not match T")
    return UnifiedNet(arch, enc, reg, dec)


def weighted_loss(pred_signal, pred_latent, target_signal, target_latent, beta):
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    mse_dec = ndnet.mse(pred_signal, target_signal)
    mse_reg = ndnet.mse(pred_latent, target_latent)
    return LossReport(mse_reg, mse_dec, beta * mse_reg + (1.0 - beta) * mse_dec)


def balance_beta(mse_reg, mse_dec):
    """β solving ``β·mse_reg = (1-β)·mse_dec``."""
    total = mse_reg + mse_dec
    if total == 0.0:
        warnings.warn("both losses are zero; beta is undefined, using 0.5", stacklevel=2)
        return 0.5
    return mse_dec / total


def auto_beta(model, x, signal_target, latent_target):
    """β balancing the two losses of one forward pass over ``x`` (>= 32 samples)."""
    if len(x) < 32:
        raise ValueError("auto_beta needs a batch of at least 32 samples")
    signal, latent = model.forward(x)
    report = weighted_loss(signal, latent, signal_target, latent_target, 0.5)
    return balance_beta(report.mse_reg, report.mse_dec)


def predict(model, noisy_normalized):
    return model.predict(noisy_normalized)


@dataclass
class _Prepared:
    x: np.ndarray
    sig: np.ndarray
    lat: np.ndarray

    def take(self, idx):
        return self.x[idx], self.sig[idx], self.lat[idx]


def _prepare(ds, names, dtype):
    return _Prepared(ds.inputs(dtype), ds.signal_targets(dtype), ds.latent_targets(names, dtype))


def _split(n, fraction, rng):
    n_val = max(1, int(round(n * fraction))) if n > 1 else 0
    order = rng.permutation(n)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def train(model, datasets, cfg, checkpoint_dir=None, progress=None):
    """Mini-batch Adam over each dataset in turn, ``cfg.epochs`` passes per set.

    A held-out ``cfg.val_fraction`` of every set is scored after that set is
    done; entry 0 of the history scores the untrained network on the first
    set's held-out part. A non-finite loss restores the last good weights and
    raises TrainingError.
    """
    names = model.latent_names
    dtype = model.dtype
    opt = ndnet.Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    history = model.history
    last_good = [p.copy() for p in model.params]
    last_path = None

    for s, ds in enumerate(datasets, start=1):
        if ds.T != model.arch.T:
            raise ValueError(f"dataset length {ds.T} does not match model T={model.arch.T}")
        data = _prepare(ds, names, dtype)
        train_idx, val_idx = _split(len(ds), cfg.val_fraction, sub_stream(cfg.seed, 10_000 + s))
        val = data.take(val_idx) if len(val_idx) else data.take(train_idx[:256])
        if not history:
            report = model.evaluate(*val, cfg.beta)
            history.append(_entry(0, report))
        for epoch in range(cfg.epochs):
            order = train_idx[sub_stream(cfg.seed, 1000 * s + epoch).permutation(len(train_idx))]
            for start in range(0, len(order), cfg.batch):
                xb, sb, lb = data.take(order[start:start + cfg.batch])
                report = model.loss_and_grads(xb, sb, lb, cfg.beta)
                if not math.isfinite(report.weighted):
                    _restore(model, last_good)
                    raise TrainingError(
                        f"non-finite loss in set {s}, epoch {epoch + 1}", checkpoint=last_path
                    )
                try:
                    opt.step(model.grads)
                except ndnet.NonFiniteError as exc:
                    _restore(model, last_good)
                    raise TrainingError(str(exc), checkpoint=last_path) from exc
            if progress:
                progress(f"set {s} epoch {epoch + 1}/{cfg.epochs} last batch loss {report.weighted:.5g}")
        report = model.evaluate(*val, cfg.beta)
        history.append(_entry(s, report))
        log.info("set %d: mse_reg=%.5g mse_dec=%.5g", s, report.mse_reg, report.mse_dec)
        if progress:
            progress(f"set {s} validation mse_reg={report.mse_reg:.5g} mse_dec={report.mse_dec:.5g}")
        last_good = [p.copy() for p in model.params]
        model.train_config = cfg
        if checkpoint_dir is not None:
            last_path = save_model(checkpoint_dir / f"set{s:02d}.ndn", model)
    model.train_config = cfg
    return model, history


def _entry(index, report):
    return {
        "set_index": index,
        "mse_reg": report.mse_reg,
        "mse_dec": report.mse_dec,
        "weighted": report.weighted,
    }


def _restore(model, values):
    for p, v in zip(model.params, values):
        p[...] = v


def save_model(path, model):
    layers = [layer for s in model.stacks for layer in s]
    meta = {
        "arch": model.arch.to_dict(),
        "stacks": [len(s) for s in model.stacks],
        "history": model.history,
        "train": model.train_config.to_dict() if model.train_config else None,
    }
    return ndnet.save_layers(path, layers, meta)


def load_model(path):
    layers, meta = ndnet.load_layers(path)
    if "arch" not in meta or "stacks" not in meta:
        raise ndnet.CheckpointError(f"{path}: not a model checkpoint (missing arch metadata)")
    arch = ArchConfig.from_dict(meta["arch"])
    n_enc, n_reg, n_dec = meta["stacks"]
    if n_enc + n_reg + n_dec != len(layers):
        raise ndnet.CheckpointError(f"{path}: stack sizes do not add up to the layer count")
    enc = Sequential(layers[:n_enc])
    reg = Sequential(layers[n_enc:n_enc + n_reg])
    dec = Sequential(layers[n_enc + n_reg:])
    tc = TrainConfig(**meta["train"]) if meta.get("train") else None
    return UnifiedNet(arch, enc, reg, dec, history=meta.get("history"), train_config=tc)

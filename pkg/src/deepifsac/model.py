"""Joint between-feature / between-sample attention imputer with CutMix and InfoNCE.

Shapes through the network for a batch of ``b`` rows and ``n`` features::

    (b, n) -> tokenizer -> (b, n, d)
           -> [feature block over n] -> (b, n, d)
           -> reshape (1, b, n*d) -> [sample block over b] -> (b, n, d)   x layers
           -> per-feature heads -> (b, n)

``mode="feature"`` drops the sample blocks, ``mode="sample"`` drops the
feature blocks.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .augmentation import cutmix
from .autodiff import Adam, Module, Parameter, ShapeError, Tensor
from .preprocessing import FeatureStats, fit_stats, median_initialize
from .rng import derive_rng

MODES = ("feature", "sample", "joint")


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 32
    heads: int = 8
    layers: int = 6
    dropout: float = 0.1
    p_cutmix: float = 0.3
    tau: float = 0.7
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    batch_size: int = 128
    epochs: int = 1000
    mode: str = "joint"
    lambda_contrastive: float = 1.0
    seed: int = 0
    ff_mult: int = 4
    proj_hidden: int = 256
    proj_dim: int = 128
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dim % self.heads:
            raise ValueError(f"embedding width {self.dim} is not divisible by {self.heads} heads")
        for name in ("dim", "heads", "layers", "batch_size", "ff_mult", "proj_hidden", "proj_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 <= self.p_cutmix < 1.0:
            raise ValueError("p_cutmix must lie in [0, 1)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.lambda_contrastive < 0:
            raise ValueError("lambda_contrastive must be non-negative")

    @property
    def uses_feature_attention(self) -> bool:
        return self.mode in ("feature", "joint")

    @property
    def uses_sample_attention(self) -> bool:
        return self.mode in ("sample", "joint")

    @property
    def uses_contrastive(self) -> bool:
        return self.lambda_contrastive > 0

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValueError(f"unknown model config key(s): {unknown}")
        return cls(**values)


def _xavier(rng, fan_in, fan_out, shape=None):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape if shape is not None else (fan_in, fan_out))


def _affine_norm(x, gain, bias):
    return ad.layer_norm(x) * gain + bias


class FeatureTokenizer(Module):
    """Lift each scalar ``x_ij`` to ``W_j * x_ij + B_j`` in R^d."""

    def __init__(self, n_features: int, dim: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(dim)
        self.weight = Parameter(rng.uniform(-bound, bound, (n_features, dim)))
        self.bias = Parameter(rng.uniform(-bound, bound, (n_features, dim)))

    def __call__(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        n = self.weight.shape[0]
        if x.ndim != 2 or x.shape[1] != n:
            raise ShapeError(f"tokenizer: expected (b, {n}) input, got {x.shape}")
        return ad.reshape(x, (x.shape[0], n, 1)) * self.weight + self.bias


class AttentionBlock(Module):
    """Pre-norm transformer layer attending over the second-to-last axis."""

    def __init__(self, width: int, heads: int, dropout: float, rng: np.random.Generator, ff_mult: int = 4):
        if width % heads:
            raise ValueError(f"width {width} not divisible by {heads} heads")
        head_width = width // heads
        self.width, self.n_heads, self.rate = width, heads, dropout
        self.scale = 1.0 / math.sqrt(head_width)
        self.query = [Parameter(_xavier(rng, width, head_width)) for _ in range(heads)]
        self.key = [Parameter(_xavier(rng, width, head_width)) for _ in range(heads)]
        self.value = [Parameter(_xavier(rng, width, head_width)) for _ in range(heads)]
        self.out = Parameter(_xavier(rng, width, width))
        self.norm1_gain = Parameter(np.ones(width))
        self.norm1_bias = Parameter(np.zeros(width))
        self.norm2_gain = Parameter(np.ones(width))
        self.norm2_bias = Parameter(np.zeros(width))
        hidden = ff_mult * width
        self.ff_in = Parameter(_xavier(rng, width, hidden))
        self.ff_in_bias = Parameter(np.zeros(hidden))
        self.ff_out = Parameter(_xavier(rng, hidden, width))
        self.ff_out_bias = Parameter(np.zeros(width))
        self._maps: list | None = None

    def attend(self, h: Tensor, train: bool = False, rng=None) -> Tensor:
        heads = []
        for wq, wk, wv in zip(self.query, self.key, self.value):
            q, k, v = h @ wq, h @ wk, h @ wv
            weights = ad.softmax((q @ ad.transpose(k)) * self.scale)
            if self._maps is not None:
                self._maps.append(weights.data.copy())
            heads.append(ad.dropout(weights, self.rate, train, rng) @ v)
        return ad.concat(heads, axis=-1) @ self.out

    def __call__(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        if x.shape[-1] != self.width:
            raise ShapeError(f"attention block: expected width {self.width}, got shape {x.shape}")
        x = x + self.attend(_affine_norm(x, self.norm1_gain, self.norm1_bias), train, rng)
        h = _affine_norm(x, self.norm2_gain, self.norm2_bias)
        f = ad.relu(h @ self.ff_in + self.ff_in_bias) @ self.ff_out + self.ff_out_bias
        return x + ad.dropout(f, self.rate, train, rng)


class IntersampleBlock(Module):
    """Attention across the rows of a batch, each row flattened to one n*d token."""

    def __init__(self, n_features: int, dim: int, heads: int, dropout: float, rng: np.random.Generator,
                 ff_mult: int = 4):
        width = n_features * dim
        inner = (width // heads) * heads
        if inner == 0:
            raise ValueError(f"n*d = {width} is smaller than the head count {heads}")
        self.n_features, self.dim = n_features, dim
        self.proj_in = self.proj_out = None
        if inner != width:
            self.proj_in = Parameter(_xavier(rng, width, inner))
            self.proj_out = Parameter(_xavier(rng, inner, width))
        self.block = AttentionBlock(inner, heads, dropout, rng, ff_mult)

    def __call__(self, g: Tensor, train: bool = False, rng=None) -> Tensor:
        b, n, d = g.shape
        s = ad.reshape(g, (1, b, n * d))
        if self.proj_in is not None:
            s = s @ self.proj_in
        s = self.block(s, train, rng)
        if self.proj_out is not None:
            s = s @ self.proj_out
        return ad.reshape(s, (b, n, d))


class ReconstructionHeads(Module):
    """One d -> d -> 1 ReLU MLP per feature, evaluated as a batched matmul."""

    def __init__(self, n_features: int, dim: int, rng: np.random.Generator):
        self.w1 = Parameter(_xavier(rng, dim, dim, (n_features, dim, dim)))
        self.b1 = Parameter(np.zeros((n_features, 1, dim)))
        self.w2 = Parameter(_xavier(rng, dim, 1, (n_features, dim, 1)))
        self.b2 = Parameter(np.zeros((n_features, 1, 1)))

    def __call__(self, s: Tensor) -> Tensor:
        b, n, _ = s.shape
        h = ad.permute(s, (1, 0, 2))
        h = ad.relu(ad.matmul(h, self.w1) + self.b1)
        out = ad.matmul(h, self.w2) + self.b2
        return ad.transpose(ad.reshape(out, (n, b)))


class ProjectionHead(Module):
    def __init__(self, width: int, hidden: int, out: int, rng: np.random.Generator):
        self.w1 = Parameter(_xavier(rng, width, hidden))
        self.b1 = Parameter(np.zeros(hidden))
        self.w2 = Parameter(_xavier(rng, hidden, out))
        self.b2 = Parameter(np.zeros(out))

    def __call__(self, s: Tensor) -> Tensor:
        flat = ad.reshape(s, (s.shape[0], math.prod(s.shape[1:]))) if s.ndim > 2 else s
        h = ad.relu(flat @ self.w1 + self.b1)
        return ad.l2_normalize(h @ self.w2 + self.b2)


class DeepIFSACNet(Module):
    def __init__(self, n_features: int, config: ModelConfig):
        if n_features < 1:
            raise ValueError("need at least one feature")
        rng = derive_rng(config.seed, "init")
        c = config
        self.n_features = n_features
        self.config = c
        self.tokenizer = FeatureTokenizer(n_features, c.dim, rng)
        self.feature_blocks = [AttentionBlock(c.dim, c.heads, c.dropout, rng, c.ff_mult)
                               for _ in range(c.layers)] if c.uses_feature_attention else []
        self.sample_blocks = [IntersampleBlock(n_features, c.dim, c.heads, c.dropout, rng, c.ff_mult)
                              for _ in range(c.layers)] if c.uses_sample_attention else []
        self.heads = ReconstructionHeads(n_features, c.dim, rng)
        self.project_clean = self.project_corrupted = None
        if c.uses_contrastive:
            width = n_features * c.dim
            self.project_clean = ProjectionHead(width, c.proj_hidden, c.proj_dim, rng)
            self.project_corrupted = ProjectionHead(width, c.proj_hidden, c.proj_dim, rng)

    def embed(self, x) -> Tensor:
        return self.tokenizer(x)

    def encode(self, x, train: bool = False, rng=None) -> Tensor:
        h = self.tokenizer(x)
        for layer in range(self.config.layers):
            if self.feature_blocks:
                h = self.feature_blocks[layer](h, train, rng)
            if self.sample_blocks:
                h = self.sample_blocks[layer](h, train, rng)
        return h

    def forward(self, x, train: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        emb = self.encode(x, train, rng)
        return self.heads(emb), emb

    __call__ = forward

    def attention_maps(self, x) -> dict[str, list[np.ndarray]]:
        """Eval-mode attention weights per block type, one array per head and block."""
        blocks = {"feature": self.feature_blocks, "sample": [blk.block for blk in self.sample_blocks]}
        for group in blocks.values():
            for blk in group:
                blk._maps = []
        try:
            self.encode(x)
            return {kind: [m for blk in group for m in blk._maps] for kind, group in blocks.items()}
        finally:
            for group in blocks.values():
                for blk in group:
                    blk._maps = None


# --------------------------------------------------------------------- losses

def reconstruction_loss(xhat, x, mask) -> Tensor:
    """Sum over features of the per-feature masked MSE, each normalised by batch size."""
    mask = np.asarray(mask, dtype=np.float64)
    target = np.where(mask == 1, np.asarray(x, dtype=np.float64), 0.0)
    if xhat.shape != target.shape:
        raise ShapeError(f"reconstruction_loss: shapes {xhat.shape} and {target.shape} differ")
    b = target.shape[0]
    return ad.sum(ad.square((xhat - target) * mask)) / float(b)


def contrastive_loss(z, z_tilde, tau: float) -> Tensor:
    """InfoNCE over cosine similarities with the corrupted-view rows as the candidate set."""
    z = z if isinstance(z, Tensor) else Tensor(z)
    z_tilde = z_tilde if isinstance(z_tilde, Tensor) else Tensor(z_tilde)
    if z.shape != z_tilde.shape or z.ndim != 2:
        raise ShapeError(f"contrastive_loss: shapes {z.shape} and {z_tilde.shape} must be equal (b, k)")
    sims = ad.l2_normalize(z) @ ad.transpose(ad.l2_normalize(z_tilde))
    logp = ad.log_softmax(sims / tau, axis=-1)
    return -ad.sum(logp * np.eye(z.shape[0]))


# ------------------------------------------------------------------- training

@dataclass
class BatchLoss:
    total: Tensor
    recon: float
    contrastive: float


def batch_loss(net: DeepIFSACNet, xb: np.ndarray, mb: np.ndarray, config: ModelConfig,
               cutmix_rng, clean_rng, corrupted_rng, train: bool = True) -> BatchLoss:
    """Loss for one batch: CutMix, reconstruct from the corrupted path, contrast with the clean one."""
    corrupted, _ = cutmix(xb, config.p_cutmix, rng=cutmix_rng)
    emb_corrupted = net.encode(corrupted, train, corrupted_rng)
    recon = reconstruction_loss(net.heads(emb_corrupted), xb, mb)
    if not config.uses_contrastive:
        return BatchLoss(recon, recon.item(), 0.0)
    emb_clean = net.encode(xb, train, clean_rng)
    con = contrastive_loss(net.project_clean(emb_clean), net.project_corrupted(emb_corrupted), config.tau)
    total = recon + con * config.lambda_contrastive
    return BatchLoss(total, recon.item(), con.item())


def batch_rngs(seed: int, epoch: int, index: int):
    return (derive_rng(seed, "cutmix", epoch, index),
            derive_rng(seed, "dropout", epoch, index, "clean"),
            derive_rng(seed, "dropout", epoch, index, "corrupted"))


def _batches(count: int, size: int):
    return [slice(start, min(start + size, count)) for start in range(0, count, size)]


@dataclass
class TrainedImputer:
    config: ModelConfig
    n_features: int
    state: dict[str, np.ndarray]
    stats: FeatureStats | None = None
    history: list[dict] = field(default_factory=list)
    final_eval_recon: float = float("nan")
    _net: DeepIFSACNet | None = field(default=None, repr=False, compare=False)

    def network(self) -> DeepIFSACNet:
        if self._net is None:
            net = DeepIFSACNet(self.n_features, self.config)
            net.load_state_dict(self.state)
            self._net = net
        return self._net

    def reconstruct(self, values: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        """Eval-mode reconstruction of standardized, median-initialized rows, in stored order."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.n_features:
            raise ShapeError(f"imputer trained on {self.n_features} features, got input of shape {values.shape}")
        net = self.network()
        out = np.empty_like(values)
        for sl in _batches(values.shape[0], self.config.batch_size):
            out[sl] = net.forward(values[sl])[0].data
        return out

    def impute(self, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
        xhat = self.reconstruct(values, mask)
        return np.where(np.asarray(mask) == 1, values, xhat)

    def transform(self, data) -> np.ndarray:
        """Impute raw-unit data: standardize, median-fill, impute, map back to raw units."""
        if self.stats is None:
            raise ValueError("imputer carries no feature statistics")
        z = median_initialize(self.stats.to_standard(data.values), data.mask, self.stats.medians)
        imputed = self.stats.to_raw(self.impute(z, data.mask))
        return np.where(data.mask == 1, data.values, imputed)


def eval_reconstruction_loss(net: DeepIFSACNet, values: np.ndarray, mask: np.ndarray, batch_size: int) -> float:
    total = 0.0
    for sl in _batches(values.shape[0], batch_size):
        xhat = net.forward(values[sl])[0]
        total += reconstruction_loss(xhat, values[sl], mask[sl]).item() * (sl.stop - sl.start)
    return total / values.shape[0]


def train(values: np.ndarray, mask: np.ndarray, config: ModelConfig, stats: FeatureStats | None = None,
          progress=None) -> TrainedImputer:
    """Fit the imputer on standardized, median-initialized training rows.

    ``progress``, if given, is called as ``progress(epoch, record)`` after
    every epoch.
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.uint8)
    if not np.isfinite(values).all():
        raise ValueError("training values must be finite (median-initialize missing cells first)")
    count, n = values.shape
    net = DeepIFSACNet(n, config)
    net.zero_grad()
    opt = Adam(net.parameters(), lr=config.lr, betas=(config.beta1, config.beta2), eps=config.adam_eps,
               weight_decay=config.weight_decay)
    history = []
    slices = _batches(count, config.batch_size)
    for epoch in range(config.epochs):
        order = derive_rng(config.seed, "shuffle", epoch).permutation(count)
        sums = {"loss": 0.0, "recon": 0.0, "contrastive": 0.0}
        for index, sl in enumerate(slices):
            rows = order[sl]
            out = batch_loss(net, values[rows], mask[rows], config, *batch_rngs(config.seed, epoch, index))
            loss = out.total.item()
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {index}: "
                    f"total={loss}, recon={out.recon}, contrastive={out.contrastive}")
            ad.backward(out.total)
            opt.step()
            sums["loss"] += loss
            sums["recon"] += out.recon
            sums["contrastive"] += out.contrastive
        record = {"epoch": epoch, **{k: v / len(slices) for k, v in sums.items()}}
        history.append(record)
        if progress is not None:
            progress(epoch, record)
    final = eval_reconstruction_loss(net, values, mask, config.batch_size) if count else float("nan")
    return TrainedImputer(config, n, net.state_dict(), stats, history, final)


def impute(imputer: TrainedImputer, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return imputer.impute(values, mask)


def fit_imputer(data, config: ModelConfig, progress=None) -> TrainedImputer:
    """Standardize and median-initialize raw data with its own statistics, then train."""
    stats = fit_stats(data.values, data.mask)
    z = median_initialize(stats.to_standard(data.values), data.mask, stats.medians)
    return train(z, data.mask, config, stats, progress)


# ----------------------------------------------------------------- checkpoint

_FORMAT = "deepifsac-checkpoint/1"


def save_checkpoint(path, imputer: TrainedImputer) -> None:
    """Write config, parameters, statistics and history to one ``.npz`` archive (atomically)."""
    arrays = {
        "format": np.array(_FORMAT),
        "config_json": np.array(json.dumps(imputer.config.to_dict(), sort_keys=True)),
        "n_features": np.array(imputer.n_features),
        "history_json": np.array(json.dumps(imputer.history)),
        "final_eval_recon": np.array(imputer.final_eval_recon),
    }
    names = sorted(imputer.state)
    arrays["param_names_json"] = np.array(json.dumps(names))
    for i, name in enumerate(names):
        arrays[f"param_{i}"] = imputer.state[name]
    if imputer.stats is not None:
        arrays["stats_means"] = imputer.stats.means
        arrays["stats_stds"] = imputer.stats.stds
        arrays["stats_medians"] = imputer.stats.medians
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz")
    os.close(fd)
    try:
        np.savez(tmp, **arrays)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_checkpoint(path) -> TrainedImputer:
    with np.load(path, allow_pickle=False) as z:
        if str(z["format"]) != _FORMAT:
            raise ValueError(f"{path}: not a {_FORMAT} file")
        config = ModelConfig.from_dict(json.loads(str(z["config_json"])))
        names = json.loads(str(z["param_names_json"]))
        state = {name: z[f"param_{i}"].copy() for i, name in enumerate(names)}
        stats = None
        if "stats_means" in z.files:
            stats = FeatureStats(z["stats_means"].copy(), z["stats_stds"].copy(), z["stats_medians"].copy())
        return TrainedImputer(config, int(z["n_features"]), state, stats,
                              json.loads(str(z["history_json"])), float(z["final_eval_recon"]))

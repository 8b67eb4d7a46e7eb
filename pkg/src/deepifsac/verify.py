"""Self-checks behind ``deepifsac verify``: gradients, mask rates, loss identities."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .missingness import BENCHMARK_RATES, KINDS, MissingnessSpec, generate_mask
from .model import DeepIFSACNet, ModelConfig, batch_loss, batch_rngs, contrastive_loss, reconstruction_loss
from .rng import derive_rng


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|); entries where both are below ``floor`` count as exact."""
    a, n = np.abs(analytic), np.abs(numeric)
    scale = np.maximum(a, n)
    err = np.abs(analytic - numeric) / np.where(scale > floor, scale, 1.0)
    return np.where(scale > floor, err, 0.0)


def op_gradient_check(seed: int = 0, tol: float = 1e-4) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((4, 4))
    shapes = {
        "matmul": lambda x: ad.sum(ad.square(x @ w)),
        "softmax": lambda x: ad.sum(ad.softmax(x) * w),
        "log_softmax": lambda x: ad.sum(ad.log_softmax(x) * w),
        "layer_norm": lambda x: ad.sum(ad.layer_norm(x) * w),
        "l2_normalize": lambda x: ad.sum(ad.l2_normalize(x) * w),
        "exp/log/sqrt": lambda x: ad.sum(ad.log(ad.exp(x) + 1.0) + ad.sqrt(ad.square(x) + 1.0)),
        "relu": lambda x: ad.sum(ad.relu(x) * w),
        "mean/div": lambda x: ad.mean(x / (ad.square(x) + 2.0), axis=0).sum(),
        "reshape/transpose/concat": lambda x: ad.sum(
            ad.concat([ad.transpose(x), ad.reshape(ad.reshape(x, (2, 8)), (4, 4))], axis=0) * np.vstack([w, w.T])),
    }
    out = []
    for name, f in shapes.items():
        x = ad.Parameter(rng.standard_normal((4, 4)) + 0.1)
        loss = f(x)
        x.grad = None
        ad.backward(loss)
        numeric = ad.numerical_grad(lambda: f(ad.Tensor(x.data)).item(), x.data)
        worst = float(relative_errors(x.grad, numeric).max())
        out.append(CheckResult(f"grad:{name}", worst < tol, f"max rel err {worst:.2e}"))
    return out


def tiny_model_setup(seed: int = 0):
    config = ModelConfig(dim=4, heads=2, layers=1, dropout=0.0, batch_size=4, epochs=1, seed=seed,
                         proj_hidden=8, proj_dim=4)
    rng = derive_rng(seed, "verify", "data")
    x = rng.standard_normal((4, 3))
    m = (rng.random((4, 3)) > 0.25).astype(np.uint8)
    return DeepIFSACNet(3, config), x, m, config


def model_loss_fn(net, x, m, config):
    def loss():
        return batch_loss(net, x, m, config, *batch_rngs(config.seed, 0, 0)).total
    return loss


def model_gradient_check(seed: int = 0, tol: float = 1e-3, required: float = 0.99) -> CheckResult:
    net, x, m, config = tiny_model_setup(seed)
    loss = model_loss_fn(net, x, m, config)
    net.zero_grad()
    ad.backward(loss())
    errors = []
    for _, p in net.named_parameters():
        numeric = ad.numerical_grad(lambda: loss().item(), p.data)
        errors.append(relative_errors(p.grad, numeric).reshape(-1))
    errors = np.concatenate(errors)
    frac = float((errors < tol).mean())
    return CheckResult("grad:full-model", frac >= required,
                       f"{frac:.2%} of {errors.size} parameters within rel err {tol:g}")


def loss_identity_checks() -> list[CheckResult]:
    z = ad.Tensor(np.array([[0.6, 0.8]]))
    single = contrastive_loss(z, z, 0.7).item()
    e = np.eye(2)
    pair = contrastive_loss(e, e, 1.0).item()
    expected = -2.0 * math.log(math.e / (math.e + 1.0))
    xhat = ad.Tensor(np.array([[1.0, 50.0], [3.0, -7.0]]))
    x = np.array([[1.0, 0.0], [1.0, 0.0]])
    mask = np.array([[1, 0], [1, 0]])
    recon = reconstruction_loss(xhat, x, mask).item()
    return [
        CheckResult("loss:contrastive b=1", single == 0.0, f"value {single!r}"),
        CheckResult("loss:contrastive b=2 orthogonal", abs(pair - expected) < 1e-9, f"{pair:.12f} vs {expected:.12f}"),
        CheckResult("loss:reconstruction masking", recon == 2.0, f"value {recon!r} (expected 4/2)"),
    ]


def mask_rate_checks(rows: int = 500, features: int = 20, tol: float = 0.015) -> list[CheckResult]:
    data = derive_rng(0, "verify", "mask-data").standard_normal((rows, features))
    out = []
    for kind in KINDS:
        worst = 0.0
        for rate in BENCHMARK_RATES:
            mask = generate_mask(data, MissingnessSpec(kind, rate, seed=1))
            worst = max(worst, abs((1.0 - mask.mean()) - rate))
        out.append(CheckResult(f"mask:{kind} rate", worst <= tol, f"worst |realized - target| {worst:.4f}"))
    mask = generate_mask(data, MissingnessSpec("MNAR", 0.3, seed=1))
    shift = min(data[mask[:, j] == 0, j].mean() - data[mask[:, j] == 1, j].mean() for j in range(features))
    out.append(CheckResult("mask:MNAR-high mean shift", shift > 0, f"smallest column shift {shift:.3f}"))
    mask = generate_mask(data, MissingnessSpec("MCAR", 0.3, seed=1))
    r = float(np.corrcoef((mask == 0).reshape(-1), data.reshape(-1))[0, 1])
    out.append(CheckResult("mask:MCAR independence", abs(r) < 0.05, f"corr {r:.4f}"))
    return out


def run_checks(quick: bool = False) -> list[CheckResult]:
    results = op_gradient_check() + loss_identity_checks() + [model_gradient_check()]
    if not quick:
        results += mask_rate_checks()
    return results

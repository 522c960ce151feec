"""Self-checks run by ``clmex verify``: gradient checks and loss-oracle agreement.

Each check returns a `CheckResult`; nothing here raises on a failed check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .losses import clmex_loss, cross_entropy, simclr_loss, supcon_loss
from .tensor import (
    CosineSchedule,
    PlateauSchedule,
    Tensor,
    check_gradients,
    conv2d,
    dense,
    exp,
    global_average_pool,
    l2_normalize_rows,
    log_sum_exp_rows,
    matmul,
    mul,
    relu,
    scalar_mean,
    tsum,
)
from .testing.oracles import brute_force_contrastive_oracle, brute_force_cross_entropy

GRAD_TOLERANCE = 1e-4
ORACLE_TOLERANCE = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _param(rng, *shape):
    x = rng.normal(size=shape)
    # keep relu kinks away from the finite-difference stencil
    x = np.where(np.abs(x) < 0.05, 0.1 * np.sign(x) + 0.05, x)
    return Tensor(x, requires_grad=True)


def _op_graphs(rng) -> dict[str, tuple[list[Tensor], Callable[[], Tensor]]]:
    """Every differentiable op inside a scalar graph with a random linear read-out."""
    graphs = {}
    a, b = _param(rng, 3, 4), _param(rng, 4, 2)
    w = rng.normal(size=(3, 2))
    graphs["matmul"] = ([a, b], lambda: tsum(mul(matmul(a, b), w)))
    x, W, bias = _param(rng, 5, 3), _param(rng, 3, 4), _param(rng, 4)
    w2 = rng.normal(size=(5, 4))
    graphs["dense"] = ([x, W, bias], lambda: tsum(mul(dense(x, W, bias), w2)))
    img, k, kb = _param(rng, 2, 3, 6, 5), _param(rng, 4, 3, 3, 3), _param(rng, 4)
    w3 = rng.normal(size=(2, 4, 3, 3))
    graphs["conv2d"] = ([img, k, kb], lambda: tsum(mul(conv2d(img, k, stride=2, padding=1, bias=kb), w3)))
    r = _param(rng, 4, 5)
    w4 = rng.normal(size=(4, 5))
    graphs["relu"] = ([r], lambda: tsum(mul(relu(r), w4)))
    g = _param(rng, 2, 3, 4, 4)
    w5 = rng.normal(size=(2, 3))
    graphs["global_average_pool"] = ([g], lambda: tsum(mul(global_average_pool(g), w5)))
    n = _param(rng, 4, 3)
    w6 = rng.normal(size=(4, 3))
    graphs["l2_normalize_rows"] = ([n], lambda: tsum(mul(l2_normalize_rows(n), w6)))
    s = _param(rng, 4, 5)
    w7 = rng.normal(size=4)
    mask = (rng.random((4, 5)) > 0.3) | np.eye(4, 5, dtype=bool)
    graphs["log_sum_exp_rows"] = ([s], lambda: tsum(mul(log_sum_exp_rows(s, mask), w7)))
    m = _param(rng, 3, 3)
    w8 = rng.normal(size=(3, 3))
    graphs["scalar_mean"] = ([m], lambda: scalar_mean(mul(m, w8)))
    e = _param(rng, 3, 2)
    graphs["exp"] = ([e], lambda: tsum(exp(e)))
    z = Tensor(rng.normal(size=(8, 4)), requires_grad=True)
    ids = np.array([0, 0, 1, 1, 0, 0, 2, 2])
    graphs["clmex_loss"] = ([z], lambda: clmex_loss(l2_normalize_rows(z), ids, 0.1))
    logits = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    labels = rng.integers(0, 3, size=5)
    graphs["cross_entropy"] = ([logits], lambda: cross_entropy(logits, labels))
    return graphs


def gradient_checks(seed: int = 0) -> list[CheckResult]:
    out = []
    for name, (params, fn) in _op_graphs(np.random.default_rng(seed)).items():
        errors = check_gradients(fn, params)
        worst = max(errors)
        out.append(CheckResult(f"grad/{name}", worst < GRAD_TOLERANCE, f"max relative error {worst:.2e}"))
    return out


def _unit_rows(rng, n, d):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def oracle_checks(seed: int = 0, batches: int = 100) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = {"clmex": 0.0, "simclr": 0.0, "supcon": 0.0, "cross_entropy": 0.0}
    for _ in range(batches):
        n_orig = int(rng.integers(1, 17))
        z = _unit_rows(rng, 2 * n_orig, int(rng.integers(2, 9)))
        tau = float(rng.uniform(0.05, 2.0))
        groups = np.repeat(rng.integers(0, int(rng.integers(1, 6)), size=n_orig), 2)
        singles = np.repeat(np.arange(n_orig), 2)
        labels = np.repeat(rng.integers(0, 3, size=n_orig), 2)
        worst["clmex"] = max(worst["clmex"], abs(clmex_loss(z, groups, tau).item()
                                                 - brute_force_contrastive_oracle(z, groups, tau)))
        worst["simclr"] = max(worst["simclr"], abs(simclr_loss(z, singles, tau).item()
                                                   - brute_force_contrastive_oracle(z, singles, tau)))
        worst["supcon"] = max(worst["supcon"], abs(supcon_loss(z, labels, tau).item()
                                                   - brute_force_contrastive_oracle(z, labels, tau)))
        logits = rng.normal(size=(2 * n_orig, 4)) * 3
        y = rng.integers(0, 4, size=2 * n_orig)
        worst["cross_entropy"] = max(worst["cross_entropy"],
                                     abs(cross_entropy(logits, y).item() - brute_force_cross_entropy(logits, y)))
    return [CheckResult(f"oracle/{k}", v <= ORACLE_TOLERANCE, f"max abs difference {v:.1e} over {batches} batches")
            for k, v in worst.items()]


def identity_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    z2 = _unit_rows(rng, 2, 4)
    out.append(CheckResult("closed_form/single_pair", clmex_loss(z2, [0, 0], 0.1).item() == 0.0, "2N=2 gives 0"))
    diffs = []
    for n2 in (2, 4, 8, 16, 32):
        z = np.tile(_unit_rows(rng, 1, 3), (n2, 1))
        ids = np.repeat(rng.integers(0, 3, size=n2 // 2), 2)
        diffs.append(abs(clmex_loss(z, ids, 0.1).item() - n2 * math.log(n2 - 1)))
    out.append(CheckResult("closed_form/collapsed", max(diffs) <= ORACLE_TOLERANCE, f"max difference {max(diffs):.1e}"))
    d_simclr = d_supcon = 0.0
    for _ in range(50):
        n_orig = int(rng.integers(1, 12))
        z = _unit_rows(rng, 2 * n_orig, 5)
        tau = float(rng.uniform(0.05, 1.0))
        ids = np.repeat(rng.permutation(1000)[:n_orig], 2)
        d_simclr = max(d_simclr, abs(simclr_loss(z, ids, tau).item() - clmex_loss(z, ids, tau).item()))
        labels = np.repeat(rng.integers(0, 3, size=n_orig), 2)
        d_supcon = max(d_supcon, abs(supcon_loss(z, labels, tau).item() - clmex_loss(z, labels, tau).item()))
    out.append(CheckResult("identity/clmex_singletons_eq_simclr", d_simclr <= ORACLE_TOLERANCE, f"{d_simclr:.1e}"))
    out.append(CheckResult("identity/clmex_labels_eq_supcon", d_supcon <= ORACLE_TOLERANCE, f"{d_supcon:.1e}"))
    return out


def schedule_checks() -> list[CheckResult]:
    cos = CosineSchedule(1e-4, 1000)
    ok = cos.lr_at(0) == 1e-4 and cos.lr_at(1000) == 0.0 and cos.lr_at(500) == 0.5e-4
    plateau = PlateauSchedule(1e-4, 0.5, 3)
    lrs = [plateau.observe(1.0) for _ in range(4)]
    return [
        CheckResult("schedule/cosine_endpoints", ok, "lr(0)=base, lr(T/2)=base/2, lr(T)=0"),
        CheckResult("schedule/plateau_patience", lrs == [1e-4, 1e-4, 1e-4, 5e-5], f"lrs {lrs}"),
    ]


def run_all(seed: int = 0) -> list[CheckResult]:
    return gradient_checks(seed) + oracle_checks(seed) + identity_checks(seed) + schedule_checks()

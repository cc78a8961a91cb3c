"""
Self-check battery behind ``fedmr verify``.

Each check returns a :class:`CheckResult`; a check that raises is recorded as
failed with the exception text, so one broken property never hides the rest.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from fedmr import autodiff as ad
from fedmr.analysis import (
    TheoremSimConfig,
    angle_between,
    motivation_weights,
    random_theorem_configs,
    theorem1_simulate,
)
from fedmr.autodiff import Tensor
from fedmr.eigen import sym_eigenvalues
from fedmr.errors import FedMRError
from fedmr.federation import communication_overhead
from fedmr.losses import (
    STD_FLOOR,
    LossConfig,
    class_covariances,
    inter_loss,
    intra_loss,
    lemma1_residual,
    local_prototypes,
    total_loss,
)
from fedmr.model import Layout, MlpSpec, init_params

GRAD_TOL = 1e-5


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def numeric_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, g = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fn(x)
        flat[i] = old - h
        down = fn(x)
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return grad


def gradient_error(build: Callable[[Tensor], Tensor], x: np.ndarray, h: float = 1e-6) -> float:
    """Relative error ``||g_ad − g_fd|| / max(||g_ad||, ||g_fd||)`` of a scalar graph."""
    t = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    ad.backward(build(t))
    analytic = t.grad
    numeric = numeric_gradient(lambda v: build(Tensor(v)).item(), x, h)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-300)
    return float(np.linalg.norm(analytic - numeric) / scale)


# ------------------------------------------------------------------- checks


def check_lemma1(trials: int = 200, seed: int = 0, eps: float = STD_FLOOR) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n, d = int(rng.integers(5, 65)), int(rng.integers(2, 17))
        z = rng.normal(size=(n, d)) @ rng.normal(size=(d, d))
        m = class_covariances(z, np.zeros(n, dtype=int), eps=eps)[0].data
        worst = max(worst, lemma1_residual(m) / d)
    return CheckResult("lemma1-identity", worst <= 1e-9, f"max residual/d = {worst:.2e} over {trials} batches")


def check_degenerate_batch(eps: float = STD_FLOOR, seed: int = 1) -> CheckResult:
    """A dead feature column must leave the covariance finite and the spectrum identity intact."""
    rng = np.random.default_rng(seed)
    z = np.abs(rng.normal(size=(16, 4)))
    z[:, 2] = 0.0
    try:
        m = class_covariances(z, np.zeros(16, dtype=int), eps=eps)[0].data
        intra_loss(z, np.zeros(16, dtype=int), eps=eps)
    except FedMRError as exc:
        return CheckResult("lemma1-degenerate-batch", False, f"{type(exc).__name__}: {exc}")
    lam = sym_eigenvalues(m)
    d = m.shape[0]
    # trace falls below d once a column is zeroed, so use the trace-aware form
    residual = abs(np.sum((lam - lam.mean()) ** 2) - (np.sum(m * m) - np.trace(m) ** 2 / d))
    ok = bool(np.all(np.isfinite(m)) and residual <= 1e-9 * d)
    return CheckResult("lemma1-degenerate-batch", ok, f"residual = {residual:.2e}")


def _small_problem(seed: int):
    rng = np.random.default_rng(seed)
    spec = MlpSpec((3, 6, 4, 3), seed=seed)
    params = init_params(spec)
    x = rng.normal(size=(12, 3))
    y = np.repeat(np.arange(3), 4)
    z = rng.normal(size=(12, 4))
    protos = local_prototypes(rng.normal(size=(9, 4)), np.repeat(np.arange(3), 3))
    return rng, spec, params, x, y, z, protos


def check_gradients(seeds=(0, 1, 2)) -> CheckResult:
    worst: dict[str, float] = {}
    for seed in seeds:
        rng, spec, params, x, y, z, protos = _small_problem(seed)
        cases = {
            "intra": lambda t: intra_loss(t, y),
            "inter-margin0": lambda t: inter_loss(t, y, protos, LossConfig()),
            "inter-margin0.5": lambda t: inter_loss(t, y, protos, LossConfig(margin=0.5)),
        }
        for name, fn in cases.items():
            worst[name] = max(worst.get(name, 0.0), gradient_error(fn, z))
        layout = Layout.of(spec)
        anchor = params.values + 0.05 * rng.normal(size=params.values.shape)
        cfg = LossConfig(mu1=0.3, mu2=0.7, margin=0.5, prox_mu=0.2)
        err = gradient_error(
            lambda w: total_loss(x, y, layout, w, cfg, prototypes=protos, global_flat=anchor).total,
            params.values,
        )
        worst["total+prox"] = max(worst.get("total+prox", 0.0), err)
    ok = all(v <= GRAD_TOL for v in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    return CheckResult("gradients-vs-finite-differences", ok, detail)


def check_motivation_angle() -> CheckResult:
    w_star, clients, w_hat = motivation_weights()
    angle = angle_between(w_star[1], w_hat[1])
    avg_ok = np.allclose((clients[0] + clients[1] + clients[2]) / 3, w_hat, atol=1e-15)
    ok = abs(angle - 45.0) <= 1e-9 and avg_ok
    return CheckResult("motivation-45-degrees", ok, f"angle = {angle:.12f}")


def check_theorem1(n: int = 1000, steps: int = 100, seed: int = 0) -> CheckResult:
    configs = random_theorem_configs(n, seed=seed, T=steps)
    failures = sum(not theorem1_simulate(c).satisfied for c in configs)
    conv = theorem1_simulate(TheoremSimConfig(a_star=0.4, G=1.0, p_k=0.6, p_hat=0.4, delta=0.0, T=steps, seed=seed))
    conv_ok = conv.error[-1] <= 1e-6 * 1.0
    return CheckResult(
        "theorem1-bound",
        bool(failures == 0 and conv_ok),
        f"{n - failures}/{n} configs hold; full-support final error {conv.error[-1]:.1e}",
    )


def check_eigensolver(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for d in (2, 5, 16, 64):
        a = rng.normal(size=(d, d))
        m = (a + a.T) / 2
        lam = sym_eigenvalues(m)
        worst = max(worst, abs(lam.sum() - np.trace(m)), abs(np.sqrt(np.sum(lam**2)) - np.linalg.norm(m)))
    simple = sym_eigenvalues(np.array([[2.0, 1.0], [1.0, 2.0]]))
    ok = worst <= 1e-9 and np.allclose(simple, [3.0, 1.0], atol=1e-12)
    return CheckResult("eigensolver-invariants", ok, f"max trace/frobenius drift {worst:.1e}")


def check_communication() -> CheckResult:
    pct = 100 * communication_overhead(11_182_000, 10, 512)
    return CheckResult("communication-overhead", abs(pct - 0.044) <= 0.01, f"{pct:.4f}% (reported 0.044%)")


CHECKS: dict[str, Callable[..., CheckResult]] = {
    "lemma1-identity": check_lemma1,
    "lemma1-degenerate-batch": check_degenerate_batch,
    "gradients-vs-finite-differences": check_gradients,
    "motivation-45-degrees": check_motivation_angle,
    "theorem1-bound": check_theorem1,
    "eigensolver-invariants": check_eigensolver,
    "communication-overhead": check_communication,
}


def run_checks(eps: float = STD_FLOOR) -> list[CheckResult]:
    """Run every check; ``eps`` is the std floor handed to the standardization checks."""
    results = []
    for name, fn in CHECKS.items():
        start = time.perf_counter()
        try:
            res = fn(eps=eps) if name.startswith("lemma1") else fn()
        except Exception as exc:  # noqa: BLE001 - a crashing check is a failing check
            res = CheckResult(name, False, f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - start
        results.append(res)
    return results

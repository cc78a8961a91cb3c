"""
Verification instruments: collapse metric, the three-class motivation
geometry, and a simulator for the prototype-recursion error bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from fedmr.data import Dataset, derive_seed
from fedmr.eigen import sym_eigenvalues
from fedmr.errors import ContractError, ConvergenceError, DomainError
from fedmr.losses import STD_FLOOR, class_covariances
from fedmr.model import ModelParams, features

__all__ = [
    "sym_eigenvalues",
    "eigvar_topk",
    "collapse_metric",
    "motivation_weights",
    "angle_between",
    "empirical_shift",
    "TheoremSimConfig",
    "TheoremSimResult",
    "theorem1_simulate",
    "random_theorem_configs",
    "angular_spread",
]

SQRT3 = np.sqrt(3.0)


# ------------------------------------------------------------- collapse metric


def eigvar_topk(m, k: int = 50, normalizer: float = 128.0) -> float:
    """``(1/normalizer) Σ_{i<k} (λ_i − mean of top-k λ)²`` over the k largest eigenvalues."""
    lam = sym_eigenvalues(m)
    if k > len(lam):
        raise ContractError(f"k={k} exceeds matrix dimension {len(lam)}")
    top = lam[:k]
    return float(np.sum((top - top.mean()) ** 2) / normalizer)


def collapse_metric(
    params: ModelParams,
    data: Dataset,
    k: int = 50,
    normalizer: float = 128.0,
    batch_size: int = 128,
    seed: int = 0,
) -> float:
    """Mean eigen-variance of the per-class feature covariances in one random mini-batch."""
    rng = np.random.default_rng(derive_seed(seed, 15))
    idx = rng.choice(len(data), size=min(batch_size, len(data)), replace=False)
    z = features(params, data.features[idx])
    covs = class_covariances(z, data.labels[idx], eps=STD_FLOOR)
    if not covs:
        raise DomainError("no class has two samples in the metric batch")
    kk = min(k, params.spec.feature_dim)
    return float(np.mean([eigvar_topk(m.data, kk, normalizer) for m in covs.values()]))


# ----------------------------------------------------------- motivation example


def motivation_weights() -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
    """The all-class optimum, the three two-class client solutions, and their average."""
    w_star = np.array([[1.0, 0.0], [-SQRT3 / 2, 0.5], [-SQRT3 / 2, -0.5]])
    clients = [
        np.array([[0.5, -SQRT3 / 2], [-0.5, SQRT3 / 2], [0.0, 0.0]]),
        np.array([[0.5, SQRT3 / 2], [0.0, 0.0], [-0.5, -SQRT3 / 2]]),
        np.array([[0.0, 0.0], [0.0, 1.0], [0.0, -1.0]]),
    ]
    w_hat = (clients[0] + clients[1] + clients[2]) / 3.0
    return w_star, clients, w_hat


def angle_between(u, v) -> float:
    """Angle in degrees."""
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DomainError("angle with a zero vector is undefined")
    # arccos of the cosine loses ~1e-8 rad near 0 and 180 degrees; the
    # half-angle form stays accurate there
    a, b = u / nu, v / nv
    return float(np.degrees(2.0 * np.arctan2(np.linalg.norm(a - b), np.linalg.norm(a + b))))


def _fit_binary(x, target, weight, wd, tol):
    total = weight.sum()
    sign = 2.0 * target - 1.0

    def objective(w):
        margin = sign * (x @ w)
        loss = np.sum(weight * np.logaddexp(0.0, -margin)) / total + 0.5 * wd * (w @ w)
        grad = -(weight * sign * _sigmoid(-margin)) @ x / total + wd * w
        return loss, grad

    res = minimize(objective, np.zeros(x.shape[1]), jac=True, method="L-BFGS-B",
                   options={"gtol": tol * 1e-2, "ftol": 1e-300, "maxiter": 100_000})
    gnorm = np.linalg.norm(objective(res.x)[1])
    if gnorm > tol:
        raise ConvergenceError(f"binary logistic fit stopped at gradient norm {gnorm:.2e}")
    return res.x


def _fit_softmax(x, y, classes, num_classes, weight, wd, tol):
    classes = list(classes)
    col = np.array([classes.index(int(c)) for c in y])
    total = weight.sum()
    m = len(classes)
    rows = np.arange(len(y))

    def objective(flat):
        w = flat.reshape(m, x.shape[1])
        logits = x @ w.T
        shift = logits.max(axis=1, keepdims=True)
        lse = shift[:, 0] + np.log(np.exp(logits - shift).sum(axis=1))
        loss = np.sum(weight * (lse - logits[rows, col])) / total + 0.5 * wd * (flat @ flat)
        p = np.exp(logits - lse[:, None])
        p[rows, col] -= 1.0
        grad = (p * weight[:, None]).T @ x / total + wd * w
        return loss, grad.ravel()

    res = minimize(objective, np.zeros(m * x.shape[1]), jac=True, method="L-BFGS-B",
                   options={"gtol": tol * 1e-2, "ftol": 1e-300, "maxiter": 100_000})
    gnorm = np.linalg.norm(objective(res.x)[1])
    if gnorm > tol:
        raise ConvergenceError(f"softmax fit stopped at gradient norm {gnorm:.2e}")
    out = np.zeros((num_classes, x.shape[1]))
    out[classes] = res.x.reshape(m, x.shape[1])
    return out


def _sigmoid(t):
    return np.exp(-np.logaddexp(0.0, -t))


def fit_linear_classifier(
    x: np.ndarray,
    y: np.ndarray,
    num_classes: int,
    weight: np.ndarray | None = None,
    weight_decay: float = 1e-5,
    model: str = "ovr",
    tol: float = 1e-6,
) -> np.ndarray:
    """Bias-free linear classifier; rows of absent classes stay exactly zero.

    ``model="ovr"`` fits one logistic regression per present class against
    the other present samples; ``"softmax"`` fits a multinomial model over the
    present classes.
    """
    weight = np.ones(len(y)) if weight is None else np.asarray(weight, dtype=np.float64)
    present = sorted(int(c) for c in np.unique(y))
    if model == "softmax":
        return _fit_softmax(x, y, present, num_classes, weight, weight_decay, tol)
    if model != "ovr":
        raise ContractError(f"unknown classifier model {model!r}")
    w = np.zeros((num_classes, x.shape[1]))
    for c in present:
        w[c] = _fit_binary(x, (y == c).astype(np.float64), weight, weight_decay, tol)
    return w


def empirical_shift(
    dataset: Dataset,
    variant: str = "pcdd",
    pairs: Sequence[Sequence[int]] = ((0, 1), (0, 2), (1, 2)),
    target_class: int = 1,
    weight_decay: float = 1e-5,
    model: str = "ovr",
    reference: np.ndarray | None = None,
    seed: int = 0,
) -> float:
    """Angle (degrees) between the averaged client row for ``target_class`` and the reference row.

    Variants: ``"pcdd"`` gives client k only the classes in ``pairs[k]``;
    ``"centroid"`` additionally hands each client the centroid of every class
    it lacks, weighted by that class's sample count; ``"iid"`` splits all
    samples uniformly over the same number of clients.  The reference row
    defaults to the all-class optimum of :func:`motivation_weights`.
    """
    if reference is None:
        reference = motivation_weights()[0][target_class]
    x, y, num_classes = dataset.features, dataset.labels, dataset.num_classes
    n_clients = len(pairs)
    client_weights = []
    if variant == "iid":
        rng = np.random.default_rng(seed)
        for part in np.array_split(rng.permutation(len(y)), n_clients):
            client_weights.append(fit_linear_classifier(x[part], y[part], num_classes,
                                                        weight_decay=weight_decay, model=model))
    elif variant in ("pcdd", "centroid"):
        for pair in pairs:
            mask = np.isin(y, pair)
            xc, yc, wc = x[mask], y[mask], np.ones(int(mask.sum()))
            if variant == "centroid":
                missing = [c for c in range(num_classes) if c not in pair]
                xc = np.vstack([xc] + [x[y == c].mean(axis=0, keepdims=True) for c in missing])
                yc = np.concatenate([yc, missing])
                wc = np.concatenate([wc, [float(np.sum(y == c)) for c in missing]])
            client_weights.append(fit_linear_classifier(xc, yc, num_classes, weight=wc,
                                                        weight_decay=weight_decay, model=model))
    else:
        raise ContractError(f"unknown variant {variant!r}")
    aggregated = np.mean(client_weights, axis=0)
    return angle_between(aggregated[target_class], reference)


# ------------------------------------------------------- prototype recursion


@dataclass(frozen=True)
class TheoremSimConfig:
    """One coordinate of a class representation driven by prototype averaging.

    ``p_k`` is the client's own weight, ``p_hat`` the weight of clients that
    carry the optimal value ``a_star``; the rest (``1 - p_k - p_hat``) is
    split over ``n_interferers`` clients with arbitrary values in [-G, G].
    ``delta`` bounds the per-round slack.
    """

    a_star: float
    G: float
    p_k: float
    p_hat: float
    delta: float
    T: int = 100
    seed: int = 0
    n_interferers: int = 3

    def __post_init__(self):
        if not 0 < self.p_k < 1:
            raise ContractError("p_k must lie in (0, 1)")
        if self.p_hat < 0 or self.p_hat + self.p_k > 1 + 1e-15:
            raise ContractError("need p_hat >= 0 and p_hat + p_k <= 1")
        if self.G <= 0 or abs(self.a_star) > self.G:
            raise ContractError("need G > 0 and |a_star| <= G")
        if self.delta < 0:
            raise ContractError("delta must be nonnegative")
        if self.n_interferers < 1:
            raise ContractError("n_interferers must be >= 1")


@dataclass
class TheoremSimResult:
    trajectory: np.ndarray  # r_0 .. r_T
    error: np.ndarray  # |r_t - a_star|
    bound: np.ndarray  # 2(1 - p_hat*Γ_t)G + δΓ_t
    satisfied: bool


def theorem1_simulate(cfg: TheoremSimConfig) -> TheoremSimResult:
    """Iterate ``r ← p_hat·a* + p_k·r + Σ_j p_j σ_j + ξ`` and check the error bound each step.

    ``σ_j ~ U[-G, G]`` and ``ξ ~ U[-δ, δ]`` are redrawn every round, ``r_0 ~ U[-G, G]``,
    and ``Γ_t = (1 - p_k**t) / (1 - p_k)``.
    """
    rng = np.random.default_rng(cfg.seed)
    other = max(0.0, 1.0 - cfg.p_k - cfg.p_hat)
    split = rng.dirichlet(np.ones(cfg.n_interferers)) * other
    r = np.empty(cfg.T + 1)
    r[0] = rng.uniform(-cfg.G, cfg.G)
    for t in range(cfg.T):
        sigma = rng.uniform(-cfg.G, cfg.G, size=cfg.n_interferers)
        xi = rng.uniform(-cfg.delta, cfg.delta) if cfg.delta > 0 else 0.0
        r[t + 1] = cfg.p_hat * cfg.a_star + cfg.p_k * r[t] + float(split @ sigma) + xi
    t = np.arange(cfg.T + 1)
    gamma = (1.0 - cfg.p_k ** t) / (1.0 - cfg.p_k)
    bound = 2.0 * (1.0 - cfg.p_hat * gamma) * cfg.G + cfg.delta * gamma
    error = np.abs(r - cfg.a_star)
    # rounding slack only; the inequality itself is exact
    ok = bool(np.all(error <= bound + 1e-12 * cfg.G))
    return TheoremSimResult(r, error, bound, ok)


def random_theorem_configs(n: int, seed: int = 0, T: int = 100) -> list[TheoremSimConfig]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        G = float(rng.uniform(0.1, 10.0))
        p_k = float(rng.uniform(0.01, 0.99))
        p_hat = float(rng.uniform(0.0, 1.0 - p_k))
        out.append(TheoremSimConfig(
            a_star=float(rng.uniform(-G, G)),
            G=G,
            p_k=p_k,
            p_hat=p_hat,
            delta=float(rng.uniform(0.0, G)),
            T=T,
            seed=derive_seed(seed, i),
            n_interferers=int(rng.integers(1, 6)),
        ))
    return out


# -------------------------------------------------------------- feature spread


def angular_spread(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean over classes of the mean angle (degrees) between each unit row and its class mean direction."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    spreads = []
    for c in np.unique(labels):
        p = points[labels == c]
        p = p / np.linalg.norm(p, axis=1, keepdims=True)
        centre = p.mean(axis=0)
        norm = np.linalg.norm(centre)
        if norm == 0:
            spreads.append(90.0)
            continue
        cos = np.clip(p @ (centre / norm), -1.0, 1.0)
        spreads.append(float(np.degrees(np.arccos(cos)).mean()))
    return float(np.mean(spreads))

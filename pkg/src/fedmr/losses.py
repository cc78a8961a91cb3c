"""
Manifold-reshaping objectives.

``intra_loss`` decorrelates feature dimensions within each class by shrinking
the Frobenius norm of the per-class covariance of standardized features.
``inter_loss`` is a hinge on distances to global class prototypes that keeps
local features nearer their own class prototype than to the prototypes of
other classes.  ``total_loss`` combines both with cross-entropy and an
optional proximal term.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from fedmr import autodiff as ad
from fedmr.autodiff import Tensor
from fedmr.eigen import sym_eigenvalues
from fedmr.errors import ContractError, ProtocolError
from fedmr.model import Layout, forward_tensor

STD_FLOOR = 1e-8


class DegenerateBatchWarning(UserWarning):
    """No class in the batch has the two samples a covariance needs."""


@dataclass(frozen=True)
class LossConfig:
    mu1: float = 0.0
    mu2: float = 0.0
    margin: float = 0.0
    lite_n: int | None = None
    prox_mu: float = 0.0
    contrast_all: bool = False
    inter_mode: str = "hinge"  # "hinge" | "pull"
    bessel_std: bool = True
    std_floor: float = STD_FLOOR

    def __post_init__(self):
        for name in ("mu1", "mu2", "margin", "prox_mu"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be nonnegative")
        if self.lite_n is not None and self.lite_n < 1:
            raise ContractError("lite_n must be a positive integer")
        if self.inter_mode not in ("hinge", "pull"):
            raise ContractError(f"unknown inter_mode {self.inter_mode!r}")


@dataclass(frozen=True)
class ClassStats:
    label: int
    count: int
    mean: np.ndarray
    std: np.ndarray


@dataclass
class Standardized:
    zhat: dict[int, Tensor]
    stats: dict[int, ClassStats]
    excluded: list[int]
    floored: bool


@dataclass
class PrototypeSet:
    """Class -> prototype vector, with the per-class sample counts behind each."""

    vectors: dict[int, np.ndarray] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)

    def __contains__(self, c: int) -> bool:
        return c in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def classes(self) -> list[int]:
        return sorted(self.vectors)

    def matrix(self, classes) -> np.ndarray:
        return np.vstack([self.vectors[c] for c in classes])

    def param_count(self) -> int:
        return int(sum(v.size for v in self.vectors.values()))

    def copy(self) -> "PrototypeSet":
        return PrototypeSet({c: v.copy() for c, v in self.vectors.items()}, dict(self.counts))


# ------------------------------------------------------------------ intra loss


def standardize_per_class(
    z, labels, eps: float = STD_FLOOR, bessel: bool = True
) -> Standardized:
    """Per-class ``(z - mean) / max(std, eps)`` over the batch.

    Classes with fewer than two samples are left out and listed in ``excluded``.
    ``bessel`` selects the 1/(n-1) variance; otherwise 1/n is used.
    """
    z = ad.as_tensor(z)
    labels = np.asarray(labels)
    out = Standardized({}, {}, [], False)
    for c in np.unique(labels):
        c = int(c)
        idx = np.flatnonzero(labels == c)
        n = len(idx)
        if n < 2:
            out.excluded.append(c)
            continue
        zc = ad.take_rows(z, idx)
        centered = ad.sub(zc, ad.mean(zc, axis=0))
        constant = np.ptp(zc.data, axis=0) == 0
        if constant.any():
            # the mean of identical values can be off by an ulp, which the floor
            # would amplify; a constant column centers to exactly zero
            centered = ad.mul(centered, (~constant).astype(np.float64))
        var = ad.scale(ad.sum(ad.square(centered), axis=0), 1.0 / (n - 1 if bessel else n))
        if eps > 0:
            # flooring the variance at eps**2 equals flooring the std at eps
            std = ad.sqrt(ad.clamp_min(var, eps * eps))
            out.floored |= bool(np.any(var.data <= eps * eps))
        else:
            std = ad.sqrt(var)
        out.zhat[c] = ad.div(centered, std)
        out.stats[c] = ClassStats(c, n, zc.data.mean(axis=0), std.data.copy())
    return out


def class_covariances(z, labels, eps: float = STD_FLOOR, bessel: bool = True) -> dict[int, Tensor]:
    """``M_c = zhat_cᵀ zhat_c / (N_c - 1)`` for every class with at least two samples."""
    st = standardize_per_class(z, labels, eps=eps, bessel=bessel)
    return {
        c: ad.scale(ad.matmul(ad.transpose(zh), zh), 1.0 / (zh.shape[0] - 1))
        for c, zh in st.zhat.items()
    }


def intra_loss(z, labels, eps: float = STD_FLOOR, bessel: bool = True) -> Tensor:
    covs = class_covariances(z, labels, eps=eps, bessel=bessel)
    if not covs:
        warnings.warn("no class has two samples; intra loss is zero", DegenerateBatchWarning, stacklevel=2)
        return Tensor(0.0)
    terms = [ad.sum(ad.square(m)) for m in covs.values()]
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, 1.0 / len(terms))


def lemma1_residual(m) -> float:
    """``|Σ(λ_i − mean λ)² − (||M||_F² − d)|`` for a standardized covariance."""
    m = np.asarray(m.data if isinstance(m, Tensor) else m, dtype=np.float64)
    d = m.shape[0]
    lam = sym_eigenvalues(m)
    lhs = float(np.sum((lam - lam.mean()) ** 2))
    rhs = float(np.sum(m * m)) - d
    return abs(lhs - rhs)


# ------------------------------------------------------------------ prototypes


def local_prototypes(z, labels) -> PrototypeSet:
    """Per-class mean representation and sample count."""
    z = np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float64)
    labels = np.asarray(labels)
    out = PrototypeSet()
    for c in np.unique(labels):
        mask = labels == c
        out.vectors[int(c)] = z[mask].mean(axis=0)
        out.counts[int(c)] = int(mask.sum())
    return out


# ------------------------------------------------------------------ inter loss


def inter_loss(z, labels, prototypes: PrototypeSet, cfg: LossConfig = LossConfig()) -> Tensor:
    """Mean over ordered class pairs of the per-anchor-class hinge average.

    For anchor class ``ci`` and contrast class ``cj`` the pair term is the
    mean over samples of ``ci`` of
    ``max(||z - g_ci|| - ||z - g_cj|| + margin, 0)``.  Contrast classes are the
    other classes present in the batch, or every other prototype class when
    ``cfg.contrast_all`` is set.  In ``pull`` mode the term is just
    ``||z - g_ci||`` averaged per class.
    """
    z = ad.as_tensor(z)
    labels = np.asarray(labels)
    present = [int(c) for c in np.unique(labels)]
    for c in present:
        if c not in prototypes:
            raise ProtocolError(f"no global prototype for class {c}")
    if cfg.inter_mode == "hinge" and not cfg.contrast_all and len(present) < 2:
        return Tensor(0.0)
    cols = sorted(set(present) | set(prototypes.classes)) if cfg.contrast_all else present
    col_of = {c: j for j, c in enumerate(cols)}
    own_col = np.array([col_of[int(c)] for c in labels])
    counts = {c: int(np.sum(labels == c)) for c in present}
    dist = ad.pairwise_distances(z, prototypes.matrix(cols))
    own = ad.pick(dist, own_col)

    if cfg.inter_mode == "pull":
        weights = np.array([1.0 / (counts[int(c)] * len(present)) for c in labels])
        return ad.sum(ad.mul(own, weights))

    # contrasts[j, n] = own[n] - dist[n, j] + margin, laid out class-major so the
    # per-sample vector broadcasts along the trailing axis
    hinge = ad.max_zero(ad.add(ad.sub(own, ad.transpose(dist)), cfg.margin))
    contrast = np.ones((len(cols), len(labels)))
    contrast[own_col, np.arange(len(labels))] = 0.0
    pairs = len(present) * (len(cols) - 1)
    if pairs == 0:
        return Tensor(0.0)
    per_sample = np.array([1.0 / (counts[int(c)] * pairs) for c in labels])
    return ad.sum(ad.mul(hinge, contrast * per_sample))


def lite_subset(n: int, lite_n: int, rng: np.random.Generator) -> np.ndarray:
    return np.sort(rng.choice(n, size=min(lite_n, n), replace=False))


def inter_loss_lite(
    z, labels, prototypes: PrototypeSet, cfg: LossConfig, rng: np.random.Generator | int
) -> Tensor:
    """``inter_loss`` on a uniform random subset of ``cfg.lite_n`` batch rows."""
    if cfg.lite_n is None:
        raise ContractError("inter_loss_lite needs cfg.lite_n")
    z = ad.as_tensor(z)
    labels = np.asarray(labels)
    n = len(labels)
    if cfg.lite_n >= n:
        return inter_loss(z, labels, prototypes, cfg)
    rng = np.random.default_rng(rng)
    idx = lite_subset(n, cfg.lite_n, rng)
    return inter_loss(ad.take_rows(z, idx), labels[idx], prototypes, cfg)


# ------------------------------------------------------------------ objective


def prox_term(flat: Tensor, anchor: np.ndarray) -> Tensor:
    """``||w - anchor||²``."""
    return ad.sum(ad.square(ad.sub(flat, anchor)))


@dataclass
class LossParts:
    total: Tensor
    cls: float
    intra: float = 0.0
    inter: float = 0.0
    prox: float = 0.0


def total_loss(
    x,
    y,
    layout: Layout,
    flat: Tensor,
    cfg: LossConfig,
    prototypes: PrototypeSet | None = None,
    global_flat: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    uncovered: str = "error",
) -> LossParts:
    """Cross-entropy + mu1*intra + mu2*inter + prox_mu/2*||w - w_global||².

    Terms with a zero weight are not built at all, so with every weight zero
    the result is the cross-entropy tensor itself.  ``uncovered="skip"``
    drops batch rows whose class has no global prototype from the inter term
    instead of raising.
    """
    y = np.asarray(y)
    z, logits = forward_tensor(layout, flat, x)
    cls = ad.softmax_cross_entropy(logits, y)
    parts = LossParts(cls, cls.item())
    total = cls
    if cfg.mu1 > 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateBatchWarning)
            intra = intra_loss(z, y, eps=cfg.std_floor, bessel=cfg.bessel_std)
        parts.intra = intra.item()
        total = ad.add(total, ad.scale(intra, cfg.mu1))
    if cfg.mu2 > 0:
        if prototypes is None or len(prototypes) == 0:
            raise ProtocolError("inter loss requested but no global prototypes are available")
        zi, yi = z, y
        if uncovered == "skip":
            keep = np.flatnonzero([int(c) in prototypes for c in y])
            if len(keep) < len(y):
                zi, yi = ad.take_rows(z, keep), y[keep]
        if len(yi) == 0:
            inter = Tensor(0.0)
        elif cfg.lite_n is not None:
            inter = inter_loss_lite(zi, yi, prototypes, cfg, rng if rng is not None else np.random.default_rng(0))
        else:
            inter = inter_loss(zi, yi, prototypes, cfg)
        parts.inter = inter.item()
        total = ad.add(total, ad.scale(inter, cfg.mu2))
    if cfg.prox_mu > 0:
        if global_flat is None:
            raise ProtocolError("proximal term requested without global weights")
        prox = prox_term(flat, global_flat)
        parts.prox = prox.item()
        total = ad.add(total, ad.scale(prox, 0.5 * cfg.prox_mu))
    parts.total = total
    return parts

"""Information-bottleneck objective over masked graph views.

Structure compression is a categorical KL between each node's attention
distribution and the uniform distribution over its candidate
neighborhood. Feature compression is the log-density ratio between the
per-node Gaussian posterior of the sampled representation and a
learnable Gaussian-mixture prior. The task term is a cross-entropy
estimate of the label information carried by the representation. The
objective trades the task term against beta times the compression terms,
summed over both masked views.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, NumericError

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GibHead:
    """Learnable pieces of the bottleneck at one layer.

    Posterior parameters come from two linear maps of the node features
    (sigma through softplus with a small floor); the prior is a mixture
    of m diagonal Gaussians with softmax weights.
    """

    w_mu: Tensor                 # [d, d]
    w_sigma: Tensor              # [d, d]
    w_cls: Tensor                # [d, classes]
    mix_logits: Tensor           # [m]
    mix_mu: Tensor               # [m, d]
    mix_sigma_raw: Tensor        # [m, d], softplus -> sigma

    def named(self, prefix):
        return {f"{prefix}.w_mu": self.w_mu, f"{prefix}.w_sigma": self.w_sigma,
                f"{prefix}.w_cls": self.w_cls, f"{prefix}.mix_logits": self.mix_logits,
                f"{prefix}.mix_mu": self.mix_mu,
                f"{prefix}.mix_sigma_raw": self.mix_sigma_raw}


@dataclass
class GibConfig:
    """Balance coefficient and which layers contribute each term."""

    beta: float = 0.1
    mixture_m: int = 2
    layers_aib: tuple = None     # None: every encoded layer
    layers_xib: tuple = None

    def __post_init__(self):
        if self.beta < 0:
            raise ContractError(f"beta must be >= 0, got {self.beta}")


@dataclass
class GibTerms:
    """Per-layer compression values plus the assembled total."""

    aib_per_layer: list = field(default_factory=list)
    xib_per_layer: list = field(default_factory=list)
    task_ce: float = 0.0
    total: float = 0.0

    @property
    def aib_sum(self):
        return float(sum(self.aib_per_layer))

    @property
    def xib_sum(self):
        return float(sum(self.xib_per_layer))


def init_gib_head(dim, classes, mixture_m, rng):
    from .blocks import xavier_uniform
    return GibHead(
        w_mu=xavier_uniform((dim, dim), rng),
        w_sigma=xavier_uniform((dim, dim), rng),
        w_cls=xavier_uniform((dim, classes), rng),
        mix_logits=Tensor(np.zeros(mixture_m), requires_grad=True),
        mix_mu=Tensor(rng.normal((mixture_m, dim)) * 0.1, requires_grad=True),
        mix_sigma_raw=Tensor(np.zeros((mixture_m, dim)), requires_grad=True),
    )


# ---------------------------------------------------------------------------
# structure term


def aib_term(phi, group_sizes=None):
    """KL(Cat(phi_g) || uniform over group g), summed over groups.

    phi is a [groups, support] tensor (or list of 1-d tensors) of
    probability rows; group_sizes overrides the uniform reference size
    (defaults to the row length). 0 * log 0 counts as 0. Rows must be
    normalized within 1e-6.
    """
    if isinstance(phi, (list, tuple)):
        rows = [ad.reshape(p, (1, p.size)) for p in phi]
        total = Tensor(0.0)
        sizes = group_sizes or [r.size for r in rows]
        for row, size in zip(rows, sizes):
            total = total + aib_term(row, [size])
        return total
    if np.isnan(phi.data).any():
        raise NumericError("attention rows contain NaN")
    sums = phi.data.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise ContractError(
            f"attention rows must sum to 1, worst deviation {np.abs(sums - 1.0).max():.3g}")
    if (phi.data < -1e-12).any():
        raise ContractError("attention rows must be nonnegative")
    n_groups, support = phi.shape
    if group_sizes is None:
        sizes = np.full(n_groups, support, dtype=np.float64)
    else:
        sizes = np.asarray(group_sizes, dtype=np.float64)
    log_ref = np.log(sizes)[:, None]
    inner = ad.log(ad.clamp_min(phi, 1e-30)) + Tensor(log_ref)
    return ad.tsum(phi * inner)


# ---------------------------------------------------------------------------
# feature term


def gaussian_log_pdf(z, mu, sigma):
    """Elementwise diagonal-Gaussian log density."""
    u = (z - mu) / sigma
    return (u * u) * -0.5 - ad.log(sigma) - 0.5 * _LOG_2PI


def mixture_log_pdf(z, head):
    """log sum_i w_i N(z; mu_0i, sigma_0i^2), per entry, LSE-stabilized."""
    m = head.mix_logits.size
    lse_w = ad.logsumexp_stack([ad.reshape(ad.gather_rows(
        ad.reshape(head.mix_logits, (m, 1)), [i]), (1, 1)) for i in range(m)])
    comps = []
    for i in range(m):
        lw = ad.reshape(ad.gather_rows(ad.reshape(head.mix_logits, (m, 1)), [i]), (1, 1)) - lse_w
        mu0 = ad.gather_rows(head.mix_mu, [i])
        sigma0 = ad.softplus(ad.gather_rows(head.mix_sigma_raw, [i])) + 1e-6
        comps.append(gaussian_log_pdf(z, mu0, sigma0) + lw)
    return ad.logsumexp_stack(comps)


def posterior(features, head):
    """Per-node (mu, sigma) from the feature matrix."""
    mu = ad.matmul(features, head.w_mu)
    sigma = ad.softplus(ad.matmul(features, head.w_sigma)) + 1e-6
    return mu, sigma


def reparameterize(mu, sigma, rng):
    """z = mu + sigma * eps with standard normal noise."""
    return mu + sigma * Tensor(rng.normal(mu.shape))


def xib_term(z, mu, sigma, head):
    """Posterior-vs-mixture-prior log-density ratio, summed over nodes."""
    if (sigma.data <= 0).any():
        raise ContractError("posterior sigma must be positive")
    return ad.tsum(gaussian_log_pdf(z, mu, sigma) - mixture_log_pdf(z, head))


# ---------------------------------------------------------------------------
# task term and the combined objectives


def mean_cross_entropy(logits, labels):
    """Mean softmax cross-entropy over rows of logits."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if labels.shape[0] != n:
        raise ContractError(f"{labels.shape[0]} labels for {n} rows")
    if labels.min() < 0 or labels.max() >= c:
        raise ContractError(f"label outside [0, {c})")
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    log_z = ad.log(ad.tsum(ad.exp(logits - shift), axis=1, keepdims=True)) + shift
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    picked = ad.tsum(logits * Tensor(onehot), axis=1, keepdims=True)
    return ad.tmean(log_z - picked)


def task_mi_estimate(logits, labels):
    """Cross-entropy estimate of the label information in the representation.

    Returned with the sign such that larger is better (it is the negated
    mean cross-entropy); the loss pipeline consumes its negation.
    """
    return -mean_cross_entropy(logits, labels)


def structure_mi_estimate(aib_terms, xib_terms):
    """Sum of the per-layer compression terms."""
    total = Tensor(0.0)
    for t in list(aib_terms) + list(xib_terms):
        total = total + t
    return total


def gib_objective(task_ce, structure, beta):
    """Supervised term plus beta times the compression estimate."""
    if beta < 0:
        raise ContractError(f"beta must be >= 0, got {beta}")
    return task_ce + beta * structure


@dataclass
class ViewEncoding:
    """Per-layer encoder outputs of one masked view."""

    features: list               # Tensor [n, d] per contributing layer
    attention: list              # Tensor [n, support] per layer, or None entries


def view_objective(view, labels, heads, beta, rng):
    """Objective of one view: CE of the sampled final representation plus
    beta times its per-layer structure/feature compression terms."""
    aib_list = [aib_term(a) for a in view.attention if a is not None]
    xib_list = []
    z_last = None
    for feats, head in zip(view.features, heads):
        mu, sigma = posterior(feats, head)
        z = reparameterize(mu, sigma, rng)
        xib_list.append(xib_term(z, mu, sigma, head))
        z_last = (z, head)
    z, head = z_last
    ce = mean_cross_entropy(ad.matmul(z, head.w_cls), labels)
    structure = structure_mi_estimate(aib_list, xib_list)
    return gib_objective(ce, structure, beta), aib_list, xib_list, ce


def joint_view_loss(view_nd, view_ed, labels, heads, beta, rng):
    """Sum of both views' objectives, plus the logged per-term values.

    Either view may be None (masking ablations); the remaining view's
    objective is used alone. Both views draw the same reparameterization
    noise: the terms are summed, so coupling them changes no gradient
    expectation, and identical views then give exactly twice one view.
    """
    total = Tensor(0.0)
    terms = GibTerms()
    for view in (view_ed, view_nd):
        if view is None:
            continue
        obj, aib_list, xib_list, ce = view_objective(
            view, labels, heads, beta, rng.split(1))
        total = total + obj
        terms.aib_per_layer.extend(float(t.item()) for t in aib_list)
        terms.xib_per_layer.extend(float(t.item()) for t in xib_list)
        terms.task_ce += float(ce.item())
    terms.total = float(total.item())
    return total, terms


# ---------------------------------------------------------------------------
# exact oracle for small discrete joints


def exact_mi_oracle(joint):
    """Mutual information of a small discrete joint table, by enumeration."""
    p = np.asarray(joint, dtype=np.float64)
    if p.ndim != 2:
        raise ContractError(f"joint table must be 2-d, got shape {p.shape}")
    if (p < 0).any():
        raise ContractError("joint table entries must be nonnegative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ContractError(f"joint table sums to {p.sum()!r}, expected 1")
    py = p.sum(axis=1, keepdims=True)
    pz = p.sum(axis=0, keepdims=True)
    mi = 0.0
    for y in range(p.shape[0]):
        for z in range(p.shape[1]):
            if p[y, z] > 0:
                mi += p[y, z] * math.log(p[y, z] / (py[y, 0] * pz[0, z]))
    return mi

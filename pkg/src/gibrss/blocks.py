"""The graph-embedding block and its convolution variants.

One block runs: input projection -> attention-weighted aggregate/update
(multi-head) -> output projection with a residual -> per-node FFN with a
residual. Attention weights are a per-destination softmax over the
node's in-edges plus a learned self slot, so self and neighbors compete
for the same unit of mass.

Edge masks (from the edge-masked view) zero individual edges out of the
softmax and the message sum; a fully masked node falls back to its self
term. EdgeConv / GIN / GraphSAGE are provided as ablation variants of
the same interface.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError

VARIANTS = ("gat", "edgeconv", "gin", "graphsage")


@dataclass
class GeBlockParams:
    """Learnable weights of one block; all projections are bias-free."""

    dim: int
    heads: int
    variant: str = "gat"
    leaky_slope: float = 0.2
    w_in: Tensor = None
    w_out: Tensor = None
    attn: list = field(default_factory=list)       # per head, [2*hd, 1]
    w_theta1: list = field(default_factory=list)   # per head, [hd, hd]
    w_theta2: list = field(default_factory=list)   # per head, [hd, hd]
    w_update: list = field(default_factory=list)   # per head, [hd, hd]
    w_ffn1: Tensor = None
    w_ffn2: Tensor = None
    edge_mlp: Tensor = None                        # edgeconv, [2*dim, dim]
    gin_w: Tensor = None                           # gin, [dim, dim]
    gin_eps: float = 0.0
    sage_w: Tensor = None                          # graphsage, [2*dim, dim]

    def named(self, prefix):
        """Deterministically ordered name -> Tensor map of this block."""
        out = {f"{prefix}.w_in": self.w_in, f"{prefix}.w_out": self.w_out}
        for i in range(self.heads):
            out[f"{prefix}.attn.{i}"] = self.attn[i]
            out[f"{prefix}.theta1.{i}"] = self.w_theta1[i]
            out[f"{prefix}.theta2.{i}"] = self.w_theta2[i]
            out[f"{prefix}.update.{i}"] = self.w_update[i]
        out[f"{prefix}.ffn1"] = self.w_ffn1
        out[f"{prefix}.ffn2"] = self.w_ffn2
        if self.variant == "edgeconv":
            out[f"{prefix}.edge_mlp"] = self.edge_mlp
        elif self.variant == "gin":
            out[f"{prefix}.gin_w"] = self.gin_w
        elif self.variant == "graphsage":
            out[f"{prefix}.sage_w"] = self.sage_w
        return out


def xavier_uniform(shape, rng):
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(shape, -a, a), requires_grad=True)


def init_ge_params(dim, heads, rng, variant="gat", leaky_slope=0.2, ffn_ratio=4):
    if variant not in VARIANTS:
        raise ContractError(f"unknown conv variant '{variant}', expected one of {VARIANTS}")
    if dim % heads != 0:
        raise ContractError(f"head count {heads} does not divide dim {dim}")
    hd = dim // heads
    p = GeBlockParams(dim=dim, heads=heads, variant=variant, leaky_slope=leaky_slope)
    p.w_in = xavier_uniform((dim, dim), rng)
    p.w_out = xavier_uniform((dim, dim), rng)
    for _ in range(heads):
        p.attn.append(xavier_uniform((2 * hd, 1), rng))
        p.w_theta1.append(xavier_uniform((hd, hd), rng))
        p.w_theta2.append(xavier_uniform((hd, hd), rng))
        p.w_update.append(xavier_uniform((hd, hd), rng))
    p.w_ffn1 = xavier_uniform((dim, ffn_ratio * dim), rng)
    p.w_ffn2 = xavier_uniform((ffn_ratio * dim, dim), rng)
    if variant == "edgeconv":
        p.edge_mlp = xavier_uniform((2 * dim, dim), rng)
    elif variant == "gin":
        p.gin_w = xavier_uniform((dim, dim), rng)
    elif variant == "graphsage":
        p.sage_w = xavier_uniform((2 * dim, dim), rng)
    return p


def _dst_index(g):
    return np.repeat(np.arange(g.num_nodes, dtype=np.int64), g.in_degree)


def edge_attention(x, g, w, include_self=False, edge_mask=None):
    """Per-destination softmax attention over in-edges.

    Scores are a linear map of the concatenated (destination, source)
    features. With include_self a learned self slot (score of [x_i, x_i])
    joins the same softmax and is returned as the last column. An edge
    mask multiplies the exponentiated neighbor scores, which renormalizes
    the remaining mass exactly as if masked edges were deleted.

    Returns a Tensor of shape [n, in_degree] (or [n, in_degree + 1]).
    """
    if g.in_degree == 0:
        raise ContractError("graph has no edges")
    n, s = g.src.shape
    x_dst = ad.gather_rows(x, _dst_index(g))
    x_src = ad.gather_rows(x, g.src.reshape(-1))
    scores = ad.matmul(ad.concat([x_dst, x_src], axis=1), w)
    scores = ad.reshape(scores, (n, s))
    if include_self:
        self_scores = ad.matmul(ad.concat([x, x], axis=1), w)
        scores = ad.concat([scores, self_scores], axis=1)
    shift = Tensor(scores.data.max(axis=1, keepdims=True))
    e = ad.exp(scores - shift)
    if edge_mask is not None:
        keep = edge_mask
        if include_self:
            keep = ad.concat([keep, Tensor(np.ones((n, 1)))], axis=1)
        e = e * keep
    return e / ad.tsum(e, axis=1, keepdims=True)


def _inverse_counts(g, neighbor_counts):
    """1/|N_i| as a column tensor; zero where a node kept no in-edges.

    Mask-derived counts arrive as a Tensor so the scale factor stays
    differentiable through the mask surrogate (hard 0/1 masks give the
    exact kept-edge count either way).
    """
    n, s = g.src.shape
    if neighbor_counts is None:
        return Tensor(np.full((n, 1), 1.0 / s))
    if isinstance(neighbor_counts, Tensor):
        gate = Tensor((neighbor_counts.data > 0).astype(np.float64))
        return gate / ad.clamp_min(neighbor_counts, 0.5)
    c = np.asarray(neighbor_counts, dtype=np.float64).reshape(n, 1)
    return Tensor(np.where(c > 0, 1.0 / np.maximum(c, 1.0), 0.0))


def aggregate_update(x, g, omega, w_theta1, w_theta2, leaky_slope=0.2,
                     neighbor_counts=None):
    """Attention-weighted aggregate/update of one head.

    omega holds a weight per in-edge slot plus the self weight in the
    last column. Neighbor messages carry the 1/|N_i| factor on top of
    the softmax weights; the self term enters at full strength.
    """
    n, s = g.src.shape
    if omega.shape != (n, s + 1):
        raise DimensionError(f"omega shape {omega.shape} != ({n}, {s + 1})")
    inv = _inverse_counts(g, neighbor_counts)
    transformed = ad.matmul(ad.gather_rows(x, g.src.reshape(-1)), w_theta1)
    w_edge = ad.reshape(ad.cols(omega, 0, s), (n * s, 1))
    msgs = ad.reshape(w_edge * transformed, (n, s, x.shape[1]))
    neighbor_term = ad.tsum(msgs, axis=1) * inv
    self_term = ad.cols(omega, s, s + 1) * ad.matmul(x, w_theta2)
    return ad.leaky_relu(neighbor_term + self_term, leaky_slope)


def _mask_counts(g, edge_mask):
    """Kept-edge count per node: a Tensor when a mask is active."""
    if edge_mask is None:
        return None
    return ad.tsum(edge_mask, axis=1, keepdims=True)


def multi_head_update(x, g, params, edge_mask=None, collect_attention=None):
    """Multi-head node update: per-head attention conv on a feature
    slice, head outputs projected and concatenated."""
    n, d = x.shape
    h = params.heads
    if d % h != 0:
        raise ContractError(f"head count {h} does not divide feature dim {d}")
    hd = d // h
    counts = _mask_counts(g, edge_mask)
    outs = []
    for k in range(h):
        xk = ad.cols(x, k * hd, (k + 1) * hd)
        omega = edge_attention(xk, g, params.attn[k], include_self=True,
                               edge_mask=edge_mask)
        if collect_attention is not None:
            collect_attention.append(omega)
        agg = aggregate_update(xk, g, omega, params.w_theta1[k], params.w_theta2[k],
                               params.leaky_slope, neighbor_counts=counts)
        outs.append(ad.matmul(agg, params.w_update[k]))
    return ad.concat(outs, axis=1)


def conv_variant_forward(kind, x, g, params, edge_mask=None, collect_attention=None):
    """Dispatch the graph convolution by variant name."""
    if edge_mask is None:
        edge_mask = g.edge_mask
    if kind == "gat":
        return multi_head_update(x, g, params, edge_mask, collect_attention)
    n, s = g.src.shape
    d = x.shape[1]
    x_src = ad.gather_rows(x, g.src.reshape(-1))
    if kind == "edgeconv":
        x_dst = ad.gather_rows(x, _dst_index(g))
        msgs = ad.matmul(ad.concat([x_dst, x_src - x_dst], axis=1), params.edge_mlp)
        msgs = ad.reshape(msgs, (n, s, d))
        if edge_mask is not None:
            keep = ad.reshape(edge_mask, (n, s, 1))
            msgs = msgs * keep + Tensor((edge_mask.data[:, :, None] - 1.0) * 1e30)
        out = ad.tmax(msgs, axis=1)
        if edge_mask is not None:
            empty = edge_mask.data.sum(axis=1) == 0
            if empty.any():
                out = out * Tensor(np.where(empty, 0.0, 1.0)[:, None])
        return ad.leaky_relu(out, params.leaky_slope)
    if kind == "gin":
        if edge_mask is not None:
            x_src = x_src * ad.reshape(edge_mask, (n * s, 1))
        summed = ad.tsum(ad.reshape(x_src, (n, s, d)), axis=1)
        return ad.leaky_relu(ad.matmul(x * (1.0 + params.gin_eps) + summed, params.gin_w),
                             params.leaky_slope)
    if kind == "graphsage":
        if edge_mask is not None:
            x_src = x_src * ad.reshape(edge_mask, (n * s, 1))
        inv = _inverse_counts(g, _mask_counts(g, edge_mask))
        mean = ad.tsum(ad.reshape(x_src, (n, s, d)), axis=1) * inv
        return ad.leaky_relu(ad.matmul(ad.concat([x, mean], axis=1), params.sage_w),
                             params.leaky_slope)
    raise ContractError(f"unknown conv variant '{kind}', expected one of {VARIANTS}")


def ge_residual(x, g, params, edge_mask=None, collect_attention=None):
    """Projected graph conv with an identity residual."""
    inner = conv_variant_forward(params.variant, ad.matmul(x, params.w_in), g,
                                 params, edge_mask, collect_attention)
    return ad.matmul(ad.leaky_relu(inner, params.leaky_slope), params.w_out) + x


def ffn(y, params):
    """Per-node feed-forward map with an identity residual."""
    return ad.matmul(ad.leaky_relu(ad.matmul(y, params.w_ffn1), params.leaky_slope),
                     params.w_ffn2) + y


def ge_block(x, g, params, edge_mask=None, collect_attention=None):
    """Full block: residual graph conv followed by the residual FFN."""
    return ffn(ge_residual(x, g, params, edge_mask, collect_attention), params)

"""Learnable node-masked and edge-masked graph views.

Keep decisions are Bernoulli draws parameterized by free logits. A draw
is a hard 0/1 value obtained by thresholding a temperature-relaxed
sigmoid of the noised logit (binary concrete); the forward pass uses the
hard value while gradients flow through the relaxed surrogate, so the
keep probabilities are trainable end to end.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import blocks
from .autodiff import Tensor
from .errors import ContractError


@dataclass
class MaskParams:
    """Free logits for per-node and per-edge keep probabilities.

    Edge logits use the graph's (destination, slot) layout, so one
    parameter follows the s-th nearest in-edge of each node as the KNN
    topology moves with the features.
    """

    node_logits: Tensor          # [n]
    edge_logits: Tensor          # [n, in_degree]
    temperature: float = 0.5

    def named(self, prefix):
        return {f"{prefix}.node_logits": self.node_logits,
                f"{prefix}.edge_logits": self.edge_logits}


def init_mask_params(num_nodes, in_degree, init_logit=2.0, temperature=0.5):
    """Fresh mask logits; the default biases early training toward keeping."""
    return MaskParams(
        node_logits=Tensor(np.full(num_nodes, init_logit), requires_grad=True),
        edge_logits=Tensor(np.full((num_nodes, in_degree), init_logit), requires_grad=True),
        temperature=temperature,
    )


@dataclass
class MaskSample:
    """One Bernoulli draw: hard 0/1 values plus the differentiable value."""

    hard: np.ndarray             # exact 0.0 / 1.0
    soft: Tensor                 # relaxed surrogate in (0, 1)
    value: Tensor                # straight-through: hard forward, soft backward
    stream: int


def sample_mask(logits, temperature, rng):
    """Draw a relaxed Bernoulli mask from keep-probability logits.

    hard = 1[sigmoid((logit + g) / temperature) > 0.5] with logistic noise
    g, which makes P(hard = 1) = sigmoid(logit) exactly for any
    temperature. The soft surrogate is the relaxed sigmoid itself.
    """
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    noise = rng.logistic(logits.shape)
    soft = ad.sigmoid((logits + Tensor(noise)) * (1.0 / temperature))
    hard = (soft.data > 0.5).astype(np.float64)
    return MaskSample(hard, soft, ad.straight_through(hard, soft), rng.stream)


def node_masked_view(g, x, m):
    """Zero masked nodes' feature rows; the edge set is untouched."""
    if m.hard.shape[0] != x.shape[0]:
        raise ContractError(f"node mask length {m.hard.shape[0]} != {x.shape[0]} nodes")
    return g, x * ad.reshape(m.value, (x.shape[0], 1))


def edge_masked_view(g, m):
    """Graph with masked edges dropped from message passing."""
    if m.hard.shape != g.src.shape:
        raise ContractError(f"edge mask shape {m.hard.shape} != slot layout {g.src.shape}")
    return dataclasses.replace(g, edge_mask=m.value)


def encode_views(x, g, mask_params, encoder, rng):
    """Encode the node-masked and edge-masked views with a block stack.

    Masks are redrawn at every layer from that layer's MaskParams. Per
    layer the attention rows of each view (heads averaged) are collected
    for the structure-compression term. With an empty encoder the masked
    inputs are returned as-is.

    Returns (e_nd, e_ed, aux) where aux holds per-layer attention rows
    and the drawn samples.
    """
    if len(mask_params) < max(1, len(encoder)):
        raise ContractError(
            f"need mask params for each of {len(encoder)} layers, got {len(mask_params)}")
    aux = {"attn_nd": [], "attn_ed": [], "node_samples": [], "edge_samples": []}
    if not encoder:
        m = sample_mask(mask_params[0].node_logits, mask_params[0].temperature,
                        rng.split(0))
        aux["node_samples"].append(m)
        _, e_nd = node_masked_view(g, x, m)
        return e_nd, x, aux

    e_nd, e_ed = x, x
    for layer, (params, block) in enumerate(zip(mask_params, encoder)):
        nm = sample_mask(params.node_logits, params.temperature,
                         rng.split(2 * layer))
        em = sample_mask(params.edge_logits, params.temperature,
                         rng.split(2 * layer + 1))
        aux["node_samples"].append(nm)
        aux["edge_samples"].append(em)

        _, x_nd = node_masked_view(g, e_nd, nm)
        heads_nd = []
        e_nd = blocks.ge_block(x_nd, g, block, collect_attention=heads_nd)
        aux["attn_nd"].append(_mean_heads(heads_nd))

        g_ed = edge_masked_view(g, em)
        heads_ed = []
        e_ed = blocks.ge_block(e_ed, g_ed, block, collect_attention=heads_ed)
        aux["attn_ed"].append(_mean_heads(heads_ed))
    return e_nd, e_ed, aux


def _mean_heads(rows):
    if not rows:
        return None
    acc = rows[0]
    for r in rows[1:]:
        acc = acc + r
    return acc * (1.0 / len(rows))

"""U-shaped patch-graph segmentation model and its training loop.

Encoder stages run a graph-embedding block on the current KNN patch
graph and then downsample the node grid with a strided 3x3 conv;
decoder stages mirror this with nearest-neighbor upsampling and a
skip-merge projection. Per-node class logits are broadcast to their
patch's pixels and refined, together with the raw image, by a final
3x3 conv.

Training minimizes normalized pixel cross-entropy plus an explicit
L2 parameter-norm term plus the two-view bottleneck loss, with AdamW
under a cosine learning-rate schedule and joint image/label flip
augmentation. Everything is deterministic given (config, seed).
"""

import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import blocks as bl
from . import bottleneck as ib
from . import masking as mk
from .autodiff import Tensor, backward
from .errors import ContractError, NumericError
from .graph import (averaging_kernel, downsample_graph, embed_patches,
                    grid_conv, grid_coords, knn_graph, split_patches,
                    upsample_nodes)
from .metrics import confusion, metrics
from .optim import AdamW, cosine_lr
from .rng import RngStream

GIB_STAGE_MODES = ("last", "all")


@dataclass
class SegModelConfig:
    classes: int = 3
    image_size: tuple = (64, 64)
    patch_size: int = 8
    embed_dim: int = 32
    stages: int = 2
    k_neighbors: int = 8
    heads: int = 4
    conv_variant: str = "gat"
    leaky_slope: float = 0.2
    beta: float = 0.1
    tau: float = 0.5
    mixture_m: int = 2
    node_masking: bool = True
    edge_masking: bool = True
    gib_stages: str = "last"
    mask_logit_init: float = 2.0
    epochs: int = 80
    batch_size: int = 32
    lr: float = 5e-4
    weight_decay: float = 1e-5
    optimizer_decay: float = 0.0
    squared_norm: bool = False
    flip_augment: bool = True
    seed: int = 0

    def stage_grids(self):
        """Node-grid dims consumed by each stage's block, plus the bottom grid."""
        h, w = self.image_size
        p = self.patch_size
        grids = [(math.ceil(h / p), math.ceil(w / p))]
        for _ in range(self.stages):
            r, c = grids[-1]
            grids.append((math.ceil(r / 2), math.ceil(c / 2)))
        return grids

    def validate(self):
        if self.classes < 2:
            raise ContractError(f"classes must be >= 2, got {self.classes}")
        if self.stages < 1:
            raise ContractError(f"stages must be >= 1, got {self.stages}")
        if self.embed_dim % self.heads != 0:
            raise ContractError(
                f"heads {self.heads} must divide embed_dim {self.embed_dim}")
        if self.conv_variant not in bl.VARIANTS:
            raise ContractError(
                f"unknown conv variant '{self.conv_variant}', expected one of {bl.VARIANTS}")
        if self.gib_stages not in GIB_STAGE_MODES:
            raise ContractError(
                f"gib_stages must be one of {GIB_STAGE_MODES}, got '{self.gib_stages}'")
        grids = self.stage_grids()
        for i, (r, c) in enumerate(grids[:-1]):
            if min(r, c) < 3:
                raise ContractError(
                    f"stage {i} grid {r}x{c} too small to downsample (needs >= 3)")
        if min(grids[-1]) < 2:
            raise ContractError(
                f"deepest grid {grids[-1][0]}x{grids[-1][1]} must be at least 2x2")
        return self


@dataclass
class SegModel:
    cfg: SegModelConfig
    embed: Tensor
    enc_blocks: list
    down_kernels: list
    dec_blocks: list
    merge: list
    w_cls: Tensor
    out_conv: Tensor
    mask_params: dict            # stage index -> MaskParams
    gib_heads: dict              # stage index -> GibHead
    params: dict = field(default_factory=dict)

    def view_stages(self):
        if self.cfg.gib_stages == "all":
            return list(range(self.cfg.stages))
        return [self.cfg.stages - 1]


def build_model(cfg, rng=None):
    """Deterministically initialize all parameters from (config, seed)."""
    cfg.validate()
    rng = rng or RngStream(cfg.seed, stream=1)
    d, c, p = cfg.embed_dim, cfg.classes, cfg.patch_size
    grids = cfg.stage_grids()

    model = SegModel(
        cfg=cfg,
        embed=bl.xavier_uniform((p * p * 3, d), rng),
        enc_blocks=[bl.init_ge_params(d, cfg.heads, rng, cfg.conv_variant,
                                      cfg.leaky_slope) for _ in range(cfg.stages)],
        down_kernels=[bl.xavier_uniform((9 * d, d), rng) for _ in range(cfg.stages)],
        dec_blocks=[bl.init_ge_params(d, cfg.heads, rng, cfg.conv_variant,
                                      cfg.leaky_slope) for _ in range(cfg.stages)],
        merge=[bl.xavier_uniform((2 * d, d), rng) for _ in range(cfg.stages)],
        w_cls=bl.xavier_uniform((d, c), rng),
        out_conv=bl.xavier_uniform((9 * (c + 3), c), rng),
        mask_params={},
        gib_heads={},
    )
    for s in model.view_stages():
        rows, cols_ = grids[s]
        n = rows * cols_
        in_deg = min(cfg.k_neighbors, n - 1)
        model.mask_params[s] = mk.init_mask_params(
            n, in_deg, cfg.mask_logit_init, cfg.tau)
        model.gib_heads[s] = ib.init_gib_head(d, c, cfg.mixture_m, rng)

    reg = {"embed": model.embed}
    for i, blk in enumerate(model.enc_blocks):
        reg.update(blk.named(f"enc{i}"))
        reg[f"down{i}"] = model.down_kernels[i]
    for i, blk in enumerate(model.dec_blocks):
        reg.update(blk.named(f"dec{i}"))
        reg[f"merge{i}"] = model.merge[i]
    reg["w_cls"] = model.w_cls
    reg["out_conv"] = model.out_conv
    for s in sorted(model.mask_params):
        reg.update(model.mask_params[s].named(f"mask{s}"))
        reg.update(model.gib_heads[s].named(f"gib{s}"))
    model.params = reg
    return model


@dataclass
class ForwardTrace:
    """Forward-pass outputs plus the hooks the loss and CLI need."""

    logits: Tensor               # [h*w, classes] at the original resolution
    shape: tuple                 # (h, w)
    padded: tuple                # (h_pad, w_pad)
    stage_graphs: list           # encoder PatchGraphs, by stage
    view_sites: dict             # stage -> (block input Tensor, PatchGraph, grid)

    def logits_hwc(self):
        h, w = self.shape
        return self.logits.data.reshape(h, w, -1)


def _pixel_node_index(padded, patch_size, grid):
    hp, wp = padded
    rows = np.arange(hp) // patch_size
    cols_ = np.arange(wp) // patch_size
    return (rows[:, None] * grid[1] + cols_[None, :]).reshape(-1).astype(np.int64)


def forward(model, image):
    """Per-pixel class logits for one image (any size >= patch_size)."""
    cfg = model.cfg
    pset = split_patches(image, cfg.patch_size)
    x = embed_patches(pset, model.embed)
    grid = pset.grid
    g = knn_graph(x, cfg.k_neighbors, coords=grid_coords(grid), grid=grid)

    stage_graphs = []
    view_sites = {}
    skips = []
    for i in range(cfg.stages):
        stage_graphs.append(g)
        if i in model.mask_params:
            view_sites[i] = (x, g, grid)
        y = bl.ge_block(x, g, model.enc_blocks[i])
        skips.append((y, grid))
        g, x = downsample_graph(g, y, model.down_kernels[i])
        grid = g.grid

    cur, cur_grid = x, grid
    for i in reversed(range(cfg.stages)):
        skip_feat, skip_grid = skips[i]
        up = upsample_nodes(cur, cur_grid, skip_grid)
        merged = ad.matmul(ad.concat([up, skip_feat], axis=1), model.merge[i])
        g_dec = knn_graph(merged, cfg.k_neighbors,
                          coords=grid_coords(skip_grid), grid=skip_grid)
        cur = bl.ge_block(merged, g_dec, model.dec_blocks[i])
        cur_grid = skip_grid

    node_logits = ad.matmul(cur, model.w_cls)
    hp, wp = pset.padded_size
    h, w = pset.original_size
    base = ad.gather_rows(node_logits, _pixel_node_index((hp, wp), cfg.patch_size,
                                                         cur_grid))
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    pad_h, pad_w = hp - h, wp - w
    img_pad = np.pad(img, ((0, pad_h), (0, pad_w), (0, 0)), mode="reflect") \
        if (pad_h or pad_w) else img
    conv_in = ad.concat([base, Tensor(img_pad.reshape(hp * wp, -1))], axis=1)
    out, _ = grid_conv(conv_in, (hp, wp), model.out_conv, stride=1)
    if pad_h or pad_w:
        keep = (np.arange(h)[:, None] * wp + np.arange(w)[None, :]).reshape(-1)
        out = ad.gather_rows(out, keep)
    return ForwardTrace(out, (h, w), (hp, wp), stage_graphs, view_sites)


def predict(model, image):
    """Argmax label map; ties go to the smaller class index."""
    trace = forward(model, image)
    h, w = trace.shape
    return np.argmax(trace.logits.data, axis=1).reshape(h, w)


# ---------------------------------------------------------------------------
# labels at node resolution


def _pad_labels(labels, padded):
    h, w = labels.shape
    hp, wp = padded
    if (hp, wp) == (h, w):
        return labels
    return np.pad(labels, ((0, hp - h), (0, wp - w)), mode="reflect")


def stage_node_labels(labels, padded, patch_size, grids, stage, classes):
    """Majority pixel label per node of the given stage's input grid."""
    lab = _pad_labels(np.asarray(labels, dtype=np.int64), padded)
    node0 = _pixel_node_index(padded, patch_size, grids[0])
    idx = node0
    for lvl in range(1, stage + 1):
        pr, pc = grids[lvl - 1]
        nr, nc = grids[lvl]
        r = idx // pc
        c = idx % pc
        idx = np.minimum(r // 2, nr - 1) * nc + np.minimum(c // 2, nc - 1)
    n = grids[stage][0] * grids[stage][1]
    tally = np.bincount(idx * classes + lab.reshape(-1), minlength=n * classes)
    return np.argmax(tally.reshape(n, classes), axis=1)


# ---------------------------------------------------------------------------
# losses


def parameter_norm(model):
    total = Tensor(0.0)
    for p in model.params.values():
        total = total + ad.tsum(p * p)
    return total if model.cfg.squared_norm else ad.sqrt(total)


def gib_view_loss(model, trace, labels, rng):
    """Two-view bottleneck loss summed over the configured stages."""
    cfg = model.cfg
    grids = cfg.stage_grids()
    total = Tensor(0.0)
    agg = ib.GibTerms()
    for stage, (x, g, grid) in sorted(trace.view_sites.items()):
        enc = [model.enc_blocks[stage]]
        mparams = [model.mask_params[stage]]
        e_nd, e_ed, aux = mk.encode_views(x, g, mparams, enc, rng.split(stage))
        node_labels = stage_node_labels(labels, trace.padded, cfg.patch_size,
                                        grids, stage, cfg.classes)
        view_nd = ib.ViewEncoding([e_nd], aux["attn_nd"]) if cfg.node_masking else None
        view_ed = ib.ViewEncoding([e_ed], aux["attn_ed"]) if cfg.edge_masking else None
        if view_nd is None and view_ed is None:
            continue
        loss, terms = ib.joint_view_loss(view_nd, view_ed, node_labels,
                                         [model.gib_heads[stage]], cfg.beta,
                                         rng.split(1000 + stage))
        total = total + loss
        agg.aib_per_layer.extend(terms.aib_per_layer)
        agg.xib_per_layer.extend(terms.xib_per_layer)
        agg.task_ce += terms.task_ce
    agg.total = float(total.item())
    return total, agg


def total_loss(model, trace, labels, rng):
    """Pixel CE + weight norm + the two-view bottleneck loss.

    Returns (scalar Tensor, dict of logged floats).
    """
    lab = np.asarray(labels, dtype=np.int64)
    ce = ib.mean_cross_entropy(trace.logits, lab.reshape(-1))
    gib, terms = gib_view_loss(model, trace, lab, rng)
    loss = ce + model.cfg.weight_decay * parameter_norm(model) + gib
    parts = {"ce": float(ce.item()), "aib": terms.aib_sum, "xib": terms.xib_sum,
             "gib_ce": terms.task_ce}
    return loss, parts


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    ce: float
    aib: float
    xib: float
    lr: float
    wall_time: float
    oa: float
    miou: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    CSV_FIELDS = ("epoch", "loss", "ce", "aib", "xib", "lr", "oa", "miou")

    def rows(self):
        """CSV rows (wall time excluded so reruns are byte-identical)."""
        return [[getattr(r, f) for f in self.CSV_FIELDS] for r in self.records]


def apply_flips(image, labels, flip_h, flip_v):
    """Jointly flip an image and its label map."""
    img, lab = image, labels
    if flip_h:
        img, lab = img[:, ::-1], lab[:, ::-1]
    if flip_v:
        img, lab = img[::-1], lab[::-1]
    return np.ascontiguousarray(img), np.ascontiguousarray(lab)


def flip_decisions(rng, epoch, index):
    """The (horizontal, vertical) coin flips used for one sample pass."""
    s = rng.split(3).split(epoch).split(index)
    u = s.uniform((2,))
    return bool(u[0] < 0.5), bool(u[1] < 0.5)


def _train_metrics(model, dataset):
    cm = None
    for item in dataset:
        c = confusion(predict(model, item.image), item.labels, model.cfg.classes)
        cm = c if cm is None else cm.add(c)
    rep = metrics(cm)
    return rep.oa, rep.miou


def train(model, dataset, progress=None):
    """Run the configured number of epochs over the dataset, in place.

    Deterministic given (config, seed): shuffling, flips, mask draws and
    reparameterization noise all derive from the config seed. Raises
    NumericError with epoch/batch provenance if the loss goes NaN.
    """
    cfg = model.cfg
    if not dataset:
        raise ContractError("training dataset is empty")
    log = TrainLog()
    rng = RngStream(cfg.seed, stream=2)
    opt = AdamW(model.params, lr=cfg.lr, weight_decay=cfg.optimizer_decay)
    n = len(dataset)
    batches = max(1, math.ceil(n / cfg.batch_size))
    total_steps = max(1, cfg.epochs * batches)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.split(1).split(epoch).permutation(n)
        sums = {"loss": 0.0, "ce": 0.0, "aib": 0.0, "xib": 0.0}
        lr_epoch = cfg.lr
        for b in range(batches):
            batch = order[b * cfg.batch_size: (b + 1) * cfg.batch_size]
            if batch.size == 0:
                continue
            lr_epoch = cosine_lr(step, total_steps, cfg.lr)
            losses = []
            for j in batch:
                item = dataset[int(j)]
                img, lab = item.image, item.labels
                if cfg.flip_augment:
                    fh, fv = flip_decisions(rng, epoch, int(j))
                    img, lab = apply_flips(img, lab, fh, fv)
                sample_rng = rng.split(2).split(epoch).split(int(j))
                try:
                    trace = forward(model, img)
                    loss_j, parts = total_loss(model, trace, lab, sample_rng)
                except NumericError as e:
                    raise NumericError(
                        f"numeric failure at epoch {epoch}, batch {b}: {e}")
                losses.append(loss_j)
                for k in ("ce", "aib", "xib"):
                    sums[k] += parts[k] / n
            batch_loss = losses[0]
            for extra in losses[1:]:
                batch_loss = batch_loss + extra
            batch_loss = batch_loss * (1.0 / len(losses))
            if np.isnan(batch_loss.data).any():
                raise NumericError(f"NaN loss at epoch {epoch}, batch {b}")
            sums["loss"] += float(batch_loss.item()) * len(losses) / n
            backward(batch_loss, model.params.values())
            opt.step(lr_epoch)
            opt.zero_grad()
            step += 1
        oa, miou = _train_metrics(model, dataset)
        rec = EpochRecord(epoch, sums["loss"], sums["ce"], sums["aib"], sums["xib"],
                          lr_epoch, time.perf_counter() - t0, oa, miou)
        log.records.append(rec)
        if progress:
            progress(rec)
    return log


def config_to_dict(cfg):
    return {f.name: getattr(cfg, f.name) for f in fields(SegModelConfig)}

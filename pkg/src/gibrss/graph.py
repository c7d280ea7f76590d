"""Images as directed KNN patch graphs.

An image is tiled into non-overlapping patches (reflect-padded to a
multiple of the patch size), each patch becomes a node, and directed
edges j -> i link every node i to its k nearest neighbors in feature
space. Graphs are rebuilt from the current features after every
resolution change, so the topology tracks the learned representation.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError


@dataclass
class PatchSet:
    """Flattened pixel blocks plus the grid they tile."""

    patches: np.ndarray          # [rows*cols, patch_size**2 * channels]
    grid: tuple                  # (rows, cols)
    patch_size: int
    channels: int
    padded_size: tuple           # (H_pad, W_pad)
    original_size: tuple         # (H, W) before padding


@dataclass
class PatchGraph:
    """Directed KNN graph over patch nodes.

    Edges are stored as a dense slot matrix: src[i, s] is the s-th
    in-neighbor of node i, slots ordered by ascending source index.
    Every node has exactly min(k, n-1) in-edges and no self-loops
    (the self contribution is a separate path in the conv).
    """

    node_features: Tensor
    src: np.ndarray              # [n, in_degree] int64
    k: int                       # requested neighbor count
    coords: np.ndarray           # [n, 2] (row, col) grid position
    grid: tuple                  # (rows, cols)
    relations: tuple = ("spatial",)   # single relation for image graphs
    edge_weights: np.ndarray = None   # optional, aligned with edge_list()
    edge_mask: object = None          # optional [n, in_degree] keep tensor (edge view)
    notes: list = field(default_factory=list)

    @property
    def num_nodes(self):
        return self.src.shape[0]

    @property
    def in_degree(self):
        return self.src.shape[1]

    def edge_list(self):
        """Directed (src, dst) pairs in destination-major slot order."""
        n, s = self.src.shape
        dst = np.repeat(np.arange(n, dtype=np.int64), s)
        return np.stack([self.src.reshape(-1), dst], axis=1)


def split_patches(image, patch_size):
    """Tile an H x W x C image into non-overlapping patches, row-major.

    When H or W is not divisible by patch_size the image is reflect-padded
    on the bottom/right edges first.
    """
    if patch_size <= 0:
        raise ContractError(f"patch_size must be positive, got {patch_size}")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    if h < patch_size or w < patch_size:
        raise ContractError(f"image {h}x{w} smaller than patch_size {patch_size}")
    pad_h = (-h) % patch_size
    pad_w = (-w) % patch_size
    if pad_h or pad_w:
        img = np.pad(img, ((0, pad_h), (0, pad_w), (0, 0)), mode="reflect")
    hp, wp = img.shape[:2]
    rows, cols_ = hp // patch_size, wp // patch_size
    blocks = img.reshape(rows, patch_size, cols_, patch_size, c)
    blocks = blocks.transpose(0, 2, 1, 3, 4).reshape(rows * cols_, patch_size * patch_size * c)
    return PatchSet(blocks, (rows, cols_), patch_size, c, (hp, wp), (h, w))


def reassemble_patches(pset):
    """Inverse of split_patches over the padded extent."""
    rows, cols_ = pset.grid
    p, c = pset.patch_size, pset.channels
    blocks = pset.patches.reshape(rows, cols_, p, p, c)
    return blocks.transpose(0, 2, 1, 3, 4).reshape(rows * p, cols_ * p, c)


def grid_coords(grid):
    rows, cols_ = grid
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols_), indexing="ij")
    return np.stack([rr.reshape(-1), cc.reshape(-1)], axis=1).astype(np.int64)


def embed_patches(pset, projection):
    """Project flattened patches to node features X = P @ W."""
    expected = pset.patch_size ** 2 * pset.channels
    if projection.shape[0] != expected:
        raise DimensionError(
            f"projection rows {projection.shape[0]} != patch dim {expected}")
    return ad.matmul(Tensor(pset.patches), projection)


def knn_graph(x, k, coords=None, grid=None):
    """Directed KNN graph by squared Euclidean distance in feature space.

    Ties break toward the smaller node index; k >= n is clamped to n - 1
    and recorded in the graph notes.
    """
    feats = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    data = feats.data
    if data.ndim != 2:
        raise DimensionError(f"knn_graph expects [n, d] features, got {data.shape}")
    n = data.shape[0]
    if n < 2:
        raise ContractError(f"knn_graph needs at least 2 nodes, got {n}")
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    notes = []
    eff_k = k
    if k >= n:
        eff_k = n - 1
        notes.append(f"k={k} clamped to {eff_k} for n={n} nodes")
    sq = (data * data).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (data @ data.T)
    np.fill_diagonal(d2, np.inf)
    # stable sort keeps ascending index among equal distances
    neighbor_order = np.argsort(d2, axis=1, kind="stable")[:, :eff_k]
    src = np.sort(neighbor_order, axis=1).astype(np.int64)
    if coords is None:
        side = int(np.ceil(np.sqrt(n)))
        grid = grid or (side, max(1, int(np.ceil(n / side))))
        coords = grid_coords(grid)[:n]
    return PatchGraph(feats, src, k, np.asarray(coords, dtype=np.int64),
                      grid or (n, 1), notes=notes)


def conv_indices(h, w, ksize, stride):
    """Gather indices realizing a reflect-padded ksize x ksize convolution.

    Returns (flat index array of length oh*ow*ksize**2, (oh, ow)).
    """
    if h < ksize or w < ksize:
        raise ContractError(f"grid {h}x{w} smaller than kernel {ksize}x{ksize}")
    pad = ksize // 2
    ridx = np.pad(np.arange(h), pad, mode="reflect")
    cidx = np.pad(np.arange(w), pad, mode="reflect")
    oh = (h + 2 * pad - ksize) // stride + 1
    ow = (w + 2 * pad - ksize) // stride + 1
    out_r = np.arange(oh) * stride
    out_c = np.arange(ow) * stride
    win_r = ridx[out_r[:, None] + np.arange(ksize)[None, :]]    # [oh, ksize]
    win_c = cidx[out_c[:, None] + np.arange(ksize)[None, :]]    # [ow, ksize]
    flat = (win_r[:, None, :, None] * w + win_c[None, :, None, :])
    return flat.reshape(-1).astype(np.int64), (oh, ow)


def grid_conv(features, grid, kernel, stride=1, ksize=3):
    """Convolve node/pixel features laid out on a row-major grid.

    features: Tensor [h*w, C]; kernel: Tensor [ksize**2 * C, C_out],
    flattened slot-major then channel. Reflect padding keeps constant
    fields constant under an averaging kernel.
    """
    h, w = grid
    c = features.shape[1]
    if kernel.shape[0] != ksize * ksize * c:
        raise DimensionError(
            f"kernel rows {kernel.shape[0]} != {ksize}x{ksize}x{c}")
    idx, out_grid = conv_indices(h, w, ksize, stride)
    patches = ad.gather_rows(features, idx)                       # [oN*k2, C]
    patches = ad.reshape(patches, (out_grid[0] * out_grid[1], ksize * ksize * c))
    return ad.matmul(patches, kernel), out_grid


def averaging_kernel(channels, ksize=3):
    """Depthwise mean-pool kernel; preserves constant fields exactly."""
    k2 = ksize * ksize
    w = np.zeros((k2 * channels, channels))
    for s in range(k2):
        w[s * channels: (s + 1) * channels] = np.eye(channels) / k2
    return w


def downsample_graph(g, features, kernel):
    """Strided 3x3 conv halving each grid side (ceil), then KNN rebuild.

    Returns the new graph (same requested k, clamped as needed) and the
    new node features.
    """
    rows, cols_ = g.grid
    out, out_grid = grid_conv(features, (rows, cols_), kernel, stride=2, ksize=3)
    new_graph = knn_graph(out, g.k, coords=grid_coords(out_grid), grid=out_grid)
    return new_graph, out


def upsample_nodes(features, from_grid, to_grid):
    """Nearest-neighbor replication onto a finer grid, row-major order."""
    fr, fc = from_grid
    tr, tc = to_grid
    if tr < fr or tc < fc:
        raise ContractError(f"upsample target {to_grid} smaller than source {from_grid}")
    rr = (np.arange(tr) * fr) // tr
    cc = (np.arange(tc) * fc) // tc
    idx = (rr[:, None] * fc + cc[None, :]).reshape(-1).astype(np.int64)
    return ad.gather_rows(features, idx)


def graph_dump(g):
    """JSON-ready dict of the dump format consumed by the CLI."""
    edges = g.edge_list()
    if g.edge_weights is not None:
        weights = np.asarray(g.edge_weights, dtype=np.float64).reshape(-1)
    else:
        weights = np.ones(len(edges))
    return {
        "num_nodes": int(g.num_nodes),
        "K": int(g.k),
        "edges": [[int(s), int(d), float(w)] for (s, d), w in zip(edges, weights)],
        "coords": [[int(r), int(c)] for r, c in g.coords],
        "notes": list(g.notes),
    }

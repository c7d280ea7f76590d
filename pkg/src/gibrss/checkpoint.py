"""Binary checkpoint format, bit-exact across platforms.

Layout: magic "GIBRSS1", format version u32, record count u32, then
records of (u32 name length, UTF-8 name, u32 rank, u32 extents...,
float32 little-endian data). Config fields are stored as "config/..."
records ahead of the parameters, so a checkpoint rebuilds its model
without outside information.
"""

import struct

import numpy as np

from .blocks import VARIANTS
from .errors import ContractError, FileFormatError
from .model import GIB_STAGE_MODES, SegModelConfig, build_model

MAGIC = b"GIBRSS1"
VERSION = 1

_BOOL_FIELDS = ("node_masking", "edge_masking", "squared_norm", "flip_augment")
_INT_FIELDS = ("classes", "patch_size", "embed_dim", "stages", "k_neighbors",
               "heads", "mixture_m", "epochs", "batch_size", "seed")
_FLOAT_FIELDS = ("leaky_slope", "beta", "tau", "mask_logit_init", "lr",
                 "weight_decay", "optimizer_decay")


def _config_records(cfg):
    rec = {}
    for name in _INT_FIELDS + _FLOAT_FIELDS:
        rec[f"config/{name}"] = np.array([getattr(cfg, name)], dtype=np.float64)
    for name in _BOOL_FIELDS:
        rec[f"config/{name}"] = np.array([1.0 if getattr(cfg, name) else 0.0])
    rec["config/image_size"] = np.array(cfg.image_size, dtype=np.float64)
    rec["config/conv_variant"] = np.array([VARIANTS.index(cfg.conv_variant)],
                                          dtype=np.float64)
    rec["config/gib_stages"] = np.array([GIB_STAGE_MODES.index(cfg.gib_stages)],
                                        dtype=np.float64)
    return rec


def _config_from_records(rec):
    kwargs = {}
    for name in _INT_FIELDS:
        kwargs[name] = int(rec[f"config/{name}"][0])
    for name in _FLOAT_FIELDS:
        kwargs[name] = float(rec[f"config/{name}"][0])
    for name in _BOOL_FIELDS:
        kwargs[name] = bool(rec[f"config/{name}"][0])
    kwargs["image_size"] = tuple(int(v) for v in rec["config/image_size"])
    kwargs["conv_variant"] = VARIANTS[int(rec["config/conv_variant"][0])]
    kwargs["gib_stages"] = GIB_STAGE_MODES[int(rec["config/gib_stages"][0])]
    return SegModelConfig(**kwargs)


def _write_record(f, name, array):
    encoded = name.encode("utf-8")
    f.write(struct.pack("<I", len(encoded)))
    f.write(encoded)
    arr = np.asarray(array, dtype=np.float64)
    f.write(struct.pack("<I", arr.ndim))
    for extent in arr.shape:
        f.write(struct.pack("<I", extent))
    f.write(arr.astype("<f4").tobytes())


def save_checkpoint(model, path):
    records = _config_records(model.cfg)
    for name, tensor in model.params.items():
        records[f"param/{name}"] = tensor.data
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(records)))
        for name, arr in records.items():
            _write_record(f, name, arr)
    return path


def _read_exact(f, n, path):
    buf = f.read(n)
    if len(buf) != n:
        raise FileFormatError(f"checkpoint {path} truncated")
    return buf


def load_checkpoint(path):
    """Rebuild the model stored at `path` (float32 round-trip applies)."""
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise FileFormatError(f"{path} is not a checkpoint (bad magic)")
        version = struct.unpack("<I", _read_exact(f, 4, path))[0]
        if version != VERSION:
            raise FileFormatError(f"unsupported checkpoint version {version}")
        count = struct.unpack("<I", _read_exact(f, 4, path))[0]
        records = {}
        for _ in range(count):
            name_len = struct.unpack("<I", _read_exact(f, 4, path))[0]
            name = _read_exact(f, name_len, path).decode("utf-8")
            rank = struct.unpack("<I", _read_exact(f, 4, path))[0]
            shape = tuple(struct.unpack("<I", _read_exact(f, 4, path))[0]
                          for _ in range(rank))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(f, 4 * n, path), dtype="<f4")
            records[name] = data.reshape(shape).astype(np.float64)

    cfg = _config_from_records(records)
    model = build_model(cfg)
    for name, tensor in model.params.items():
        key = f"param/{name}"
        if key not in records:
            raise ContractError(f"checkpoint missing parameter '{name}'")
        if records[key].shape != tensor.data.shape:
            raise ContractError(
                f"parameter '{name}' shape {records[key].shape} != {tensor.data.shape}")
        tensor.data = records[key]
    return model

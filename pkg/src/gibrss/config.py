"""Flat key=value run configuration and ablation sweep files.

Lines are `key = value`; blank lines and `#` comments are ignored.
Unknown keys are rejected by name. See DEFAULTS for the full key set.
"""

import os

from .errors import ContractError
from .model import SegModelConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_bool(v, key):
    s = str(v).strip().lower()
    if s in _TRUE:
        return True
    if s in _FALSE:
        return False
    raise ContractError(f"config key '{key}' expects a boolean, got '{v}'")


# key -> (type tag, default)
DEFAULTS = {
    # dataset: either a manifest path or synthetic generation parameters
    "data": ("str", ""),
    "synth_n": ("int", 8),
    "synth_size": ("int", 64),
    "synth_classes": ("int", 3),
    "synth_seed": ("int", 0),
    "eval_n": ("int", 4),
    "eval_seed": ("int", 1000),
    # model
    "patch_size": ("int", 8),
    "embed_dim": ("int", 32),
    "stages": ("int", 2),
    "k_neighbors": ("int", 8),
    "heads": ("int", 4),
    "conv_variant": ("str", "gat"),
    "leaky_slope": ("float", 0.2),
    # bottleneck
    "beta": ("float", 0.1),
    "tau": ("float", 0.5),
    "mixture_m": ("int", 2),
    "node_masking": ("bool", True),
    "edge_masking": ("bool", True),
    "gib_stages": ("str", "last"),
    "mask_logit_init": ("float", 2.0),
    # training
    "epochs": ("int", 80),
    "batch_size": ("int", 32),
    "lr": ("float", 5e-4),
    "weight_decay": ("float", 1e-5),
    "optimizer_decay": ("float", 0.0),
    "squared_norm": ("bool", False),
    "flip_augment": ("bool", True),
    "seed": ("int", 0),
    # output
    "out_dir": ("str", "out"),
}

_CASTS = {"int": int, "float": float, "str": lambda s: s.strip().lower()
          if s.strip().lower() in ("gat", "edgeconv", "gin", "graphsage", "last", "all")
          else s.strip()}


def parse_kv_lines(text, path="<config>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"{path}:{lineno}: expected 'key = value', got '{raw.strip()}'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_run_config(path, overrides=None):
    """Parse a run config file into a fully defaulted dict."""
    with open(path) as f:
        raw = parse_kv_lines(f.read(), path)
    cfg = {k: d for k, (_, d) in DEFAULTS.items()}
    for key, value in raw.items():
        if key not in DEFAULTS:
            raise ContractError(f"unknown config key '{key}'")
        kind = DEFAULTS[key][0]
        try:
            cfg[key] = _parse_bool(value, key) if kind == "bool" else _CASTS[kind](value)
        except ValueError:
            raise ContractError(f"config key '{key}' expects {kind}, got '{value}'")
    for key, value in (overrides or {}).items():
        cfg[key] = value
    return cfg


def model_config(run_cfg, image_size, classes):
    """SegModelConfig from a run-config dict plus data-derived fields."""
    return SegModelConfig(
        classes=classes, image_size=tuple(image_size),
        patch_size=run_cfg["patch_size"], embed_dim=run_cfg["embed_dim"],
        stages=run_cfg["stages"], k_neighbors=run_cfg["k_neighbors"],
        heads=run_cfg["heads"], conv_variant=run_cfg["conv_variant"],
        leaky_slope=run_cfg["leaky_slope"], beta=run_cfg["beta"],
        tau=run_cfg["tau"], mixture_m=run_cfg["mixture_m"],
        node_masking=run_cfg["node_masking"], edge_masking=run_cfg["edge_masking"],
        gib_stages=run_cfg["gib_stages"], mask_logit_init=run_cfg["mask_logit_init"],
        epochs=run_cfg["epochs"], batch_size=run_cfg["batch_size"],
        lr=run_cfg["lr"], weight_decay=run_cfg["weight_decay"],
        optimizer_decay=run_cfg["optimizer_decay"],
        squared_norm=run_cfg["squared_norm"], flip_augment=run_cfg["flip_augment"],
        seed=run_cfg["seed"]).validate()


SWEEP_KEYS = {
    "variants": ("conv_variant", str),
    "k": ("k_neighbors", int),
    "node_masking": ("node_masking", None),
    "edge_masking": ("edge_masking", None),
    "seeds": ("seed", int),
}


def load_sweep(path):
    """Parse a sweep file into {config key: [values...]}; validated up front."""
    with open(path) as f:
        raw = parse_kv_lines(f.read(), path)
    sweep = {}
    for key, value in raw.items():
        if key not in SWEEP_KEYS:
            raise ContractError(
                f"unknown sweep key '{key}', expected one of {sorted(SWEEP_KEYS)}")
        target, cast = SWEEP_KEYS[key]
        values = []
        for tok in value.split(","):
            tok = tok.strip()
            if not tok:
                continue
            if cast is None:
                values.append(_parse_bool(tok, key))
            elif cast is str:
                values.append(tok.lower())
            else:
                try:
                    values.append(cast(tok))
                except ValueError:
                    raise ContractError(f"sweep key '{key}' has invalid value '{tok}'")
        if not values:
            raise ContractError(f"sweep key '{key}' lists no values")
        sweep[target] = values
    if not sweep:
        raise ContractError(f"sweep file {os.path.basename(path)} defines no axes")
    for variant in sweep.get("conv_variant", []):
        if variant not in ("gat", "edgeconv", "gin", "graphsage"):
            raise ContractError(f"sweep lists unknown conv variant '{variant}'")
    for k in sweep.get("k_neighbors", []):
        if k < 1:
            raise ContractError(f"sweep lists invalid k {k}")
    return sweep

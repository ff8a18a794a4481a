"""Weight storage: a flat little-endian float32 blob plus a JSON manifest.

Manifest layout::

    {"format_version": 1, "data": "weights.bin",
     "tensors": [{"name": ..., "shape": [...], "offset": <bytes>}, ...]}

Toy weights come from :func:`init_weights`, which draws from numpy's PCG64
generator (``numpy.random.default_rng(seed)``) in a fixed parameter order, so
the same seed always yields the same tensors.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from .config import ModelConfig
from .errors import InvalidArgument

FORMAT_VERSION = 1


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Ordered mapping of parameter name to shape. Order fixes the RNG stream."""
    shapes: dict[str, tuple] = {}
    d_in = 1
    for i, (w, _) in enumerate(cfg.extractor_convs):
        shapes[f"extractor.conv{i}.w"] = (w, d_in, cfg.d_feat)
        shapes[f"extractor.conv{i}.b"] = (cfg.d_feat,)
        d_in = cfg.d_feat

    shapes["encoder.in.w"] = (cfg.d_feat, cfg.d_enc)
    shapes["encoder.in.b"] = (cfg.d_enc,)
    _transformer_shapes(shapes, "encoder", cfg.enc_layers, cfg.d_enc, cfg.enc_ffn)

    shapes["adapter.conv0.w"] = (cfg.adapter_kernel, cfg.d_enc, cfg.d_adapter)
    shapes["adapter.conv0.b"] = (cfg.d_adapter,)
    shapes["adapter.conv1.w"] = (cfg.adapter_kernel, cfg.d_adapter, cfg.d_adapter)
    shapes["adapter.conv1.b"] = (cfg.d_adapter,)
    shapes["adapter.proj.w"] = (cfg.d_adapter, cfg.d_model)
    shapes["adapter.proj.b"] = (cfg.d_model,)

    shapes["decoder.tok_emb"] = (cfg.vocab_size, cfg.d_model)
    _transformer_shapes(shapes, "decoder", cfg.dec_layers, cfg.d_model, cfg.dec_ffn)
    shapes["decoder.out.w"] = (cfg.d_model, cfg.vocab_size)
    shapes["decoder.out.b"] = (cfg.vocab_size,)
    return shapes


def _transformer_shapes(shapes, prefix, layers, d, ffn):
    for i in range(layers):
        p = f"{prefix}.layers.{i}"
        for ln in ("ln1", "ln2"):
            shapes[f"{p}.{ln}.g"] = (d,)
            shapes[f"{p}.{ln}.b"] = (d,)
        for m in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{m}"] = (d, d)
        shapes[f"{p}.ffn.w1"] = (d, ffn)
        shapes[f"{p}.ffn.b1"] = (ffn,)
        shapes[f"{p}.ffn.w2"] = (ffn, d)
        shapes[f"{p}.ffn.b2"] = (d,)
    shapes[f"{prefix}.ln_f.g"] = (d,)
    shapes[f"{prefix}.ln_f.b"] = (d,)


def init_weights(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Deterministic float64 toy weights.

    Matrices are N(0, 1/fan_in); biases N(0, 0.02^2); layer-norm gains are
    1 + N(0, 0.02^2) and layer-norm shifts N(0, 0.02^2).
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name.endswith("tok_emb"):
            params[name] = rng.standard_normal(shape)
        elif len(shape) == 1:
            noise = 0.02 * rng.standard_normal(shape)
            params[name] = 1.0 + noise if leaf == "g" else noise
        else:
            fan_in = math.prod(shape[:-1])
            params[name] = rng.standard_normal(shape) / math.sqrt(fan_in)
    return params


def save_weights(params: dict, manifest_path, data_path=None) -> None:
    manifest_path = os.fspath(manifest_path)
    if data_path is None:
        data_path = os.path.splitext(manifest_path)[0] + ".bin"
    tensors = []
    offset = 0
    with open(data_path, "wb") as fh:
        for name, arr in params.items():
            blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            fh.write(blob)
            tensors.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
            offset += len(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "data": os.path.relpath(data_path, os.path.dirname(os.path.abspath(manifest_path))),
        "tensors": tensors,
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_weights(manifest_path) -> dict[str, np.ndarray]:
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise InvalidArgument(f"unsupported weight format {manifest.get('format_version')!r}")
    data_path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)), manifest["data"])
    raw = np.fromfile(data_path, dtype="<f4")
    params = {}
    for t in manifest["tensors"]:
        shape = tuple(t["shape"])
        start = t["offset"] // 4
        count = math.prod(shape)
        if start + count > raw.size:
            raise InvalidArgument(f"tensor {t['name']} runs past end of {data_path}")
        arr = raw[start:start + count].reshape(shape).astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise InvalidArgument(f"tensor {t['name']} contains non-finite values")
        params[t["name"]] = arr
    return params

"""Binary checkpoint container.

Layout::

    b"MMDGM1"
    uint64 little-endian: manifest length in bytes
    manifest: UTF-8 JSON (tensor names, shapes, offsets, metadata)
    payload: little-endian float64 tensors, back to back

The manifest carries the payload length and CRC-32 so truncation and bit rot
are reported instead of silently producing garbage.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .maxmargin import ClassifierState
from .networks import DecoderParams, EncoderParams, Layer, MlpParams
from .optimizer import AdamState
from .trainer import GROUPS, ModelState

MAGIC = b"MMDGM1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _trunk_acts(mlp):
    return [layer.act for layer in mlp.layers]


def _tensors(state: ModelState):
    out = dict(state.all_params())
    for g in GROUPS:
        adam = state.adam[g]
        for name in sorted(adam.m):
            out[f"adam.{g}.m.{name}"] = adam.m[name]
            out[f"adam.{g}.v.{name}"] = adam.v[name]
    return out


def to_bytes(state: ModelState, config=None):
    tensors = _tensors(state)
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    meta = {
        "epoch": state.epoch,
        "seed": state.seed,
        "feature_mode": state.cls.feature_mode,
        "prior_var": state.cls.prior_var,
        "encoder_acts": _trunk_acts(state.phi.trunk),
        "decoder_acts": _trunk_acts(state.theta.trunk),
        "adam": {
            g: {"base_lr": a.base_lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "t": a.t}
            for g, a in state.adam.items()
        },
        "history": state.history,
        "config": _config_dict(config),
    }
    manifest = {
        "format_version": FORMAT_VERSION,
        "tensors": entries,
        "payload_bytes": len(payload),
        "payload_crc32": zlib.crc32(payload),
        "meta": meta,
    }
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(text)) + text + payload


def _config_dict(config):
    if config is None:
        return None
    d = asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def checkpoint_save(state: ModelState, path, config=None):
    path = Path(path)
    data = to_bytes(state, config)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    tmp.replace(path)


def from_bytes(data: bytes, source="<bytes>"):
    if len(data) < len(MAGIC) + 8 or not data.startswith(MAGIC):
        raise CheckpointError(f"{source}: not an MMDGM1 checkpoint (bad magic)")
    (mlen,) = struct.unpack_from("<Q", data, len(MAGIC))
    start = len(MAGIC) + 8
    if start + mlen > len(data):
        raise CheckpointError(f"{source}: truncated manifest")
    try:
        manifest = json.loads(data[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt manifest ({exc})") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version!r} (expected {FORMAT_VERSION})")
    payload = data[start + mlen:]
    if len(payload) != manifest["payload_bytes"]:
        raise CheckpointError(
            f"{source}: truncated or padded payload ({len(payload)} bytes, manifest says {manifest['payload_bytes']})"
        )
    if zlib.crc32(payload) != manifest["payload_crc32"]:
        raise CheckpointError(f"{source}: payload checksum mismatch")
    tensors = {}
    for e in manifest["tensors"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        tensors[e["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(e["shape"])
    return _build_state(tensors, manifest["meta"]), manifest["meta"].get("config")


def _build_state(t, meta):
    enc = MlpParams([
        Layer(t[f"enc.l{i}.W"], t[f"enc.l{i}.b"], act) for i, act in enumerate(meta["encoder_acts"])
    ])
    phi = EncoderParams(enc, Layer(t["enc.mu.W"], t["enc.mu.b"]), Layer(t["enc.logvar.W"], t["enc.logvar.b"]))
    dec = MlpParams([
        Layer(t[f"dec.l{i}.W"], t[f"dec.l{i}.b"], act) for i, act in enumerate(meta["decoder_acts"])
    ])
    theta = DecoderParams(dec, Layer(t["dec.out.W"], t["dec.out.b"]))
    cls = ClassifierState(t["cls.lambda"], meta["prior_var"], meta["feature_mode"])
    adam = {}
    for g, hyper in meta["adam"].items():
        prefix_m, prefix_v = f"adam.{g}.m.", f"adam.{g}.v."
        m = {k[len(prefix_m):]: v for k, v in t.items() if k.startswith(prefix_m)}
        v = {k[len(prefix_v):]: v for k, v in t.items() if k.startswith(prefix_v)}
        adam[g] = AdamState(hyper["base_lr"], hyper["beta1"], hyper["beta2"], hyper["eps"], hyper["t"], m, v)
    return ModelState(theta, phi, cls, adam, meta["epoch"], meta["seed"], list(meta["history"]))


def checkpoint_load(path):
    """Returns ``(state, config_dict_or_None)``."""
    path = Path(path)
    return from_bytes(path.read_bytes(), str(path))

"""Model checkpoints as a flat tensor archive plus a parameter manifest.

Layout of a checkpoint directory::

    params.f32      every tensor of the state dict, flattened and concatenated
    params.meta     sidecar in the usual tensor-file format
    manifest.tsv    name, dtype, shape, offset (in values) per tensor
    meta.json       kind, model config, compatibility dims, training state
    optimizer.pt    optional optimizer state, for resuming

Integer buffers (BatchNorm step counters) are stored as float32 and cast
back on load; they stay exact below 2**24.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data_model import read_tensor, write_tensor

KINDS = ("convlstm", "cgan", "head")
_FILES = ("params.f32", "params.meta", "manifest.tsv", "meta.json")


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict
    state: dict
    meta: dict = field(default_factory=dict)
    optimizer: object = None
    sha256: str = ""


def _flatten(state: dict):
    rows, chunks, offset = [], [], 0
    for name, t in state.items():
        arr = t.detach().cpu().numpy()
        rows.append((name, str(arr.dtype), ",".join(str(s) for s in arr.shape), offset))
        chunks.append(arr.astype(np.float64).ravel())
        offset += arr.size
    flat = np.concatenate(chunks) if chunks else np.zeros(0)
    return flat, rows


def checkpoint_hash(path) -> str:
    """sha256 over the archive, manifest and metadata, in a fixed order."""
    path = Path(path)
    h = hashlib.sha256()
    for name in _FILES:
        f = path / name
        if not f.exists():
            raise CheckpointError(f"{path}: missing {name}")
        h.update(name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def save_checkpoint(path, kind: str, state: dict, config: dict, meta: dict | None = None,
                    optimizer=None) -> str:
    """Write a checkpoint directory and return its hash."""
    if kind not in KINDS:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    flat, rows = _flatten(state)
    write_tensor(path / "params.f32", flat.reshape(-1, 1, 1), range_tag="none", sensor="params")
    with open(path / "manifest.tsv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(("name", "dtype", "shape", "offset"))
        w.writerows(rows)
    doc = {"kind": kind, "config": config, **(meta or {})}
    (path / "meta.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    opt_file = path / "optimizer.pt"
    if optimizer is not None:
        torch.save(optimizer, opt_file)
    elif opt_file.exists():
        opt_file.unlink()
    return checkpoint_hash(path)


def load_checkpoint(path, kind: str | None = None) -> Checkpoint:
    path = Path(path)
    if not path.is_dir():
        raise CheckpointError(f"checkpoint {path} not found")
    digest = checkpoint_hash(path)
    try:
        doc = json.loads((path / "meta.json").read_text(encoding="utf-8"))
        flat, _ = read_tensor(path / "params.f32")
    except (ValueError, OSError) as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    if kind is not None and doc.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {doc.get('kind')!r}")
    flat = flat.ravel()
    state = {}
    with open(path / "manifest.tsv", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))[1:]
    for name, dtype, shape, offset in rows:
        dims = tuple(int(s) for s in shape.split(",")) if shape else ()
        start = int(offset)
        size = int(np.prod(dims)) if dims else 1
        if start + size > flat.size:
            raise CheckpointError(f"{path}: tensor {name} runs past the archive")
        arr = flat[start:start + size].reshape(dims).astype(np.dtype(dtype))
        state[name] = torch.from_numpy(arr)
    opt = None
    if (path / "optimizer.pt").exists():
        opt = torch.load(path / "optimizer.pt", weights_only=False)
    config = doc.pop("config", {})
    return Checkpoint(doc.pop("kind"), config, state, doc, opt, digest)


# ---------------------------------------------------------------- model (de)serialization

def _tuples(d: dict, keys) -> dict:
    return {k: tuple(v) if k in keys and v is not None else v for k, v in d.items()}


def convlstm_config(cfg: dict):
    from .convlstm import ConvLSTMConfig
    return ConvLSTMConfig(**_tuples(cfg, ("size", "hidden")))


def cgan_config(cfg: dict):
    from .cgan import CGANConfig, DiscriminatorConfig, GeneratorConfig
    rest = {k: v for k, v in cfg.items() if k not in ("generator", "discriminator")}
    return CGANConfig(generator=GeneratorConfig(**cfg["generator"]),
                      discriminator=DiscriminatorConfig(**_tuples(cfg["discriminator"], ("gammas",))),
                      **rest)


def head_config(cfg: dict):
    from .head import HeadConfig
    return HeadConfig(**cfg)


def save_convlstm(path, model, meta=None, optimizer=None) -> str:
    h, w = model.cfg.size
    dims = {"W": w, "H": h, "n": model.cfg.n_frames}
    return save_checkpoint(path, "convlstm", model.state_dict(), asdict(model.cfg),
                           {"dims": dims, **(meta or {})}, optimizer)


def save_cgan(path, cfg, G, D1, D2, meta=None, optimizer=None) -> str:
    state = {f"{p}.{k}": v for p, m in (("G", G), ("D1", D1), ("D2", D2))
             for k, v in m.state_dict().items()}
    dims = {"W": cfg.size, "H": cfg.size}
    return save_checkpoint(path, "cgan", state, asdict(cfg), {"dims": dims, **(meta or {})}, optimizer)


def save_head(path, model, meta=None, optimizer=None) -> str:
    dims = {"classes": model.n_classes}
    return save_checkpoint(path, "head", model.state_dict(), asdict(model.cfg),
                           {"dims": dims, **(meta or {})}, optimizer)


def _load_state(model, state, path):
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameters do not fit the stored config: {exc}") from None
    model.eval()
    return model


def load_convlstm(path):
    from .convlstm import ConvLSTMNet
    ck = load_checkpoint(path, "convlstm")
    return _load_state(ConvLSTMNet(convlstm_config(ck.config)), ck.state, path), ck


def load_cgan(path):
    from .cgan import build_models
    ck = load_checkpoint(path, "cgan")
    cfg = cgan_config(ck.config)
    models = build_models(cfg)
    for prefix, m in zip(("G", "D1", "D2"), models):
        sub = {k[len(prefix) + 1:]: v for k, v in ck.state.items() if k.startswith(prefix + ".")}
        _load_state(m, sub, path)
    return cfg, models, ck


def load_head(path):
    from .head import PLFMHead
    ck = load_checkpoint(path, "head")
    return _load_state(PLFMHead(head_config(ck.config)), ck.state, path), ck

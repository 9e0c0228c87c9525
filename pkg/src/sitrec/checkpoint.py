"""Versioned checkpoint container for every trainable model family.

Layout: magic "SCKP" | u32 format version | u32 metadata length | metadata
JSON | raw little-endian array bytes in the order listed in the metadata.
The writer is a pure function of the checkpoint content, so identical
training runs produce identical files. Loading refuses a checkpoint whose
lexicon hash does not match the lexicon in hand.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .crf import CrfModel, DiscreteClassifier
from .features import FeatureDims
from .models import Model, ModelKind
from .schema import Lexicon, Situation
from .train import verb_class_weights

MAGIC = b"SCKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _meta_for(trainer, iteration: int) -> dict:
    meta = {
        "format_version": FORMAT_VERSION,
        "lexicon_hash": trainer.lex.content_hash(),
        "iteration": int(iteration),
        "dims": asdict(trainer.dims),
    }
    if isinstance(trainer, Model):
        meta["family"] = "rnn"
        meta["model"] = {
            "kind": trainer.kind.kind,
            "direction": trainer.kind.direction,
            "use_attention": trainer.kind.use_attention,
            "hidden_size": trainer.hidden_size,
            "embed_size": trainer.embed_size,
            "attn_size": trainer.attn_size,
            "weighted_verb_loss": trainer.verb_class_weights is not None,
        }
    elif isinstance(trainer, CrfModel):
        meta["family"] = "crf"
    elif isinstance(trainer, DiscreteClassifier):
        meta["family"] = "discrete"
        meta["classes"] = [[s.verb, list(s.fillers)] for s in trainer.classes]
    else:
        raise CheckpointError(f"cannot checkpoint object of type {type(trainer)!r}")
    return meta


def save_checkpoint(path: str | Path, trainer, iteration: int = 0) -> None:
    meta = _meta_for(trainer, iteration)
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in trainer.store.params.items():
        arrays[f"param/{name}"] = tensor.data
    adam = trainer.store.opt_state.get("adam")
    meta["adam_t"] = int(adam["t"]) if adam else 0
    if adam:
        for name, m in adam["m"].items():
            arrays[f"adam_m/{name}"] = m
        for name, v in adam["v"].items():
            arrays[f"adam_v/{name}"] = v

    names = sorted(arrays)
    meta["arrays"] = [
        {"name": n, "dtype": str(arrays[n].dtype), "shape": list(arrays[n].shape)}
        for n in names
    ]
    blob = json.dumps(meta, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(arrays[n]).astype("<f8").tobytes())


def _read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, meta_len = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(blob[12:12 + meta_len].decode("utf-8"))
    arrays = {}
    off = 12 + meta_len
    for entry in meta["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
        off += 8 * count
    return meta, arrays


def load_checkpoint(path: str | Path, lex: Lexicon):
    """Rebuild the trainer held in a checkpoint. Returns (trainer, iteration)."""
    meta, arrays = _read_container(path)
    if meta["lexicon_hash"] != lex.content_hash():
        raise CheckpointError(
            "checkpoint was written against a different lexicon (hash mismatch)"
        )
    dims = FeatureDims(**meta["dims"])
    family = meta["family"]
    if family == "rnn":
        m = meta["model"]
        weights = verb_class_weights(lex) if m["weighted_verb_loss"] else None
        trainer = Model(
            ModelKind(kind=m["kind"], direction=m["direction"],
                      use_attention=m["use_attention"]),
            lex, dims,
            hidden_size=m["hidden_size"], embed_size=m["embed_size"],
            attn_size=m["attn_size"], verb_class_weights=weights,
        )
    elif family == "crf":
        trainer = CrfModel(lex, dims)
    elif family == "discrete":
        classes = [Situation(verb=v, fillers=tuple(f)) for v, f in meta["classes"]]
        trainer = DiscreteClassifier(lex, dims, classes)
    else:
        raise CheckpointError(f"unknown checkpoint family {family!r}")

    values = {}
    for key, arr in arrays.items():
        if key.startswith("param/"):
            values[key[len("param/"):]] = arr
    trainer.store.load_values(values)
    if meta.get("adam_t", 0):
        adam = {"t": meta["adam_t"], "m": {}, "v": {}}
        for key, arr in arrays.items():
            if key.startswith("adam_m/"):
                adam["m"][key[len("adam_m/"):]] = arr.copy()
            elif key.startswith("adam_v/"):
                adam["v"][key[len("adam_v/"):]] = arr.copy()
        trainer.store.opt_state["adam"] = adam
    return trainer, meta["iteration"]

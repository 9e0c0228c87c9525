"""Per-example visual-feature stand-ins and the modules that consume them.

A FeatureRecord carries a global vector, zero or more region vectors
(detected-box stand-ins), and an optional spatial grid of cell vectors.
Records are produced synthetically (module `data`) or read from the binary
feature file format defined here.

Binary layout (little-endian, 32-bit floats on disk):

    magic "SITF" | version u32 | n_examples u32 | Dg u32 | Dr u32 | Dc u32 | G u32
    per example:
        Dg floats                       global vector
        u32 region count, then count * Dr floats
        u32 grid flag (0/1), then G*G*Dc floats when set
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numeric as nm
from .numeric import ParameterStore, Tensor

MAGIC = b"SITF"
FORMAT_VERSION = 1


class FeatureError(ValueError):
    """Malformed feature data or file."""


@dataclass(frozen=True)
class FeatureDims:
    dg: int
    dr: int
    dc: int = 0
    grid: int = 0  # grid side length G; 0 means no spatial grid


@dataclass
class FeatureRecord:
    global_vec: np.ndarray            # [Dg]
    regions: np.ndarray               # [n_regions x Dr], possibly 0 rows
    grid: np.ndarray | None = None    # [G x G x Dc]

    def validate(self, dims: FeatureDims) -> None:
        if self.global_vec.shape != (dims.dg,):
            raise FeatureError(f"global vector shape {self.global_vec.shape}, want ({dims.dg},)")
        if self.regions.ndim != 2 or (self.regions.shape[0] and self.regions.shape[1] != dims.dr):
            raise FeatureError(f"region array shape {self.regions.shape}")
        if self.grid is not None:
            if dims.grid < 1:
                raise FeatureError("grid present but dims.grid < 1")
            if self.grid.shape != (dims.grid, dims.grid, dims.dc):
                raise FeatureError(f"grid shape {self.grid.shape}")
        for arr in (self.global_vec, self.regions) + ((self.grid,) if self.grid is not None else ()):
            if not np.isfinite(arr).all():
                raise FeatureError("non-finite feature values")


class FeatureSet:
    """All records of one split, held in memory."""

    def __init__(self, dims: FeatureDims, records: list[FeatureRecord]):
        self.dims = dims
        self.records = records

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, index: int) -> FeatureRecord:
        if not 0 <= index < len(self.records):
            raise FeatureError(f"feature index {index} out of range")
        return self.records[index]


def write_feature_file(path: str | Path, features: FeatureSet) -> None:
    d = features.dims
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIIIII", FORMAT_VERSION, len(features), d.dg, d.dr, d.dc, d.grid))
        for rec in features.records:
            f.write(np.asarray(rec.global_vec, dtype="<f4").tobytes())
            f.write(struct.pack("<I", rec.regions.shape[0]))
            f.write(np.asarray(rec.regions, dtype="<f4").tobytes())
            if rec.grid is None:
                f.write(struct.pack("<I", 0))
            else:
                f.write(struct.pack("<I", 1))
                f.write(np.asarray(rec.grid, dtype="<f4").tobytes())


def read_feature_file(path: str | Path) -> FeatureSet:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise FeatureError(f"{path}: bad magic (not a feature file)")
    try:
        version, count, dg, dr, dc, grid = struct.unpack_from("<IIIIII", blob, 4)
    except struct.error:
        raise FeatureError(f"{path}: truncated header") from None
    if version != FORMAT_VERSION:
        raise FeatureError(f"{path}: unsupported version {version}")
    dims = FeatureDims(dg=dg, dr=dr, dc=dc, grid=grid)
    records = []
    off = 28
    for i in range(count):
        try:
            g = np.frombuffer(blob, dtype="<f4", count=dg, offset=off).astype(np.float64)
            off += 4 * dg
            (n_reg,) = struct.unpack_from("<I", blob, off)
            off += 4
            regs = np.frombuffer(blob, dtype="<f4", count=n_reg * dr, offset=off)
            regs = regs.astype(np.float64).reshape(n_reg, dr)
            off += 4 * n_reg * dr
            (has_grid,) = struct.unpack_from("<I", blob, off)
            off += 4
            cells = None
            if has_grid:
                cells = np.frombuffer(blob, dtype="<f4", count=grid * grid * dc, offset=off)
                cells = cells.astype(np.float64).reshape(grid, grid, dc)
                off += 4 * grid * grid * dc
        except (struct.error, ValueError):
            raise FeatureError(f"{path}: truncated at example {i}") from None
        records.append(FeatureRecord(global_vec=g, regions=regs, grid=cells))
    return FeatureSet(dims, records)


# ---------------------------------------------------------------------------
# fusion action scorer


@dataclass
class FusionParams:
    """Two parameter-disjoint paths to verb logits.

    box path scores concat(region, global); global path scores the global
    vector alone and is the fallback when no region was detected.
    """

    box_weight: Tensor      # [V x (Dr + Dg)]
    box_bias: Tensor        # [V]
    global_weight: Tensor   # [V x Dg]
    global_bias: Tensor     # [V]


def init_fusion_params(store: ParameterStore, prefix: str, n_verbs: int,
                       dims: FeatureDims, group: str = "verb") -> FusionParams:
    return FusionParams(
        box_weight=store.add(f"{prefix}.box_weight", (n_verbs, dims.dr + dims.dg), group=group),
        box_bias=store.add(f"{prefix}.box_bias", (n_verbs,), init="zeros", group=group),
        global_weight=store.add(f"{prefix}.global_weight", (n_verbs, dims.dg), group=group),
        global_bias=store.add(f"{prefix}.global_bias", (n_verbs,), init="zeros", group=group),
    )


def _affine_rows(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return nm.add(nm.matmul(x, nm.transpose(weight)), bias)


def fusion_verb_logits_batch(params: FusionParams, globals_: Tensor,
                             regions: np.ndarray | None) -> Tensor:
    """Verb logits [B x V] for a batch sharing one region count.

    `regions` is [B x R x Dr] (R >= 1) or None for the no-region fallback.
    Pooling over a record's regions is elementwise max.
    """
    if regions is None:
        return _affine_rows(globals_, params.global_weight, params.global_bias)
    out = None
    for j in range(regions.shape[1]):
        x = nm.concat([Tensor(regions[:, j, :]), globals_], axis=1)
        logits = _affine_rows(x, params.box_weight, params.box_bias)
        out = logits if out is None else nm.maximum(out, logits)
    return out


def fusion_verb_logits(params: FusionParams, rec: FeatureRecord) -> Tensor:
    """Verb logits [V] for one record; defaults to the global path when
    no region is present."""
    g = Tensor(rec.global_vec.reshape(1, -1))
    regions = rec.regions.reshape(1, *rec.regions.shape) if rec.regions.shape[0] else None
    logits = fusion_verb_logits_batch(params, g, regions)
    return nm.reshape(logits, (logits.shape[1],))


# ---------------------------------------------------------------------------
# soft attention over the spatial grid


@dataclass
class AttentionParams:
    """Additive attention: probe . tanh(W_h h + W_a cell + bias)."""

    hidden_weight: Tensor  # [A x H]
    grid_weight: Tensor    # [A x Dc]
    bias: Tensor           # [A]
    probe: Tensor          # [A x 1]


def init_attention_params(store: ParameterStore, prefix: str, hidden_size: int,
                          dims: FeatureDims, attn_size: int = 32,
                          group: str = "main") -> AttentionParams:
    return AttentionParams(
        hidden_weight=store.add(f"{prefix}.hidden_weight", (attn_size, hidden_size), group=group),
        grid_weight=store.add(f"{prefix}.grid_weight", (attn_size, dims.dc), group=group),
        bias=store.add(f"{prefix}.bias", (attn_size,), init="zeros", group=group),
        probe=store.add(f"{prefix}.probe", (attn_size, 1), group=group),
    )


def attention_context_batch(params: AttentionParams, h: Tensor,
                            grids: np.ndarray) -> tuple[Tensor, Tensor]:
    """Soft-attention readout for a batch.

    h is [B x H]; grids is [B x G x G x Dc]. Returns (context [B x Dc],
    weights [B x G*G]); each weight row is a probability distribution.
    """
    b, g1, g2, dc = grids.shape
    n = g1 * g2
    cells = Tensor(grids.reshape(b * n, dc))
    h_part = nm.repeat_rows(nm.matmul(h, nm.transpose(params.hidden_weight)), n)
    a_part = nm.matmul(cells, nm.transpose(params.grid_weight))
    scores = nm.matmul(nm.tanh(nm.add(nm.add(h_part, a_part), params.bias)), params.probe)
    weights = nm.softmax(nm.reshape(scores, (b, n)))
    weighted = nm.scale_rows(cells, nm.reshape(weights, (b * n, 1)))
    context = nm.sum_segments(weighted, n)
    return context, weights


def attention_context(params: AttentionParams, h: Tensor,
                      grid: np.ndarray | None) -> tuple[Tensor, Tensor]:
    """Single-record readout: (context [Dc], weights [G x G])."""
    if grid is None:
        raise FeatureError("attention requires a spatial feature grid")
    hrow = h if h.data.ndim == 2 else nm.reshape(h, (1, h.shape[0]))
    ctx, w = attention_context_batch(params, hrow, grid.reshape(1, *grid.shape))
    side = grid.shape[0]
    return nm.reshape(ctx, (ctx.shape[1],)), nm.reshape(w, (side, side))

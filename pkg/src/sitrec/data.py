"""Dataset container, file formats, and the planted-signal generator.

The generator wires labels into the features: the global vector is a
fixed random linear map of the (verb, fillers) multi-hot plus Gaussian
noise, region vectors are noisy projections of the global vector, and
grid cells carry slices of the global vector with one cell enriched per
filler. Everything a model must predict is therefore linearly decodable
from its inputs, which makes training verifiable without any images.

On disk a dataset bundle is a directory:

    manifest.json   lexicon hash, per-split file names, role pools, spec echo
    lexicon.json    the frame lexicon (module schema)
    <split>.jsonl   one example per line
    <split>.features  binary feature records (module features)
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureDims, FeatureRecord, FeatureSet, read_feature_file, write_feature_file
from .schema import (
    AnnotatedExample,
    Lexicon,
    Situation,
    build_lexicon,
    parse_lexicon,
    serialize_lexicon,
)

SPLITS = ("train", "dev", "test")


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    name: str
    lexicon: Lexicon
    examples: list[AnnotatedExample]
    features: FeatureSet

    def pairs(self) -> list[tuple[AnnotatedExample, FeatureRecord]]:
        return [(ex, self.features[ex.feature_ref]) for ex in self.examples]

    def validate(self, allow_unknown_nouns: bool = False) -> None:
        seen = set()
        for ex in self.examples:
            if ex.example_id in seen:
                raise DatasetError(f"duplicate example id {ex.example_id!r}")
            seen.add(ex.example_id)
            self.lexicon.validate_example(ex, allow_unknown_nouns=allow_unknown_nouns)
            if not 0 <= ex.feature_ref < len(self.features):
                raise DatasetError(
                    f"example {ex.example_id!r}: feature index {ex.feature_ref} unresolved"
                )


@dataclass
class SyntheticSpec:
    n_verbs: int = 20
    max_roles: int = 4
    n_nouns: int = 50
    pool_size: int = 5
    dg: int = 64
    dr: int = 32
    dc: int = 0
    grid: int = 0
    sigma: float = 0.05
    n_train: int = 2000
    n_dev: int = 300
    n_test: int = 300
    seed: int = 0
    disjoint_role_pools: bool = True
    perturb_prob: float = 0.15

    def validate(self) -> None:
        positive = {
            "n_verbs": self.n_verbs, "max_roles": self.max_roles,
            "n_nouns": self.n_nouns, "pool_size": self.pool_size,
            "dg": self.dg, "dr": self.dr,
            "n_train": self.n_train, "n_dev": self.n_dev, "n_test": self.n_test,
        }
        for key, value in positive.items():
            if value < 1:
                raise DatasetError(f"{key} must be positive, got {value}")
        if self.sigma < 0:
            raise DatasetError("sigma must be >= 0")
        if not 0 <= self.perturb_prob <= 1:
            raise DatasetError("perturb_prob must be in [0, 1]")
        if (self.grid > 0) != (self.dc > 0):
            raise DatasetError("grid and dc must be set together")


@dataclass
class SyntheticData:
    lexicon: Lexicon
    splits: dict[str, Dataset]
    role_pools: dict[str, list[str]]
    dims: FeatureDims
    spec: SyntheticSpec | None = None
    manifest_extra: dict = field(default_factory=dict)


def _role_count(spec: SyntheticSpec) -> int:
    n = spec.max_roles + 2
    if spec.disjoint_role_pools:
        n = min(n, spec.n_nouns // spec.pool_size)
    if n < spec.max_roles:
        raise DatasetError(
            "infeasible spec: noun inventory cannot supply "
            f"{spec.max_roles} disjoint pools of size {spec.pool_size}"
        )
    return n


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Deterministic planted-signal dataset from a single seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_roles = _role_count(spec)

    verbs = [f"verb{i:02d}" for i in range(spec.n_verbs)]
    nouns = [f"noun{i:03d}" for i in range(spec.n_nouns)]
    roles = [f"role{i:02d}" for i in range(n_roles)]

    if spec.disjoint_role_pools:
        perm = rng.permutation(spec.n_nouns)
        pools = {
            roles[r]: [nouns[j] for j in perm[r * spec.pool_size:(r + 1) * spec.pool_size]]
            for r in range(n_roles)
        }
    else:
        if spec.pool_size > spec.n_nouns:
            raise DatasetError("infeasible spec: pool larger than noun inventory")
        pools = {
            role: [nouns[j] for j in rng.choice(spec.n_nouns, spec.pool_size, replace=False)]
            for role in roles
        }

    min_roles = max(1, spec.max_roles - 1)
    frames = []
    for _ in verbs:
        count = int(rng.integers(min_roles, spec.max_roles + 1))
        frames.append([roles[j] for j in rng.permutation(n_roles)[:count]])

    plant = rng.normal(size=(spec.dg, spec.n_verbs + spec.n_nouns))
    region_proj = rng.normal(size=(spec.dr, spec.dg)) / np.sqrt(spec.dg)
    with_grid = spec.grid > 0
    cell_plant = rng.normal(size=(spec.dc, spec.n_nouns)) if with_grid else None
    noun_pos = {n: i for i, n in enumerate(nouns)}
    dims = FeatureDims(dg=spec.dg, dr=spec.dr, dc=spec.dc, grid=spec.grid)

    def perturb(fillers: tuple[str, ...], frame: list[str]) -> tuple[str, ...]:
        out = []
        for role, noun in zip(frame, fillers):
            pool = pools[role]
            if len(pool) > 1 and rng.random() < spec.perturb_prob:
                alternatives = [p for p in pool if p != noun]
                noun = alternatives[int(rng.integers(len(alternatives)))]
            out.append(noun)
        return tuple(out)

    split_sizes = {"train": spec.n_train, "dev": spec.n_dev, "test": spec.n_test}
    raw_splits: dict[str, tuple[list[AnnotatedExample], list[FeatureRecord]]] = {}
    for split, size in split_sizes.items():
        examples: list[AnnotatedExample] = []
        records: list[FeatureRecord] = []
        for i in range(size):
            vi = int(rng.integers(spec.n_verbs))
            verb = verbs[vi]
            frame = frames[vi]
            fillers = tuple(
                pools[role][int(rng.integers(len(pools[role])))] for role in frame
            )
            hot = np.zeros(spec.n_verbs + spec.n_nouns)
            hot[vi] = 1.0
            for noun in fillers:
                hot[spec.n_verbs + noun_pos[noun]] += 1.0
            global_vec = plant @ hot + spec.sigma * rng.normal(size=spec.dg)
            n_regions = int(rng.integers(0, 3))
            regions = np.zeros((n_regions, spec.dr))
            for j in range(n_regions):
                regions[j] = region_proj @ global_vec + spec.sigma * rng.normal(size=spec.dr)
            grid_arr = None
            if with_grid:
                n_cells = spec.grid * spec.grid
                cells = np.zeros((n_cells, spec.dc))
                for k in range(n_cells):
                    idx = (np.arange(spec.dc) + k * spec.dc) % spec.dg
                    cells[k] = global_vec[idx] + spec.sigma * rng.normal(size=spec.dc)
                for fi, noun in enumerate(fillers):
                    cells[fi % n_cells] += cell_plant[:, noun_pos[noun]]
                grid_arr = cells.reshape(spec.grid, spec.grid, spec.dc)
            annotations = (
                Situation(verb=verb, fillers=fillers),
                Situation(verb=verb, fillers=perturb(fillers, frame)),
                Situation(verb=verb, fillers=perturb(fillers, frame)),
            )
            examples.append(AnnotatedExample(
                example_id=f"{split}-{i:05d}", verb=verb,
                annotations=annotations, feature_ref=i,
            ))
            records.append(FeatureRecord(global_vec=global_vec, regions=regions, grid=grid_arr))
        raw_splits[split] = (examples, records)

    train_examples = raw_splits["train"][0]
    verb_freq: dict[str, int] = {}
    tuple_freq: dict[tuple[str, str, str], int] = {}
    for ex in train_examples:
        verb_freq[ex.verb] = verb_freq.get(ex.verb, 0) + 1
        frame = frames[verbs.index(ex.verb)]
        for ann in ex.annotations:
            for role, noun in zip(frame, ann.fillers):
                key = (ex.verb, role, noun)
                tuple_freq[key] = tuple_freq.get(key, 0) + 1

    lexicon = build_lexicon(
        verbs=[(v, frames[i]) for i, v in enumerate(verbs)],
        nouns=nouns,
        valid_tuples=list(tuple_freq),
        verb_freq=verb_freq,
        tuple_freq=tuple_freq,
    )
    splits = {
        name: Dataset(name=name, lexicon=lexicon, examples=exs,
                      features=FeatureSet(dims, recs))
        for name, (exs, recs) in raw_splits.items()
    }
    for ds in splits.values():
        ds.validate()
    return SyntheticData(lexicon=lexicon, splits=splits, role_pools=pools,
                         dims=dims, spec=spec)


def role_consistency(role_pools: dict[str, list[str]], lex: Lexicon,
                     predictions: list[Situation]) -> float:
    """Fraction of predicted fillers drawn from their role's planted pool."""
    total = 0
    hits = 0
    for sit in predictions:
        for role, noun in sit.pairs(lex):
            total += 1
            hits += noun in role_pools.get(role, ())
    if total == 0:
        raise DatasetError("no role positions to score")
    return hits / total


# ---------------------------------------------------------------------------
# bundle I/O


def _example_to_record(ex: AnnotatedExample, lex: Lexicon) -> dict:
    frame = lex.frame_of[ex.verb]
    return {
        "example_id": ex.example_id,
        "verb": ex.verb,
        "annotations": [
            [[role, noun] for role, noun in zip(frame, ann.fillers)]
            for ann in ex.annotations
        ],
        "feature_index": ex.feature_ref,
    }


def _example_from_record(record: dict, lex: Lexicon) -> AnnotatedExample:
    try:
        verb = record["verb"]
        raw_anns = record["annotations"]
        example_id = record["example_id"]
        feature_index = int(record["feature_index"])
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"malformed example record: {e}") from None
    if verb not in lex.frame_of:
        raise DatasetError(f"example {example_id!r}: unknown verb {verb!r}")
    if len(raw_anns) != 3:
        raise DatasetError(
            f"example {example_id!r} has {len(raw_anns)} annotations, need exactly 3"
        )
    frame = lex.frame_of[verb]
    annotations = []
    for ann in raw_anns:
        got_roles = tuple(pair[0] for pair in ann)
        if got_roles != frame:
            raise DatasetError(
                f"example {example_id!r}: roles {got_roles} do not match frame {frame}"
            )
        annotations.append(Situation(verb=verb, fillers=tuple(pair[1] for pair in ann)))
    return AnnotatedExample(example_id=example_id, verb=verb,
                            annotations=tuple(annotations), feature_ref=feature_index)


def save_bundle(data: SyntheticData, outdir: str | Path) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "lexicon.json").write_text(serialize_lexicon(data.lexicon), encoding="utf-8")
    manifest = {
        "format_version": 1,
        "lexicon_file": "lexicon.json",
        "lexicon_hash": data.lexicon.content_hash(),
        "splits": {},
        "role_pools": data.role_pools,
    }
    if data.spec is not None:
        manifest["spec"] = asdict(data.spec)
    manifest.update(data.manifest_extra)
    for name, ds in data.splits.items():
        ex_file = f"{name}.jsonl"
        ft_file = f"{name}.features"
        with open(out / ex_file, "w", encoding="utf-8") as f:
            for ex in ds.examples:
                f.write(json.dumps(_example_to_record(ex, data.lexicon),
                                   ensure_ascii=False, sort_keys=True) + "\n")
        write_feature_file(out / ft_file, ds.features)
        manifest["splits"][name] = {
            "examples": ex_file, "features": ft_file, "count": len(ds.examples),
        }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False), encoding="utf-8"
    )


def load_bundle(indir: str | Path) -> SyntheticData:
    root = Path(indir)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetError(f"no manifest.json under {root}") from None
    except json.JSONDecodeError as e:
        raise DatasetError(f"malformed manifest: {e}") from None
    lexicon = parse_lexicon((root / manifest["lexicon_file"]).read_text(encoding="utf-8"))
    if lexicon.content_hash() != manifest["lexicon_hash"]:
        raise DatasetError("lexicon hash mismatch: bundle is inconsistent")
    splits = {}
    dims = None
    for name, entry in manifest["splits"].items():
        features = read_feature_file(root / entry["features"])
        dims = features.dims
        examples = []
        with open(root / entry["examples"], encoding="utf-8") as f:
            for line_no, line in enumerate(f):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    raise DatasetError(
                        f"{entry['examples']}:{line_no + 1}: malformed record"
                    ) from None
                examples.append(_example_from_record(record, lexicon))
        ds = Dataset(name=name, lexicon=lexicon, examples=examples, features=features)
        ds.validate(allow_unknown_nouns=(name != "train"))
        splits[name] = ds
    spec = None
    if "spec" in manifest:
        spec = SyntheticSpec(**manifest["spec"])
    return SyntheticData(
        lexicon=lexicon, splits=splits,
        role_pools={r: list(p) for r, p in manifest.get("role_pools", {}).items()},
        dims=dims if dims is not None else FeatureDims(dg=0, dr=0),
        spec=spec,
    )


def load_split(indir: str | Path, name: str) -> Dataset:
    data = load_bundle(indir)
    if name not in data.splits:
        raise DatasetError(f"bundle has no split {name!r}")
    return data.splits[name]

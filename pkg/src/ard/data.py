"""Instance/dataset model, embedding file formats, and synthetic corpora.

Datasets are immutable after construction: instances are frozen dataclasses
and every embedding array is marked read-only, so values can be shared
freely across threads.
"""

from __future__ import annotations

import json
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EMBED_MAGIC = b"ARDE"
EMBED_VERSION = 1

_HEADER = struct.Struct("<4sIII")


class DataError(ValueError):
    """Malformed input data or violated dataset invariant."""


def _frozen(vec) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float32)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Instance:
    """A tokenized sentence with marked head/tail entities and their vectors.

    Spans are half-open ``(start, end)`` token index pairs. ``head_vec`` and
    ``tail_vec`` are the per-entity start-marker embeddings of equal length.
    """

    id: str
    tokens: tuple[str, ...]
    head_span: tuple[int, int]
    tail_span: tuple[int, int]
    head_vec: np.ndarray
    tail_vec: np.ndarray
    gold_relation: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "head_span", tuple(self.head_span))
        object.__setattr__(self, "tail_span", tuple(self.tail_span))
        object.__setattr__(self, "head_vec", _frozen(self.head_vec))
        object.__setattr__(self, "tail_vec", _frozen(self.tail_vec))
        n = len(self.tokens)
        for name, (a, b) in (("head_span", self.head_span), ("tail_span", self.tail_span)):
            if not (0 <= a < b <= n):
                raise DataError(f"instance {self.id!r}: {name} {(a, b)} outside tokens[0:{n}]")
        h, t = self.head_span, self.tail_span
        if not (h[1] <= t[0] or t[1] <= h[0]):
            raise DataError(f"instance {self.id!r}: head and tail spans overlap")
        if self.head_vec.ndim != 1 or self.tail_vec.ndim != 1:
            raise DataError(f"instance {self.id!r}: entity vectors must be 1-D")
        if len(self.head_vec) != len(self.tail_vec) or len(self.head_vec) == 0:
            raise DataError(
                f"instance {self.id!r}: head_vec length {len(self.head_vec)} != "
                f"tail_vec length {len(self.tail_vec)} (or zero)"
            )
        if not (np.isfinite(self.head_vec).all() and np.isfinite(self.tail_vec).all()):
            raise DataError(f"instance {self.id!r}: non-finite embedding coordinate")

    @property
    def dim(self) -> int:
        return len(self.head_vec)


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of instances sharing one embedding dimension."""

    instances: tuple[Instance, ...]
    dim: int = field(default=0)

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if self.instances:
            dims = {inst.dim for inst in self.instances}
            if len(dims) > 1:
                raise DataError(f"mixed embedding dimensions in dataset: {sorted(dims)}")
            d = dims.pop()
            if self.dim and self.dim != d:
                raise DataError(f"declared dim {self.dim} != instance dim {d}")
            object.__setattr__(self, "dim", d)
        seen = set()
        for inst in self.instances:
            if inst.id in seen:
                raise DataError(f"duplicate id {inst.id!r}")
            seen.add(inst.id)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    @property
    def label_space(self) -> frozenset[str]:
        return frozenset(i.gold_relation for i in self.instances if i.gold_relation is not None)

    def ids(self) -> list[str]:
        return [i.id for i in self.instances]

    def by_id(self, id: str) -> Instance:
        try:
            return self._index()[id]
        except KeyError:
            raise KeyError(f"no instance with id {id!r}") from None

    def _index(self) -> dict[str, Instance]:
        idx = getattr(self, "_id_index", None)
        if idx is None:
            idx = {i.id: i for i in self.instances}
            object.__setattr__(self, "_id_index", idx)
        return idx

    def subset(self, ids) -> "Dataset":
        """Instances with the given ids, in this dataset's order."""
        wanted = set(ids)
        missing = wanted - set(self._index())
        if missing:
            raise KeyError(f"ids not in dataset: {sorted(missing)[:5]}")
        return Dataset(tuple(i for i in self.instances if i.id in wanted))


@dataclass(frozen=True)
class VariantSpec:
    """How to resample a train/test pair into a general-setting variant."""

    kind: str
    noise_fraction: float = 0.40
    discard_table: dict[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("original", "noisy", "imbalanced"):
            raise DataError(f"unknown variant kind {self.kind!r}")
        if not 0.0 <= self.noise_fraction <= 1.0:
            raise DataError(f"noise_fraction {self.noise_fraction} outside [0, 1]")
        for rel, p in self.discard_table.items():
            if not 0.0 <= p < 1.0:
                raise DataError(f"discard probability for {rel!r} outside [0, 1): {p}")


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian-cluster corpus: known classes in train+test, novel in test only.

    ``cluster_spread`` is the typical point-to-center distance (norm radius),
    so ``spread < separation`` keeps known clusters well separated at any
    dimension. Novel classes are drawn ``novel_dispersion`` times wider;
    instances of relations the encoder never saw scatter across the feature
    space instead of forming tight clusters, and the generator mirrors that.
    """

    n_known: int = 8
    n_novel: int = 4
    per_class: int = 50
    dim: int = 16
    cluster_spread: float = 1.0
    class_separation: float = 6.0
    novel_dispersion: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_known, self.n_novel, self.per_class, self.dim) <= 0:
            raise DataError("synthetic counts and dim must be positive")
        if self.cluster_spread < 0 or self.class_separation <= 0:
            raise DataError("cluster_spread must be >= 0 and class_separation > 0")
        if self.cluster_spread >= self.class_separation:
            raise DataError("cluster_spread must be < class_separation")
        if self.novel_dispersion < 1.0:
            raise DataError("novel_dispersion must be >= 1")


# ---------------------------------------------------------------------------
# JSONL + binary embedding formats
# ---------------------------------------------------------------------------


def write_embeddings_bin(ds: Dataset, path) -> None:
    """Write the dataset's [head ++ tail] rows as a binary sidecar file."""
    if len(ds) == 0:
        raise DataError("refusing to write embeddings for an empty dataset")
    mat = np.vstack([np.concatenate([i.head_vec, i.tail_vec]) for i in ds]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMBED_MAGIC, EMBED_VERSION, mat.shape[0], mat.shape[1]))
        fh.write(mat.tobytes(order="C"))


def read_embeddings_bin(path) -> np.ndarray:
    """Read a sidecar embedding file back into an (n, 2d) float32 matrix."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, n, cols = _HEADER.unpack_from(raw)
    if magic != EMBED_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != EMBED_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    payload = raw[_HEADER.size:]
    expected = 4 * n * cols
    if len(payload) != expected:
        raise DataError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(n, cols).copy()


_INSTANCE_KEYS = {"id", "tokens", "head_span", "tail_span", "gold_relation", "head_vec", "tail_vec"}


def _instance_from_obj(obj: dict, lineno: int, row=None) -> Instance:
    unknown = set(obj) - _INSTANCE_KEYS
    if unknown:
        raise DataError(f"line {lineno}: unknown fields {sorted(unknown)}")
    try:
        if row is not None:
            if "head_vec" in obj or "tail_vec" in obj:
                raise DataError(f"line {lineno}: inline vectors plus sidecar embeddings")
            d = len(row) // 2
            head, tail = row[:d], row[d:]
        else:
            head, tail = obj["head_vec"], obj["tail_vec"]
        return Instance(
            id=obj["id"],
            tokens=obj["tokens"],
            head_span=tuple(obj["head_span"]),
            tail_span=tuple(obj["tail_span"]),
            head_vec=head,
            tail_vec=tail,
            gold_relation=obj.get("gold_relation"),
        )
    except KeyError as exc:
        raise DataError(f"line {lineno}: missing field {exc}") from None
    except DataError as exc:
        raise DataError(f"line {lineno}: {exc}") from None


def load_jsonl(path) -> Dataset:
    """Load instances from a JSONL file, in file order.

    The first line may be a header ``{"embeddings": "<path>"}`` pointing at a
    sidecar binary file (resolved relative to the JSONL file); instance lines
    then omit their vectors and take them from the sidecar rows in order.
    """
    path = Path(path)
    instances = []
    matrix = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}: line {lineno}: expected a JSON object")
            if lineno == 1 and set(obj) == {"embeddings"}:
                matrix = read_embeddings_bin(path.parent / obj["embeddings"])
                continue
            row = None
            if matrix is not None:
                if len(instances) >= matrix.shape[0]:
                    raise DataError(f"{path}: line {lineno}: more instances than embedding rows")
                row = matrix[len(instances)]
            try:
                instances.append(_instance_from_obj(obj, lineno, row))
            except DataError as exc:
                raise DataError(f"{path}: {exc}") from None
    if matrix is not None and len(instances) != matrix.shape[0]:
        raise DataError(f"{path}: {len(instances)} instances but {matrix.shape[0]} embedding rows")
    try:
        return Dataset(tuple(instances))
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_jsonl(ds: Dataset, path, sidecar: str | None = None) -> None:
    """Write a dataset as JSONL; with ``sidecar``, vectors go to a binary file."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        if sidecar is not None:
            write_embeddings_bin(ds, path.parent / sidecar)
            fh.write(json.dumps({"embeddings": sidecar}) + "\n")
        for inst in ds:
            obj = {
                "id": inst.id,
                "tokens": list(inst.tokens),
                "head_span": list(inst.head_span),
                "tail_span": list(inst.tail_span),
            }
            if inst.gold_relation is not None:
                obj["gold_relation"] = inst.gold_relation
            if sidecar is None:
                obj["head_vec"] = [float(x) for x in inst.head_vec]
                obj["tail_vec"] = [float(x) for x in inst.tail_vec]
            fh.write(json.dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# Variant construction
# ---------------------------------------------------------------------------


def make_noisy_variant(train: Dataset, test: Dataset, spec: VariantSpec) -> tuple[Dataset, Dataset]:
    """Move a seeded uniform sample of floor(fraction * |train|) instances into test."""
    if spec.kind != "noisy":
        raise DataError(f"expected a noisy VariantSpec, got kind={spec.kind!r}")
    if len(train) == 0:
        raise DataError("cannot make a noisy variant from an empty train set")
    overlap = train.label_space & test.label_space
    if overlap:
        raise DataError(f"train and test label spaces overlap: {sorted(overlap)[:5]}")
    n_move = int(spec.noise_fraction * len(train))
    rng = np.random.default_rng(spec.seed)
    moved = set(rng.choice(len(train), size=n_move, replace=False).tolist())
    kept = tuple(inst for i, inst in enumerate(train) if i not in moved)
    moved_insts = tuple(inst for i, inst in enumerate(train) if i in moved)
    return Dataset(kept), Dataset(test.instances + moved_insts)


def make_imbalanced_variant(noisy_test: Dataset, spec: VariantSpec) -> Dataset:
    """Independently discard each instance with its relation's table probability."""
    if spec.kind != "imbalanced":
        raise DataError(f"expected an imbalanced VariantSpec, got kind={spec.kind!r}")
    rng = np.random.default_rng(spec.seed)
    kept = []
    for inst in noisy_test:
        p = spec.discard_table.get(inst.gold_relation, 0.0)
        if p == 0.0 or rng.random() >= p:
            kept.append(inst)
    return Dataset(tuple(kept))


def split_novel(
    x_n: Dataset, train_frac: float, seed: int, stratified: bool = True
) -> tuple[Dataset, Dataset]:
    """Seeded split of the novel pool into (train, test) shares.

    Stratified per gold relation by default; per-class train counts land
    within one instance of ``train_frac``. Classes with a single instance
    cannot be stratified and fall into the train side (with a warning).
    """
    if not 0.0 < train_frac < 1.0:
        raise DataError(f"train_frac {train_frac} outside (0, 1)")
    rng = np.random.default_rng(seed)
    train_ids: set[str] = set()
    if stratified:
        groups: dict[object, list[str]] = {}
        for inst in x_n:
            groups.setdefault(inst.gold_relation, []).append(inst.id)
        for rel in sorted(groups, key=str):
            ids = groups[rel]
            if len(ids) < 2:
                warnings.warn(f"relation {rel!r} has {len(ids)} instance(s); assigning to train")
                train_ids.update(ids)
                continue
            take = int(round(train_frac * len(ids)))
            picked = rng.permutation(len(ids))[:take]
            train_ids.update(ids[i] for i in picked)
    else:
        take = int(round(train_frac * len(x_n)))
        order = rng.permutation(len(x_n))[:take]
        train_ids.update(x_n.instances[i].id for i in order)
    train = Dataset(tuple(i for i in x_n if i.id in train_ids))
    test = Dataset(tuple(i for i in x_n if i.id not in train_ids))
    return train, test


# ---------------------------------------------------------------------------
# Synthetic generation + deterministic featurizer
# ---------------------------------------------------------------------------

_CENTER_ATTEMPTS = 50_000


def _draw_centers(rng: np.random.Generator, count: int, dim2: int, separation: float) -> np.ndarray:
    # Center scale puts typical pairwise distances at ~1.15x the required
    # separation: a crowded constellation, with rejection enforcing the
    # minimum and the attempt cap catching infeasible requests.
    sigma = 1.15 * separation / np.sqrt(2.0 * dim2)
    centers: list[np.ndarray] = []
    attempts = 0
    while len(centers) < count:
        attempts += 1
        if attempts > _CENTER_ATTEMPTS:
            raise DataError(
                f"could not place {count} centers at separation {separation} in {dim2} dims"
            )
        cand = rng.normal(0.0, sigma, size=dim2)
        if all(np.linalg.norm(cand - c) >= separation for c in centers):
            centers.append(cand)
    return np.vstack(centers)


def _synthetic_instance(prefix: str, cls: str, seq: int, point: np.ndarray, d: int) -> Instance:
    tokens = (f"{prefix}{seq}", "head", f"H{seq}", "relates", "tail", f"T{seq}", "as", cls)
    return Instance(
        id=f"{prefix}{seq:06d}",
        tokens=tokens,
        head_span=(1, 3),
        tail_span=(4, 6),
        head_vec=point[:d],
        tail_vec=point[d:],
        gold_relation=cls,
    )


def gen_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Generate (train of known classes, mixed test of known + novel classes)."""
    rng = np.random.default_rng(spec.seed)
    d2 = 2 * spec.dim
    n_cls = spec.n_known + spec.n_novel
    centers = _draw_centers(rng, n_cls, d2, spec.class_separation)
    names = [f"known_{i}" for i in range(spec.n_known)] + [
        f"novel_{i}" for i in range(spec.n_novel)
    ]

    def sample(cls_idx: int) -> np.ndarray:
        radius = spec.cluster_spread
        if cls_idx >= spec.n_known:
            radius *= spec.novel_dispersion
        return centers[cls_idx] + (radius / np.sqrt(d2)) * rng.normal(size=d2)

    train, test = [], []
    seq_tr = seq_te = 0
    for ci in range(spec.n_known):
        for _ in range(spec.per_class):
            train.append(_synthetic_instance("tr", names[ci], seq_tr, sample(ci), spec.dim))
            seq_tr += 1
    for ci in range(n_cls):
        for _ in range(spec.per_class):
            test.append(_synthetic_instance("te", names[ci], seq_te, sample(ci), spec.dim))
            seq_te += 1
    return Dataset(tuple(train)), Dataset(tuple(test))


def hash_featurize(tokens, head_span, tail_span, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic hashed bag-of-context vectors around each span start.

    Each entity vector counts the tokens in a 3-token window centred on the
    span's start index, hashed into ``dim`` buckets, then L2-normalized.
    """
    if dim < 8:
        raise DataError(f"featurizer dim must be >= 8, got {dim}")
    tokens = list(tokens)

    def vec(start: int) -> np.ndarray:
        out = np.zeros(dim, dtype=np.float64)
        for pos in range(start - 1, start + 2):
            if 0 <= pos < len(tokens):
                out[zlib.crc32(tokens[pos].encode("utf-8")) % dim] += 1.0
        return (out / np.linalg.norm(out)).astype(np.float32)

    return vec(head_span[0]), vec(tail_span[0])

"""Feature records, zero-shot splits, paired batching and a synthetic fixture."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .errors import ParseError, ValidationError
from .losses import Batch
from .semantics import Taxonomy, TaxonomyNode, TextEmbeddingTable

MODALITIES = ("sketch", "image")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class FeatureRecord:
    id: str
    cls: str
    modality: str
    split: str
    feature: np.ndarray = field(compare=False, repr=False)

    def same_as(self, other):
        return (self.id, self.cls, self.modality, self.split) == (
            other.id, other.cls, other.modality, other.split
        ) and np.array_equal(self.feature, other.feature)


def _check_record(rec, dim, where):
    if rec.modality not in MODALITIES:
        raise ValidationError(f"{where}: unknown modality {rec.modality!r}")
    if rec.split not in SPLITS:
        raise ValidationError(f"{where}: unknown split {rec.split!r}")
    if rec.feature.shape != (dim,):
        raise ValidationError(f"{where}: feature has {rec.feature.size} values, expected {dim}")
    if not np.isfinite(rec.feature).all():
        raise ValidationError(f"{where}: non-finite feature value")


def save_features(records, path, dim=None):
    """Write ``dim=D`` then CSV rows ``id,class,modality,split,f1..fD``."""
    if dim is None:
        dim = records[0].feature.size if records else 512
    with open(path, "w", newline="") as fh:
        fh.write(f"dim={dim}\n")
        w = csv.writer(fh, lineterminator="\n")
        for i, rec in enumerate(records):
            _check_record(rec, dim, f"record {i}")
            w.writerow([rec.id, rec.cls, rec.modality, rec.split]
                       + [repr(float(v)) for v in rec.feature])


def load_features(path):
    records = []
    with open(path, newline="") as fh:
        header = fh.readline()
        if not header.strip():
            return records
        if not header.startswith("dim="):
            raise ParseError("missing 'dim=' header", 1)
        try:
            dim = int(header[4:])
        except ValueError as exc:
            raise ParseError(f"bad header {header.strip()!r}", 1) from exc
        seen_ids = set()
        for lineno, row in enumerate(csv.reader(fh), 2):
            if not row:
                continue
            if len(row) < 4:
                raise ParseError("expected id,class,modality,split,features", lineno)
            try:
                feat = np.array([float(v) for v in row[4:]])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from exc
            rec = FeatureRecord(row[0], row[1], row[2], row[3], feat)
            _check_record(rec, dim, f"line {lineno}")
            if rec.id in seen_ids:
                raise ValidationError(f"line {lineno}: duplicate id {rec.id!r}")
            seen_ids.add(rec.id)
            records.append(rec)
    return records


def stack(records):
    return np.stack([r.feature for r in records]) if records else np.zeros((0, 0))


# ---------------------------------------------------------------------------
# Splits


@dataclass
class ZeroShotSplit:
    seen_classes: list
    unseen_classes: list
    train: list
    test: list

    def __post_init__(self):
        seen, unseen = set(self.seen_classes), set(self.unseen_classes)
        if seen & unseen:
            raise ValidationError(f"seen and unseen classes overlap: {sorted(seen & unseen)}")
        for r in self.train:
            if r.cls not in seen:
                raise ValidationError(f"train record {r.id} has unseen class {r.cls}")
        for r in self.test:
            if r.cls not in unseen:
                raise ValidationError(f"test record {r.id} has seen class {r.cls}")

    def records(self, part, modality):
        return [r for r in getattr(self, part) if r.modality == modality]


def make_split(records, unseen_classes):
    """Partition records by class; the ``split`` field is rewritten to match."""
    observed = sorted({r.cls for r in records})
    unseen = set(unseen_classes)
    unknown = unseen - set(observed)
    if unknown:
        raise ValidationError(f"unseen classes not present in data: {sorted(unknown)}")
    train, test = [], []
    for r in records:
        if r.cls in unseen:
            test.append(r if r.split == "test" else replace(r, split="test"))
        else:
            train.append(r if r.split == "train" else replace(r, split="train"))
    return ZeroShotSplit([c for c in observed if c not in unseen],
                         [c for c in observed if c in unseen], train, test)


# ---------------------------------------------------------------------------
# Batching


def _class_index(records):
    out = {}
    for i, r in enumerate(records):
        out.setdefault(r.cls, []).append(i)
    return out


def batch_iter(split, batch_size, semantic, seed=0, epochs=None):
    """Yield class-paired batches over the training sketches.

    Each epoch visits every training sketch once in a seeded shuffled
    order; each sketch is paired with a random training image of the same
    class. Iterates forever when ``epochs`` is None.
    """
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    sketches = split.records("train", "sketch")
    images = split.records("train", "image")
    sk_by_cls, im_by_cls = _class_index(sketches), _class_index(images)
    lacking = [c for c in split.seen_classes if c not in sk_by_cls or c not in im_by_cls]
    if lacking:
        raise ValidationError(f"seen classes lacking a sketch or an image: {lacking}")
    label_of = {c: i for i, c in enumerate(split.seen_classes)}
    x_all, y_all = stack(sketches), stack(images)
    codes = semantic.matrix(split.seen_classes)
    labels_all = np.array([label_of[r.cls] for r in sketches])
    im_pools = [np.array(im_by_cls[c]) for c in split.seen_classes]
    return _batches(x_all, y_all, codes, labels_all, im_pools, batch_size,
                    np.random.default_rng(seed), epochs)


def _batches(x_all, y_all, codes, labels_all, im_pools, batch_size, rng, epochs):
    epoch = 0
    while epochs is None or epoch < epochs:
        order = rng.permutation(len(labels_all))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            labels = labels_all[idx]
            pick = np.array([im_pools[k][rng.integers(len(im_pools[k]))] for k in labels])
            yield Batch(x_all[idx], y_all[pick], codes[labels], labels)
        epoch += 1


def batches_per_epoch(split, batch_size):
    return math.ceil(len(split.records("train", "sketch")) / batch_size)


# ---------------------------------------------------------------------------
# Synthetic fixture


@dataclass
class SyntheticSpec:
    n_classes: int = 14
    n_seen: int = 10
    n_sketch: int = 40          # per class
    n_image: int = 40           # per class
    feature_dim: int = 512
    latent_dim: int = 8
    text_dim: int = 300
    cluster_spread: float = 0.2
    text_spread: float = 0.1
    modality_transform_seed: int = 1
    taxonomy_depth: int = 3
    n_text_sources: int = 1

    def __post_init__(self):
        if not 0 < self.n_seen < self.n_classes:
            raise ValidationError("need 0 < n_seen < n_classes")
        if self.n_sketch < 1 or self.n_image < 1:
            raise ValidationError("need at least one sample per class and modality")
        if self.cluster_spread < 0 or self.text_spread < 0:
            raise ValidationError("spreads must be non-negative")
        if min(self.feature_dim, self.latent_dim, self.text_dim) < 1:
            raise ValidationError("dimensions must be positive")
        if self.taxonomy_depth < 0 or self.n_text_sources < 1:
            raise ValidationError("bad taxonomy_depth or n_text_sources")


@dataclass
class SyntheticData:
    records: list
    taxonomy: Taxonomy
    texts: list                 # one TextEmbeddingTable per text source
    classes: list
    unseen_classes: list
    centers: np.ndarray = field(repr=False)

    def split(self):
        return make_split(self.records, self.unseen_classes)


def _cluster_taxonomy(classes, centers, depth):
    """Nested agglomerative cuts (2, 4, 8, ... clusters) above the class leaves."""
    nodes = [TaxonomyNode("n0", "entity", None, 0)]
    parent_of = np.zeros(len(classes), dtype=int)
    parent_ids = {0: "n0"}
    if len(classes) > 1 and depth > 0:
        tree = linkage(centers, method="ward")
        for level in range(1, depth + 1):
            k = min(2 ** level, len(classes))
            assign = fcluster(tree, t=k, criterion="maxclust")
            new_ids = {}
            for i, a in enumerate(assign):
                key = (parent_of[i], a)
                if key not in new_ids:
                    nid = f"n{len(nodes)}"
                    nodes.append(TaxonomyNode(nid, f"group_{level}_{len(new_ids)}",
                                              parent_ids[parent_of[i]], 0))
                    new_ids[key] = len(parent_ids)
                    parent_ids[len(parent_ids)] = nid
                parent_of[i] = new_ids[key]
    for i, c in enumerate(classes):
        nodes.append(TaxonomyNode(f"n{len(nodes)}", c, parent_ids[parent_of[i]], 1))
    return Taxonomy(nodes)


def gen_synthetic(spec, seed=0):
    """Classes with latent centres seen through two different linear views.

    sketch = A_sk mu + noise, image = A_im mu + noise, text = B mu + noise.
    ``modality_transform_seed`` fixes A_sk, A_im and the text maps B;
    ``seed`` draws centres, noise and the unseen-class choice.
    """
    classes = [f"class_{k:02d}" for k in range(spec.n_classes)]
    trng = np.random.default_rng(spec.modality_transform_seed)
    scale = 1.0 / np.sqrt(spec.latent_dim)
    a_sk = trng.normal(0.0, scale, size=(spec.feature_dim, spec.latent_dim))
    a_im = trng.normal(0.0, scale, size=(spec.feature_dim, spec.latent_dim))
    b_txt = [trng.normal(0.0, scale, size=(spec.text_dim, spec.latent_dim))
             for _ in range(spec.n_text_sources)]

    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(spec.n_classes, spec.latent_dim))
    unseen = sorted(classes[i] for i in
                    rng.choice(spec.n_classes, spec.n_classes - spec.n_seen, replace=False))

    records = []
    for k, c in enumerate(classes):
        split = "test" if c in unseen else "train"
        for modality, a, n in (("sketch", a_sk, spec.n_sketch), ("image", a_im, spec.n_image)):
            base = a @ centers[k]
            noise = rng.normal(size=(n, spec.feature_dim))
            for j in range(n):
                feat = base + spec.cluster_spread * noise[j]
                records.append(FeatureRecord(f"{modality[:2]}_{c}_{j:04d}", c, modality,
                                             split, feat))
    texts = []
    for b in b_txt:
        noise = rng.normal(size=(spec.n_classes, spec.text_dim))
        vecs = centers @ b.T + spec.text_spread * noise
        texts.append(TextEmbeddingTable({c: vecs[k] for k, c in enumerate(classes)}))
    tax = _cluster_taxonomy(classes, centers, spec.taxonomy_depth)
    return SyntheticData(records, tax, texts, classes, unseen, centers)


def write_synthetic(data, out_dir):
    """Write features.csv, taxonomy.json and embeddings[_k].txt; return paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"features": out / "features.csv", "taxonomy": out / "taxonomy.json"}
    save_features(data.records, paths["features"])
    data.taxonomy.save(paths["taxonomy"])
    emb_paths = []
    for k, table in enumerate(data.texts):
        p = out / ("embeddings.txt" if k == 0 else f"embeddings_{k + 1}.txt")
        table.save(p)
        emb_paths.append(p)
    paths["embeddings"] = emb_paths
    return paths

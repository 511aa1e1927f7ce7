"""Zero-shot retrieval, ranking metrics and the 1-D Wasserstein diagnostic."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .nn import forward

METRICS = ("euclidean", "cosine")


@dataclass
class RetrievalIndex:
    codes: np.ndarray
    ids: list
    classes: list

    def __post_init__(self):
        if not (len(self.codes) == len(self.ids) == len(self.classes)):
            raise ShapeError("index codes, ids and classes are not aligned")

    def __len__(self):
        return len(self.ids)


@dataclass
class RankedRetrieval:
    query_id: str
    query_class: str
    ids: list
    distances: np.ndarray
    relevant: np.ndarray   # bool per ranked item
    n_relevant: int        # relevant items in the whole gallery


def encode(net, records):
    """Codes for ``records``, one forward pass per row.

    Row-at-a-time keeps every code independent of which other records
    share the batch (BLAS rounding differs with batch shape), so an index
    row is exactly ``forward(net, feature[None])``.
    """
    out = np.zeros((len(records), net.output_dim), dtype=net.dtype)
    for i, r in enumerate(records):
        out[i] = forward(net, r.feature[None, :])[0][0]
    return out


def build_index(bundle, image_records):
    bad = [r.id for r in image_records if r.modality != "image"]
    if bad:
        raise ValidationError(f"gallery records must be images, got sketches {bad[:5]}")
    return RetrievalIndex(encode(bundle.G_im, image_records),
                          [r.id for r in image_records], [r.cls for r in image_records])


def pairwise_distances(queries, gallery, metric="euclidean"):
    """(q, g) distance matrix.

    Euclidean sums sorted squared differences so the result is exactly
    invariant to coordinate permutations and sign flips.
    """
    queries, gallery = np.atleast_2d(queries), np.atleast_2d(gallery)
    if queries.shape[1] != gallery.shape[1]:
        raise ShapeError(f"query dim {queries.shape[1]} != gallery dim {gallery.shape[1]}")
    if metric == "euclidean":
        diff = queries[:, None, :] - gallery[None, :, :]
        sq = np.sort(diff * diff, axis=2)
        return np.sqrt(sq.sum(axis=2))
    if metric == "cosine":
        qn = queries / np.maximum(np.linalg.norm(queries, axis=1, keepdims=True), 1e-12)
        gn = gallery / np.maximum(np.linalg.norm(gallery, axis=1, keepdims=True), 1e-12)
        return 1.0 - qn @ gn.T
    raise ValidationError(f"unknown metric {metric!r}; use one of {METRICS}")


def rank(distances, ids):
    """Gallery order by distance, ties broken by id."""
    id_rank = np.argsort(np.array(ids, dtype=object), kind="stable")
    id_key = np.empty(len(ids), dtype=np.int64)
    id_key[id_rank] = np.arange(len(ids))
    return np.lexsort((id_key, distances))


def ranked_from_distances(query_id, query_class, dist, index, k=None, order=None):
    if order is None:
        order = rank(dist, index.ids)
    if k is not None:
        order = order[:k]
    classes = np.array(index.classes, dtype=object)
    return RankedRetrieval(
        query_id, query_class,
        [index.ids[i] for i in order],
        dist[order],
        classes[order] == query_class,
        int(np.sum(classes == query_class)),
    )


def retrieve(bundle, index, sketch_record, k=None, metric="euclidean"):
    """Rank the gallery for one sketch query; ``k=None`` keeps everything."""
    if len(index) == 0:
        raise ValidationError("cannot retrieve from an empty index")
    if k is not None and k < 1:
        raise ValidationError("k must be >= 1")
    q = forward(bundle.G_sk, sketch_record.feature[None, :])[0]
    dist = pairwise_distances(q, index.codes, metric)[0]
    return ranked_from_distances(sketch_record.id, sketch_record.cls, dist, index, k)


def average_precision(ranked, n=None):
    """sum_{s<=N} P(s) * delta_r(s), where delta_r(s) = rel(s) / R.

    R is the number of relevant items in the whole gallery, so a truncated
    list gives a truncated sum. Returns 0.0 when R == 0.
    """
    rel = np.asarray(ranked.relevant, dtype=bool)
    if n is None:
        n = len(rel)
    if n > len(rel):
        raise ValidationError(f"cutoff {n} exceeds ranked list length {len(rel)}")
    if ranked.n_relevant == 0:
        return 0.0
    rel = rel[:n]
    hits = np.cumsum(rel)
    precision = hits / np.arange(1, n + 1)
    return float(np.sum(precision[rel]) / ranked.n_relevant)


def precision_at_k(ranked, k=100):
    """Relevant items among the top ``k``, divided by ``k`` even for short lists."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    return float(np.count_nonzero(np.asarray(ranked.relevant[:k], dtype=bool)) / k)


def mean_ap(aps, classes, by="class"):
    """Mean AP over classes (each class the mean of its queries) or over queries."""
    aps = np.asarray(aps, dtype=np.float64)
    if aps.size == 0:
        raise ValidationError("mean_ap needs at least one query")
    if len(classes) != aps.size:
        raise ShapeError("one class per AP required")
    if by == "query":
        return float(aps.mean())
    if by != "class":
        raise ValidationError("by must be 'class' or 'query'")
    per_class = per_class_ap(aps, classes)
    return float(np.mean(list(per_class.values())))


def per_class_ap(aps, classes):
    groups = {}
    for ap, c in zip(aps, classes):
        groups.setdefault(c, []).append(ap)
    return {c: float(np.mean(v)) for c, v in sorted(groups.items())}


def wasserstein_1d(samples_a, samples_b):
    """Exact W1 between two equal-size empirical distributions on the line."""
    a = np.sort(np.asarray(samples_a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(samples_b, dtype=np.float64).ravel())
    if a.size != b.size:
        raise ValidationError(f"sample counts differ: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValidationError("need at least one sample")
    return float(np.abs(a - b).mean())


def domain_gap(codes_a, codes_b):
    """Mean over code coordinates of the 1-D W1 between two code batches."""
    return float(np.mean([wasserstein_1d(codes_a[:, j], codes_b[:, j])
                          for j in range(codes_a.shape[1])]))


# ---------------------------------------------------------------------------
# Whole-split evaluation


@dataclass
class Evaluation:
    rankings: list        # RankedRetrieval per query (full gallery)
    aps: np.ndarray
    precisions: np.ndarray
    query_classes: list
    k: int = 100

    def report(self, config=None, map_by="class"):
        per_class = per_class_ap(self.aps, self.query_classes)
        zero = [r.query_id for r in self.rankings if r.n_relevant == 0]
        return {
            "mAP": mean_ap(self.aps, self.query_classes, by=map_by),
            "mAP_by": map_by,
            "mAP_query_mean": float(self.aps.mean()),
            f"prec@{self.k}": float(self.precisions.mean()),
            "per_class_ap": per_class,
            "n_queries": len(self.rankings),
            "n_classes": len(per_class),
            "queries_without_relevant": zero,
            "config": config or {},
        }


def evaluate(bundle, sketch_records, image_records, k=100, n=None, metric="euclidean"):
    """Rank every image for every sketch and score with AP(N) and Prec@k."""
    if not sketch_records:
        raise ValidationError("no query sketches")
    index = build_index(bundle, image_records)
    if len(index) == 0:
        raise ValidationError("empty gallery")
    queries = encode(bundle.G_sk, sketch_records)
    rankings, aps, precs = [], [], []
    for i, rec in enumerate(sketch_records):
        if i % 256 == 0:
            dist = pairwise_distances(queries[i:i + 256], index.codes, metric)
        r = ranked_from_distances(rec.id, rec.cls, dist[i % 256], index)
        rankings.append(r)
        aps.append(average_precision(r, n))
        precs.append(precision_at_k(r, k))
    return Evaluation(rankings, np.array(aps), np.array(precs),
                      [r.cls for r in sketch_records], k)


def write_rankings_csv(rankings, path, k=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "rank", "gallery_id", "distance", "relevant"])
        for r in rankings:
            top = len(r.ids) if k is None else min(k, len(r.ids))
            for j in range(top):
                w.writerow([r.query_id, j + 1, r.ids[j], repr(float(r.distances[j])),
                            int(bool(r.relevant[j]))])


def write_codes_csv(records, codes, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "class", "modality"] + [f"c{j + 1}" for j in range(codes.shape[1])])
        for rec, row in zip(records, codes):
            w.writerow([rec.id, rec.cls, rec.modality] + [repr(float(v)) for v in row])

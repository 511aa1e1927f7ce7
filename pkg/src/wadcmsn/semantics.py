"""Per-class semantic codes from text vectors and a class taxonomy.

A class embedding is its text vector concatenated with its similarity to
every seen class (path or Jiang-Conrath). A single-hidden-layer
auto-encoder fitted on the seen classes compresses these to code_dim.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .nn import Layer, Mlp, RmsPropState, backward, forward, rmsprop_update

MEASURES = ("path", "jc")


@dataclass
class TaxonomyNode:
    id: str
    name: str
    parent: str | None
    count: int = 0


class Taxonomy:
    """Single-rooted tree of named nodes with occurrence counts."""

    def __init__(self, nodes):
        self.nodes = {}
        for node in nodes:
            if node.id in self.nodes:
                raise ValidationError(f"duplicate node id {node.id!r}")
            if node.count < 0:
                raise ValidationError(f"node {node.id!r} has negative count")
            self.nodes[node.id] = node
        roots = [n.id for n in self.nodes.values() if n.parent is None]
        if len(roots) != 1:
            raise ValidationError(f"taxonomy needs exactly one root, found {len(roots)}")
        self.root = roots[0]
        self.children = {nid: [] for nid in self.nodes}
        for n in self.nodes.values():
            if n.parent is not None:
                if n.parent not in self.nodes:
                    raise ValidationError(f"node {n.id!r} has unknown parent {n.parent!r}")
                self.children[n.parent].append(n.id)
        self.depth = {}
        stack = [(self.root, 0)]
        while stack:
            nid, d = stack.pop()
            self.depth[nid] = d
            stack.extend((c, d + 1) for c in self.children[nid])
        if len(self.depth) != len(self.nodes):
            raise ValidationError("parent links contain a cycle or detached nodes")
        self._by_name = {}
        for n in self.nodes.values():
            self._by_name.setdefault(n.name, []).append(n.id)
        self._subtree_count = {}
        for nid in sorted(self.nodes, key=lambda i: -self.depth[i]):
            self._subtree_count[nid] = self.nodes[nid].count + sum(
                self._subtree_count[c] for c in self.children[nid])

    def __len__(self):
        return len(self.nodes)

    def resolve(self, name):
        ids = self._by_name.get(name, [])
        if len(ids) != 1:
            what = "unknown" if not ids else "ambiguous"
            raise KeyError(f"{what} taxonomy class {name!r}")
        return ids[0]

    def ancestors(self, nid):
        """``nid`` followed by its ancestors up to the root."""
        out = [nid]
        while self.nodes[out[-1]].parent is not None:
            out.append(self.nodes[out[-1]].parent)
        return out

    def lcs(self, a, b):
        """Lowest common subsumer of two node ids."""
        seen = set(self.ancestors(a))
        for nid in self.ancestors(b):
            if nid in seen:
                return nid
        raise AssertionError("single-rooted tree always has a common ancestor")

    def effective_count(self, nid):
        return self._subtree_count[nid]

    def information_content(self, nid):
        c = self.effective_count(nid)
        if c <= 0:
            raise ValidationError(f"node {nid!r} has zero effective count")
        return -math.log(c / self.effective_count(self.root))

    # file format: JSON list of {"id", "name", "parent", "count"}
    @classmethod
    def from_records(cls, records):
        try:
            nodes = [TaxonomyNode(str(r["id"]), str(r["name"]),
                                  None if r["parent"] is None else str(r["parent"]),
                                  int(r.get("count", 0)))
                     for r in records]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad taxonomy record: {exc}") from exc
        return cls(nodes)

    def to_records(self):
        return [{"id": n.id, "name": n.name, "parent": n.parent, "count": n.count}
                for n in self.nodes.values()]

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc.msg}", exc.lineno) from exc
        if isinstance(data, dict):
            data = data.get("nodes")
        if not isinstance(data, list):
            raise ParseError(f"{path}: expected a list of nodes")
        return cls.from_records(data)

    def save(self, path):
        Path(path).write_text(json.dumps({"nodes": self.to_records()}, indent=1) + "\n")


def path_similarity(tax, a, b):
    """1 / (1 + number of edges between ``a`` and ``b``)."""
    na, nb = tax.resolve(a), tax.resolve(b)
    top = tax.lcs(na, nb)
    hops = tax.depth[na] + tax.depth[nb] - 2 * tax.depth[top]
    return 1.0 / (1.0 + hops)


def jiang_conrath_distance(tax, a, b):
    na, nb = tax.resolve(a), tax.resolve(b)
    if na == nb:
        tax.information_content(na)  # still validate the count
        return 0.0
    top = tax.lcs(na, nb)
    d = (tax.information_content(na) + tax.information_content(nb)
         - 2.0 * tax.information_content(top))
    return max(d, 0.0)


def jiang_conrath_similarity(tax, a, b):
    return 1.0 / (1.0 + jiang_conrath_distance(tax, a, b))


def similarity(tax, a, b, measure):
    if measure == "path":
        return path_similarity(tax, a, b)
    if measure == "jc":
        return jiang_conrath_similarity(tax, a, b)
    raise ValidationError(f"unknown measure {measure!r}; use one of {MEASURES}")


# ---------------------------------------------------------------------------
# Text vectors


class TextEmbeddingTable(dict):
    """Mapping class name -> fixed-width vector."""

    @property
    def dim(self):
        return len(next(iter(self.values()))) if self else 0

    @classmethod
    def load(cls, path, dim=None):
        """Read ``name v1 ... vD`` lines; names may not contain spaces."""
        table = cls()
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.split()
                if not parts:
                    continue
                name, vals = parts[0], parts[1:]
                try:
                    vec = np.array([float(v) for v in vals])
                except ValueError as exc:
                    raise ParseError(str(exc), lineno) from exc
                if dim is None:
                    dim = len(vec)
                if len(vec) != dim:
                    raise ParseError(f"expected {dim} values, got {len(vec)}", lineno)
                if not np.isfinite(vec).all():
                    raise ParseError("non-finite value", lineno)
                if name in table:
                    raise ParseError(f"duplicate word {name!r}", lineno)
                table[name] = vec
        return table

    def save(self, path):
        with open(path, "w") as fh:
            for name, vec in self.items():
                fh.write(name + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def build_class_embedding(cls_name, text, tax, measure, seen_classes):
    """Text vector followed by similarities to each seen class."""
    if cls_name not in text:
        raise KeyError(f"no text vector for class {cls_name!r}")
    sims = [similarity(tax, cls_name, other, measure) for other in seen_classes]
    return np.concatenate([np.asarray(text[cls_name], dtype=np.float64),
                           np.asarray(sims, dtype=np.float64)])


def uncovered_classes(classes, text, tax):
    """Classes missing from either the text table or the taxonomy."""
    missing = []
    for c in classes:
        try:
            tax.resolve(c)
            ok = c in text
        except KeyError:
            ok = False
        if not ok:
            missing.append(c)
    return missing


# ---------------------------------------------------------------------------
# Auto-encoder combiner


@dataclass
class Combiner:
    """Standardiser + encoder/decoder pair fitted on seen-class embeddings."""

    mean: np.ndarray
    scale: np.ndarray
    encoder: Mlp
    decoder: Mlp
    history: list = field(default_factory=list)

    def encode(self, embeddings):
        z = (np.atleast_2d(embeddings) - self.mean) / self.scale
        return forward(self.encoder, z)[0]

    def reconstruct(self, embeddings):
        return forward(self.decoder, self.encode(embeddings))[0] * self.scale + self.mean


def _reconstruction(encoder, decoder, z, sparsity):
    codes, t_enc = forward(encoder, z)
    recon, t_dec = forward(decoder, codes)
    n = z.shape[0]
    r = recon - z
    loss = float((r * r).sum() / n + sparsity * np.abs(codes).sum() / n)
    g_dec, g_codes = backward(decoder, t_dec, 2.0 * r / n)
    g_enc, _ = backward(encoder, t_enc, g_codes + sparsity * np.sign(codes) / n)
    return loss, g_enc, g_dec


def fit_combiner(embeddings, code_dim=64, steps=2000, learning_rate=1e-2,
                 sparsity=0.0, activation="tanh", seed=0, encoder=None,
                 decoder=None, standardize=True):
    """Fit an auto-encoder ``in -> code_dim -> in`` by full-batch RMSprop.

    Squared reconstruction error (plus an optional L1 penalty on codes)
    is minimised on the rows of ``embeddings``. Pass ``encoder``/``decoder``
    to start from given networks.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise ValidationError("need at least two embedding rows")
    if np.allclose(emb, emb[0]):
        raise ValidationError("degenerate embeddings: all rows are equal")
    if standardize:
        mean = emb.mean(axis=0)
        scale = emb.std(axis=0)
        scale[scale < 1e-12] = 1.0
    else:
        mean, scale = np.zeros(emb.shape[1]), np.ones(emb.shape[1])
    z = (emb - mean) / scale
    rng = np.random.default_rng(seed)
    if encoder is None:
        encoder = Mlp.build([emb.shape[1], code_dim], [activation], rng)
    if decoder is None:
        decoder = Mlp.build([code_dim, emb.shape[1]], ["identity"], rng)
    s_enc = RmsPropState.zeros_like(encoder.params(), learning_rate=learning_rate)
    s_dec = RmsPropState.zeros_like(decoder.params(), learning_rate=learning_rate)
    history = []
    for _ in range(steps):
        loss, g_enc, g_dec = _reconstruction(encoder, decoder, z, sparsity)
        history.append(loss)
        rmsprop_update(encoder, g_enc, s_enc)
        rmsprop_update(decoder, g_dec, s_dec)
    history.append(_reconstruction(encoder, decoder, z, sparsity)[0])
    return Combiner(mean, scale, encoder, decoder, history)


def identity_autoencoder(dim):
    """Linear encoder/decoder pair initialised to the identity map."""
    eye = np.eye(dim)
    return (Mlp([Layer(eye.copy(), np.zeros(dim), "identity")]),
            Mlp([Layer(eye.copy(), np.zeros(dim), "identity")]))


# ---------------------------------------------------------------------------
# Semantic table


@dataclass
class SemanticTable:
    codes: dict                       # class name -> (code_dim,) array
    provenance: dict = field(default_factory=dict)

    @property
    def code_dim(self):
        return len(next(iter(self.codes.values())))

    def matrix(self, classes):
        missing = [c for c in classes if c not in self.codes]
        if missing:
            raise KeyError(f"no semantic code for classes {missing}")
        return np.stack([self.codes[c] for c in classes])

    def save(self, path):
        payload = {
            "provenance": self.provenance,
            "code_dim": self.code_dim,
            "codes": {k: [float(v) for v in vec] for k, vec in self.codes.items()},
        }
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        try:
            payload = json.loads(Path(path).read_text())
            codes = {k: np.asarray(v, dtype=np.float64)
                     for k, v in payload["codes"].items()}
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc.msg}", exc.lineno) from exc
        except (KeyError, TypeError) as exc:
            raise ParseError(f"{path}: missing field {exc}") from exc
        dims = {len(v) for v in codes.values()}
        if len(dims) > 1:
            raise ParseError(f"{path}: codes of mixed dimension {sorted(dims)}")
        return cls(codes, payload.get("provenance", {}))


def build_semantic_table(classes, seen_classes, text, tax, measure, code_dim=64,
                         steps=2000, learning_rate=1e-2, sparsity=0.0, seed=0,
                         text_source=""):
    """Codes for ``classes``; the combiner is fitted on ``seen_classes`` only."""
    missing = uncovered_classes(list(classes) + list(seen_classes), text, tax)
    if missing:
        raise ValidationError(f"classes not covered by text/taxonomy: {sorted(set(missing))}")
    seen = list(seen_classes)
    seen_emb = np.stack([build_class_embedding(c, text, tax, measure, seen) for c in seen])
    comb = fit_combiner(seen_emb, code_dim, steps=steps, learning_rate=learning_rate,
                        sparsity=sparsity, seed=seed)
    all_emb = np.stack([build_class_embedding(c, text, tax, measure, seen) for c in classes])
    codes = comb.encode(all_emb)
    provenance = {
        "text_source": text_source,
        "measure": measure,
        "code_dim": code_dim,
        "seen_classes": seen,
        "combiner_steps": steps,
        "final_reconstruction": comb.history[-1],
        "seed": seed,
    }
    return SemanticTable({c: codes[i] for i, c in enumerate(classes)}, provenance), comb

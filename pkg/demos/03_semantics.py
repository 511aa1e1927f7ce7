"""
Class semantics: taxonomy similarity, text vectors, combined codes
==================================================================

Each class is described by a text vector plus its taxonomy similarity
to every seen class. A small auto-encoder fitted on the seen classes
compresses that description into the semantic code used for training.
"""
import numpy as np

from wadcmsn import (SyntheticSpec, build_semantic_table, gen_synthetic,
                     jiang_conrath_similarity, path_similarity)

data = gen_synthetic(SyntheticSpec(n_classes=8, n_seen=6, n_sketch=4, n_image=4,
                                   feature_dim=16, text_dim=20), seed=0)
tax, text = data.taxonomy, data.texts[0]
a, b, c = data.classes[:3]
print(f"taxonomy with {len(tax)} nodes; root {tax.root!r}")
for other in (b, c):
    print(f"{a} vs {other}: path {path_similarity(tax, a, other):.3f}, "
          f"JC {jiang_conrath_similarity(tax, a, other):.3f}")

seen = data.split().seen_classes
table, combiner = build_semantic_table(data.classes, seen, text, tax, "jc",
                                       code_dim=8, steps=600, seed=0)
hist = combiner.history
print(f"reconstruction error: {hist[0]:.3f} -> {hist[-1]:.5f} over {len(hist) - 1} steps")
print("unseen classes get codes too:", data.unseen_classes)

codes = table.matrix(data.classes)
dist = np.linalg.norm(codes[:, None] - codes[None], axis=-1)
print("code distance matrix (rounded):")
print(np.round(dist, 2))

"""
Training a small model and retrieving unseen-class images
=========================================================

End to end in memory: synthetic data, semantic codes, a few hundred
alternating critic/generator updates, then mAP on the unseen classes
and a top-5 list for one sketch query.
"""
import tempfile
from pathlib import Path

from wadcmsn import (Architecture, SyntheticSpec, TrainConfig, build_index,
                     build_semantic_table, checkpoint_load, checkpoint_save, evaluate,
                     gen_synthetic, retrieve, train)

data = gen_synthetic(SyntheticSpec(n_classes=8, n_seen=6, n_sketch=20, n_image=20,
                                   feature_dim=64, text_dim=32), seed=0)
split = data.split()
semantic, _ = build_semantic_table(data.classes, split.seen_classes, data.texts[0],
                                   data.taxonomy, "jc", code_dim=16, steps=500)

arch = Architecture(feature_dim=64, code_dim=16, generator_hidden=128,
                    decoder_hidden=128, critic_hidden=64)
config = TrainConfig(max_iterations=400, batch_size=32, architecture=arch, log_every=100)
queries, gallery = split.records("test", "sketch"), split.records("test", "image")


def progress(t, bundle, report):
    if t % 100 == 0:
        m = evaluate(bundle, queries, gallery).report()["mAP"]
        print(f"iter {t:4d}  ps_total {report.ps_total:8.3f}  unseen mAP {m:.3f}")


bundle, log = train(split, semantic, config, on_iteration=progress)
report = evaluate(bundle, queries, gallery, k=10).report()
print(f"final mAP {report['mAP']:.3f}, prec@10 {report['prec@10']:.3f}")

with tempfile.TemporaryDirectory() as tmp:
    ckpt = Path(tmp) / "model.ckpt"
    checkpoint_save(bundle, ckpt)
    bundle = checkpoint_load(ckpt)

index = build_index(bundle, gallery)
hit = retrieve(bundle, index, queries[0], k=5)
print("query", hit.query_id)
for rank, (gid, d, rel) in enumerate(zip(hit.ids, hit.distances, hit.relevant), 1):
    print(f"  {rank}. {gid}  distance {d:.3f}  {'match' if rel else ''}")

"""
The training objective on one batch
===================================

Builds a small model, draws one class-paired batch and prints every
loss term together with the two totals the optimisers minimise:
``dis_total`` for the critics and ``ps_total`` for generators and head.
"""
import numpy as np

from wadcmsn import Architecture, Batch, LossWeights, build_bundle, loss_and_grads

rng = np.random.default_rng(0)
arch = Architecture(feature_dim=32, code_dim=8, generator_hidden=24,
                    decoder_hidden=24, critic_hidden=16)
model = build_bundle(arch, n_classes=4, seed=0)

labels = rng.integers(4, size=10)
class_codes = rng.normal(size=(4, 8))
batch = Batch(x=rng.normal(size=(10, 32)), y=rng.normal(size=(10, 32)),
              s=class_codes[labels], labels=labels)

report, critic_grads, gen_grads = loss_and_grads(batch, model)
for name, value in report.as_dict().items():
    print(f"{name:>10s}  {value: .5f}")

print("critic grads for:", sorted(critic_grads))
print("generator-side grads for:", sorted(gen_grads))

# Switching a term off changes only the generator-side total
no_cycle = loss_and_grads(batch, model, LossWeights(cyc=0.0), need_grads=False)[0]
print("ps_total without cycle terms:", round(no_cycle.ps_total, 5),
      "(cycle contributed", round(report.cyc_sk + report.cyc_im, 5), ")")

# The non-Wasserstein adversarial variant uses log-likelihood critics
standard = loss_and_grads(batch, model, mode="standard", need_grads=False)[0]
print("standard-GAN dis_total:", round(standard.dis_total, 5))

# Finite-difference audit of the backward pass on a small model.

import numpy as np

from boxattn import (DecodeState, Model, ModelConfig, Vocabulary,
                     bce_with_logits, gradient_check)
from boxattn.harness import build_batch
from boxattn.synth import SceneParams, generate_dataset

vocab = Vocabulary()
scenes = generate_dataset(2, SceneParams(k_min=5, k_max=5), seed=12)
batch, rel, targets, teacher, _ = build_batch(scenes, vocab, n_ans=3)

# 4 heads at context 2 leave most relation types unowned; the model warns
# about the blind spots and carries on
cfg = ModelConfig(structure="1N->1S", d_model=24, n_heads=4,
                  intermediate_size=32, context_size=2, dropout=0.0,
                  vocab_size=len(vocab), feature_dim=scenes[0].feature_dim,
                  n_ques=batch.layout.n_ques, n_obj=batch.layout.n_obj,
                  n_ocr=batch.layout.n_ocr, n_ans=3)
model = Model(cfg, seed=0)
print(f"{model.n_parameters} parameters, {len(model.params)} tensors")


def loss_fn():
    scores = model.forward(batch, rel, DecodeState.teacher(teacher))
    return bce_with_logits(scores, targets).mean()


worst, report = gradient_check(loss_fn, model.parameters, h=1e-5)
groups = sorted(report, key=report.get, reverse=True)
for name in groups[:5]:
    print(f"  {report[name]:.3e}  {name}")
print(f"worst relative error {worst:.3e} over {len(report)} parameters")
assert worst < 1e-6

# How the relation graph becomes per-head attention masks.
#
# Each head owns the implicit relation plus a contiguous run of c graph
# types (wrapping mod 12). In a spatial layer a region token may attend a
# region token only if some owned type labels their edge; everything else
# gets -inf added to the logits.

import numpy as np

from boxattn import (RELATION_NAMES, ModalityLayout, assign_head_relations,
                     build_bias, mask_density, randomize_graph)

layout = ModalityLayout(n_ques=4, n_obj=6, n_ocr=4, n_ans=2)
print(f"sequence: {layout.n_ques} question + {layout.n_obj} object + "
      f"{layout.n_ocr} ocr + {layout.n_ans} answer = {layout.total} tokens")

for c in (1, 2, 12):
    assign = assign_head_relations(12, c)
    names = lambda h: sorted(RELATION_NAMES[t] for t in assign.types_for_head(h)
                             if t < 12)
    print(f"\ncontext size {c}: head 0 owns {names(0)}, head 11 owns {names(11)}")

g = randomize_graph(layout.n_region, seed=21)
assign = assign_head_relations(12, 2)

spatial = build_bias(g, layout, assign, spatial_layer=True)
vanilla = build_bias(g, layout, assign, spatial_layer=False)
print(f"\noverall unmasked fraction: spatial {mask_density(spatial):.3f}, "
      f"vanilla {mask_density(vanilla):.3f}")

# per-head budgets differ because each head sees a different slice of the
# graph; the vanilla layer only carries the shared modality structure
# (question rows silenced, answers causal, context blind to answers)
per_head = spatial.allowed().mean(axis=(1, 2))
print("spatial per-head:", np.round(per_head, 3))

# one head's view of the region block, X = masked
h = 0
block = spatial.values[h, layout.n_ques:layout.n_context,
                       layout.n_ques:layout.n_context]
print(f"\nhead {h} region block ({'X = masked'}):")
for row in block:
    print("  " + " ".join("." if np.isfinite(v) else "X" for v in row))

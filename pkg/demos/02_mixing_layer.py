"""Inside one mixing block.

Walks the scored neighborhood aggregation step by step on a small graph:
neighbor scores, softmax weights, the per-k outputs, the fixed weighted
sum across k levels, and the inverse-map inter-set pass.
"""

import numpy as np

from eventmixer import Var
from eventmixer.model import (
    ModelConfig,
    _init_ccm,
    build_structure,
    ccm_intra_set,
    ccm_level_aggregate,
    ccm_inter_set,
    ccm_scores,
    mixer_block,
)
from eventmixer import autodiff as ad

rng = np.random.default_rng(0)
n, width = 12, 6
config = ModelConfig(n_classes=3, widths=(width,) * 4, k_set=(3, 5), seed=1)
block = _init_ccm(config, rng, width, width, with_inter=True)

positions = rng.random((n, 3))
features = Var(rng.standard_normal((n, width)))
levels = build_structure(positions, config)
level0 = levels[0]

print(f"{n} nodes, k levels {config.k_set}, level weights {config.level_weights}")

# scores: g2([g1(x_j); delta(e_i - e_j)]) per neighbor
scores = ccm_scores(block, 0, positions, positions, features, level0.pyramid[0], None)
print("\nscore rows (k=3):")
print(scores.value[:3].round(3))

weights = ad.softmax_rows(scores, None)
print("softmax weights per neighborhood (rows sum to 1):")
print(weights.value[:3].round(3))

# per-level mixes, then the fixed weighted sum
mixes = []
for li, index_map in enumerate(level0.pyramid):
    s = ccm_scores(block, li, positions, positions, features, index_map, None)
    mixes.append(ccm_intra_set(block, li, s, features, index_map, None))
combined = ccm_level_aggregate(mixes, block.level_weights, None)
print("\nper-level outputs combined with weights", block.level_weights)
print("node 0 mix:", combined.value[0].round(3))

# inter-set: each node receives the mean of the mixes whose sets contain it
out = ccm_inter_set(block, combined, level0.inter_inverse, None)
print("after inter-set residual:", out.value[0].round(3))

# the whole block in one call
full = mixer_block(block, level0, features, None)
print("\nmixer_block output matches the steps above:",
      bool(np.array_equal(full.value, out.value)))

"""
Semantic matching loss on toy embeddings
========================================

The loss is a symmetric contrastive cross-entropy between original and
virtual embeddings of the same batch. Matched rows sit on the diagonal.
"""
import math

import numpy as np

from trml.objective import cosine_similarity_matrix, normalize_similarity, semantic_matching_loss_pair

# four identical embeddings: every row is equally similar to every column,
# so the loss is ln 4 regardless of temperature
same = np.tile([0.2, -1.0, 0.5], (4, 1))
print("identical rows:", semantic_matching_loss_pair(same, same, 0.1), "ln 4 =", math.log(4))

# orthonormal pairs give S = I; at tau = 0.5 the loss is ln(1 + e^-2)
eye = np.eye(2)
print("S = I, tau = 0.5:", semantic_matching_loss_pair(eye, eye, 0.5))

# random pairs: lowering tau sharpens the softmax over each row
rng = np.random.default_rng(0)
orig = rng.normal(size=(6, 8))
virt = orig + 0.3 * rng.normal(size=(6, 8))
S = cosine_similarity_matrix(orig, virt)
for tau in (1.0, 0.3, 0.05):
    y = normalize_similarity(S, tau)
    print(f"tau={tau:<5} loss={semantic_matching_loss_pair(orig, virt, tau):.4f} "
          f"mean diagonal prob={np.mean(np.diag(y.y_row)):.3f}")

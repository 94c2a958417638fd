"""
Inspecting learned representations
==================================

Cosine-similarity heatmaps compare original and virtual embeddings of a few
samples; the 2-D projection places all four representation kinds in one
principal-component plane. Both are written as plain CSV.
"""
import tempfile
from pathlib import Path

import numpy as np

from trml.dataset import SyntheticConfig, generate_synthetic
from trml.evaluation import export_projection_2d, export_similarity_heatmap, similarity_heatmaps
from trml.trainer import TrainConfig, train

syn = SyntheticConfig(n_train=300, n_valid=50, n_test=60)
ds = generate_synthetic(syn)
params, _ = train(TrainConfig(synthetic=syn, setting="B", p=1.0, epochs=20, lr=1e-3), ds)

ids = [r.id for r in ds.records if r.split == "test"][:6]
mats = similarity_heatmaps(params, ds, ids)
for kind, M in mats.items():
    off = M[~np.eye(len(ids), dtype=bool)]
    print(f"{kind:<15} diagonal mean {np.mean(np.diag(M)):+.3f}  off-diagonal mean {np.mean(off):+.3f}")

out = Path(tempfile.mkdtemp())
paths = export_similarity_heatmap(params, ds, ids, out)
coords = export_projection_2d(params, ds, "test", out / "projection_test.csv")
print("wrote", sorted(p.name for p in paths.values()), "and projection_test.csv to", out)
n = len(coords) // 4
for k, tag in enumerate(("text", "virtual_text", "visual", "virtual_visual")):
    print(f"{tag:<15} centroid {coords[k * n:(k + 1) * n].mean(axis=0).round(3)}")

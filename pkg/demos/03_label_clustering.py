"""
Pseudo-label groups from relation frequencies
=============================================

Object categories are described by how often each relation targets them.
Categories with similar profiles are clustered, and the number of groups is
the smallest k whose groups are cohesive and well supported.
"""

import numpy as np

from relpipe.clustering import build_frequency_matrix, cohesion, kmeans, select_k
from relpipe.synthetic import SynthSpec, family_spec_list, generate

# four planted families of sizes 2..5, each dominated by a different relation
spec = SynthSpec(seed=1, n_scenes=600, image_size=(16, 16), with_depth=False,
                 families=family_spec_list([0, 3, 5, 8], [2, 3, 4, 5], 10))
ds = generate(spec)
matrix = build_frequency_matrix(ds.train, ds.vocab)
print("categories:", matrix.n_categories, "triples:", int(matrix.support.sum()))
print("planted:", ds.planted["families"])

for k in (2, 3, 4, 5):
    model = kmeans(matrix, k, seed=0)
    rep = cohesion(matrix, model)
    print(f"k={k}  wcss={model.wcss:.4f}  sigma={rep.aggregate_sigma:.4f}")

# too few groups merge families and the sigma jumps; pick the threshold between
model, report, trace = select_k(matrix, (2, 8), seed=0, max_sigma=0.02, min_support=50)
print("selected k:", trace.selected_k)
for g in range(model.k):
    top = ds.vocab.relation_labels[int(np.argmax(model.group_distribution[g]))]
    print(f"  group {g}: members {model.members(g)}  mostly {top!r}")

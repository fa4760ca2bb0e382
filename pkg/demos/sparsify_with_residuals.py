"""
Top-k sparsification with residual accumulation
===============================================

A provider transmits only its largest entries and keeps the rest for later.
"""

import numpy as np
from blockdfl.compression import accumulate, densify, top_k_sparsify

# a small update; half the entries are kept at sparsity 0.5
d = np.array([3.0, -1.0, 0.5, 2.0])
sparse, residual = top_k_sparsify(d, 0.5)
print("sent indices", sparse.indices, "values", sparse.values)
print("kept back   ", residual)

# next round the residual rides along with the fresh update
d2 = np.array([0.1, -0.2, 0.9, 0.0])
sparse2, residual2 = top_k_sparsify(accumulate(residual, d2), 0.5)
print("round 2 sent", densify(sparse2))

# nothing is lost: what was sent plus what is held equals what was produced
total = densify(sparse) + densify(sparse2) + residual2
print("conserved:", np.allclose(total, d + d2))

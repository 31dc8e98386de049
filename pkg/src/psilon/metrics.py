"""Near-sparsity and exact-sparsity measurements.

Near-sparsity extends bit-vector sparsity 1 - (1/d) 1^T v to real vectors
through the exponentiated entropy of the normalized magnitude profile; it
is invariant to permutation, sign, and nonzero rescaling.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .nets import Network, effective_weights

__all__ = ["SparsityReport", "near_sparsity", "network_sparsity"]


@dataclass
class SparsityReport:
    per_vector: list[float]
    network_nsparsity: float
    exact_sparsity: float

    def to_json(self) -> dict:
        return asdict(self)


def near_sparsity(v) -> float:
    """1 - exp(entropy of |v|/||v||_1)/d, with 0 ln 0 = 0; 1 for the zero
    vector.  Equals exact sparsity on bit vectors, 0 on uniform vectors,
    and tops out at 1 - 1/d for one-hot vectors."""
    v = np.asarray(v, dtype=np.float64)
    d = v.size
    total = np.sum(np.abs(v))
    if total == 0.0:
        return 1.0
    p = np.abs(v) / total
    nz = p[p > 0.0]
    entropy = -np.sum(nz * np.log(nz))
    return float(1.0 - np.exp(entropy) / d)


def network_sparsity(net: Network) -> SparsityReport:
    """Row-wise near-sparsity over every effective weight matrix (both the
    plus and minus matrices of residual pairs), averaged unweighted.
    Biases are excluded.  exact_sparsity is the fraction of exactly-zero
    entries over the same rows."""
    per_vector: list[float] = []
    zeros = 0
    entries = 0
    for w in effective_weights(net):
        for row in w:
            per_vector.append(near_sparsity(row))
        zeros += int(np.sum(w == 0.0))
        entries += w.size
    return SparsityReport(
        per_vector=per_vector,
        network_nsparsity=float(np.mean(per_vector)),
        exact_sparsity=zeros / entries,
    )

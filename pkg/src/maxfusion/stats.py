"""Per-location channel statistics over feature maps.

Three quantities drive the fusion rules, all computed independently at
each spatial location (j, k) from the C-element channel vectors:

* the population standard deviation sigma across channels, a proxy for
  how strongly a branch's condition expresses itself at that location
  (quiet regions have flat channel vectors, active regions spiky ones);
* sigma_hat, the same map divided by its own spatial sum, which makes
  branches with different absolute activation scales comparable;
* rho, the cosine similarity between two branches' channel vectors,
  which gates whether they agree enough to be averaged.

Accumulation happens in float64 even though feature maps store float32,
so the variance of wide channel stacks does not cancel.  Reductions use
numpy's fixed row-major pairwise order, keeping outputs bit-reproducible
on a given platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import FeatureMap, SpatialMap


@dataclass(frozen=True)
class StatsConfig:
    """Numeric guards for degenerate inputs.

    epsilon_norm: channel-vector norms and sigma spatial sums below this
    threshold are treated as zero signal.
    """

    epsilon_norm: float = 1e-12

    def __post_init__(self):
        if not (self.epsilon_norm > 0):
            raise ValueError(f"epsilon_norm must be > 0, got {self.epsilon_norm}")


def channel_std_map(f: FeatureMap) -> SpatialMap:
    """Population standard deviation over channels at each location.

    Divides by C, not C-1, so C=1 inputs are well-defined (sigma = 0)
    and the variance-selection path degenerates to tie-breaking.
    """
    return SpatialMap(f.data.astype(np.float64).std(axis=0))


def normalized_std_map(f: FeatureMap, cfg: StatsConfig | None = None) -> SpatialMap:
    """Sigma map divided by its spatial sum; entries sum to 1.

    If the spatial sum is below epsilon_norm (an all-constant feature
    map), returns the exactly uniform map 1/(H*W) instead of dividing
    by zero.
    """
    cfg = cfg or StatsConfig()
    sigma = f.data.astype(np.float64).std(axis=0)
    total = float(sigma.sum())
    if total < cfg.epsilon_norm:
        return SpatialMap(np.full(sigma.shape, 1.0 / sigma.size))
    return SpatialMap(sigma / total)


def correlation_map(f1: FeatureMap, f2: FeatureMap, cfg: StatsConfig | None = None) -> SpatialMap:
    """Cosine similarity of the two branches' channel vectors per location.

    Values are clamped into [-1, 1] to absorb float rounding.  If either
    vector's norm is below epsilon_norm the location gets rho = 0: a
    zero feature carries no conditioning signal, so the gate should fall
    through to variance selection, where the zero branch loses.
    """
    cfg = cfg or StatsConfig()
    if f1.shape != f2.shape:
        raise ValueError(f"shape mismatch: {f1.shape} vs {f2.shape}")
    a = f1.data.astype(np.float64)
    b = f2.data.astype(np.float64)
    dot = (a * b).sum(axis=0)
    n1sq = (a * a).sum(axis=0)
    n2sq = (b * b).sum(axis=0)
    ok = (np.sqrt(n1sq) >= cfg.epsilon_norm) & (np.sqrt(n2sq) >= cfg.epsilon_norm)
    rho = np.zeros_like(dot)
    # single sqrt of the product keeps rho(f, f) at exactly 1.0
    np.divide(dot, np.sqrt(n1sq * n2sq), out=rho, where=ok)
    np.clip(rho, -1.0, 1.0, out=rho)
    return SpatialMap(rho)

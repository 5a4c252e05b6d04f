"""Per-location statistics on two synthetic branch feature maps.

Builds two 8-channel feature maps whose activity lives in different
image regions, then walks through the three diagnostics the fusion
rules consume: the channel-std map sigma (bright where a branch is
active), the spatially normalized sigma_hat (comparable across
branches), and the correlation map rho (cosine similarity of the two
channel vectors at each location).  Heatmaps land in ./out_demo as PGM
files you can open with any image viewer.

Run after installing the package:  python3 demos/01_variance_maps.py
"""

from pathlib import Path

import numpy as np

from maxfusion import (
    FeatureMap,
    channel_std_map,
    correlation_map,
    normalized_std_map,
    write_pgm,
)

out = Path("out_demo")
out.mkdir(exist_ok=True)

rng = np.random.default_rng(0)
H = W = 32
C = 8

# branch A is active on the left half, branch B on the right, with a
# shared band in the middle where both see the same underlying signal
shared = rng.normal(size=(C, H, W)).astype(np.float32)


def masked_branch(col_lo, col_hi, own_scale):
    mask = np.zeros((H, W), dtype=np.float32)
    mask[:, col_lo:col_hi] = 1.0
    own = rng.normal(size=(C, H, W)).astype(np.float32)
    blend = np.where(np.arange(W)[None, None, :] < 20, own_scale * own, shared)
    return FeatureMap(blend * mask[None])


f_a = masked_branch(0, 24, own_scale=2.0)
f_b = masked_branch(12, 32, own_scale=0.5)

for name, fm in (("a", f_a), ("b", f_b)):
    sigma = channel_std_map(fm)
    sigma_hat = normalized_std_map(fm)
    print(f"branch {name}: sigma  mean={sigma.data.mean():.4f}  max={sigma.data.max():.4f}")
    print(f"branch {name}: sigma_hat sums to {sigma_hat.data.sum():.6f}")
    with open(out / f"sigma_{name}.pgm", "wb") as fh:
        write_pgm(sigma, fh)
    with open(out / f"sigma_hat_{name}.pgm", "wb") as fh:
        write_pgm(sigma_hat, fh)

rho = correlation_map(f_a, f_b)
print(f"rho: min={rho.data.min():+.3f}  max={rho.data.max():+.3f}")
print("rho is 1.0 in the shared band (columns 20..23), 0 where either branch is silent:")
print(np.array2string(rho.data[16, 8:32:2], precision=2))
with open(out / "rho.pgm", "wb") as fh:
    write_pgm(rho, fh)

print(f"wrote heatmaps to {out}/")

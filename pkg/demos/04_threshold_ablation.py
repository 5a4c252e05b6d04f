"""Sweep the correlation gate threshold on both two-branch presets.

Every run replays identical noise, so the only thing changing is how
eagerly locations are averaged instead of winner-selected.  On the
contradictory preset rho is 0 everywhere (the branches never overlap),
so the averaged fraction steps from 1 to 0 as delta crosses 0.  On the
complementary preset the overlap correlates at 0.8 by construction, so
the drop happens between 0.75 and 1.
"""

from maxfusion import preset_scenario, run_ablation

DELTAS = [-1.0, 0.0, 0.25, 0.5, 0.7, 0.75, 1.0]

for preset in ("contradictory", "complementary"):
    scn = preset_scenario(preset)
    rows = run_ablation(scn, DELTAS)
    print(f"{preset} preset:")
    print(f"  {'delta':>6s} {'averaged':>9s} " +
          " ".join(f"{'mse_' + str(b):>8s}" for b in range(len(scn.branches))))
    for row in rows:
        mses = " ".join(f"{m:8.4f}" for m in row.branch_mse)
        print(f"  {row.delta:6.2f} {row.averaged_fraction:9.3f} {mses}")
    fracs = [r.averaged_fraction for r in rows]
    assert all(a >= b for a, b in zip(fracs, fracs[1:])), "fraction must not increase"
    print()

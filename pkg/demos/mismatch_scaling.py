"""How often the coupling breaks before T as the scatterers shrink.

For three fanned initial velocities the mismatch probability is estimated
along a grid of eps and compared with r (N T + N^2 / w).  The fitted
constant column should stay roughly flat.
Run: python3 demos/mismatch_scaling.py  (about a minute)
"""

from lorentzgas.schedule import spread_velocities
from lorentzgas.statistics import estimate_mismatch_probability, linear_fit_in_r

T, w, M = 4.0, 0.5, 2000
vel = spread_velocities(3, w)
ests = [estimate_mismatch_probability(eps, T, M, seed=1, velocities=vel)
        for eps in (0.1, 0.05, 0.025)]
print(f"{'eps':>8} {'r':>10} {'p_hat':>8} {'+-':>8} {'bound':>8} {'C':>6}")
for e in ests:
    s = e.summary()
    print(f"{s['eps']:8.4f} {s['r']:10.5f} {s['p_hat']:8.4f} {s['ci_half_width']:8.4f} "
          f"{s['bound']:8.4f} {s['fitted_C']:6.3f}")
slope, icept, r2 = linear_fit_in_r([e.r for e in ests], [e.p_hat.estimate for e in ests])
print(f"\nlinear fit p = {slope:.3f} r + {icept:.4f},  R^2 = {r2:.3f}")

"""Rescaled flights against Brownian motion.

Endpoint KS tests at a long and a very short horizon, and the mean of each
path functional next to its Brownian value.  The short horizon is ballistic
and should fail the Gaussian test.  Endpoint functionals match within a
couple of standard errors; the sup-type ones are still biased low at T=100
because a flight turns only about 100 times, and that gap shrinks like T^-1/2.
Run: python3 demos/diffusive_limit.py  (about 30 s)
"""

from lorentzgas.statistics import donsker_test

reports = {T: donsker_test(1.0, T, 5000, seed=2, wiener_paths=20_000, n_steps=500)
           for T in (100.0, 0.1)}
for T, rep in reports.items():
    print(f"T = {T}: KS p-values per coordinate", [f"{p:.3g}" for p in rep.ks_pvalues])
rep = reports[100.0]
print(f"\n{'functional':>16} {'flight':>8} {'Brownian':>9} {'gap/se':>7}")
for k, (m, se) in rep.functional_means.items():
    w = rep.wiener_means[k][0]
    print(f"{k:>16} {m:8.4f} {w:9.4f} {rep.functional_agreement(k):7.1f}")

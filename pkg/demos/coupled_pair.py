"""Two Lorentz particles in one environment and their coupled flights.

Prints the stopping times of the coupling and the first few events of each
trajectory, then checks that the Lorentz and flight paths agree up to sigma.
Run: python3 demos/coupled_pair.py [seed]
"""

import sys

import numpy as np

from lorentzgas import first_divergence, mismatch_times
from lorentzgas.schedule import spread_velocities
from lorentzgas.statistics import coupled_replica

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 3
eps, T = 0.1, 8.0
ens = coupled_replica(eps, T, spread_velocities(2, 0.4), env_seed=seed, clock_seed=seed,
                      replica=0)
names = ("sigma1 recollision", "sigma2 shadowing", "sigma3", "sigma4", "sigma")
for name, value in zip(names, mismatch_times(ens)):
    print(f"{name:>20}: {value:.6g}")
print(f"{'first divergence':>20}: {first_divergence(ens):.6g}")

np.set_printoptions(precision=4, suppress=True)
for j, (x, y) in enumerate(zip(ens.lorentz, ens.flights)):
    print(f"\nparticle {j}: {x.n_events} collisions, {y.n_events} flight events")
    print("  Lorentz event times:", x.times[:6])
    print("  flight event times: ", y.times[:6])

"""Event-driven Lorentz gas with a quenched coupling to Markovian flights."""

from .environment import (BasePointProcess, EnvironmentView, FixtureEnvironment, cell_points,
                          scatterers_along)
from .dynamics import CollisionEvent, LorentzPath, next_collision, reflect, simulate_lorentz
from .flight import FlightPath, flight_covariance, sample_flight, sample_uniform_sphere
from .coupling import (CoupledEnsemble, FreshnessFlag, ShadowEvent, build_coupled_flights,
                       first_divergence, freshness, mismatch_times, shadow_indicator,
                       tube_distance)
from .schedule import ScalingRow, check_schedule, min_angle, radius_of, sample_cap

__version__ = "0.1.0"
from .statistics import (FUNCTIONALS, EstimateWithCI, PathFunctional, donsker_test,
                         estimate_event_probabilities, estimate_mismatch_probability,
                         green_occupation, quenched_average_experiment)

import numpy as np
import pytest

from harrisvol.gig import GigParams
from harrisvol.harris import GigMarginal, SfHarrisParams, sample_at_times, simulate
from harrisvol.inference import ObservationSeries


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def observe_process(alpha, marginal, n, grid_step, rng):
    """Simulate one path and sample it on an equidistant grid."""
    par = SfHarrisParams(alpha=alpha, marginal=marginal)
    traj = simulate(par, (n + 1) * grid_step, rng)
    times = np.arange(n + 1) * grid_step
    return ObservationSeries(times=times, values=sample_at_times(traj, times))


def gig_observations(alpha, params, n, grid_step, rng):
    return observe_process(alpha, GigMarginal(GigParams(*params)), n, grid_step, rng)

"""Harris jump processes, GIG inference, and the stochastic volatility pipeline."""

__version__ = "0.1.0"

from .gig import GigParams, gig_kl, gig_logpdf, gig_moments, gig_sample
from .harris import (
    DiscreteUniformMarginal,
    GigMarginal,
    MixtureSpec,
    SemiMarkovSpec,
    SfHarrisParams,
    Trajectory,
    autocorrelation,
    integrate,
    sample_at_times,
    semigroup_apply,
    simulate,
    simulate_mixture,
    simulate_semi_markov,
    transition_weights,
)
from .inference import (
    ObservationSeries,
    PosteriorChains,
    Priors,
    estimate_em,
    estimate_mle,
    estimate_ndnj,
    gibbs_a,
    gibbs_b,
    hpd_interval,
    loglik,
    posterior_mode,
    predict_trajectories,
)

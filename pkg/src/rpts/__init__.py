"""Particle Thompson sampling, regenerative PTS and particle-survival analysis."""
from ._accel import NUMBA_ENABLED
from .bandits import (
    EnvironmentSpec,
    InvalidActionError,
    InvalidEnvironmentError,
    ParticleSystem,
    expected_reward,
    generate_particles,
    instantaneous_regret,
    likelihood,
    optimal_action,
    project_to_theta,
    sample_observation,
)
from .samplers import (
    BetaPosterior,
    ConfigError,
    GaussianPosterior,
    RptsConfig,
    pts_step,
    rpts_condition,
    rpts_regenerate,
    rpts_step,
    ts_beta_step,
    ts_kalman_step,
)
from .simulate import RegretTrace, run_netslice, run_particle_bandit, run_ts_beta, run_ts_kalman

__version__ = "0.1.0"

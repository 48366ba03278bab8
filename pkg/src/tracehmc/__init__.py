"""Nonparametric Hamiltonian Monte Carlo over program traces."""

from tracehmc.dist import Beta1, Laplace, Normal, Poisson, Uniform
from tracehmc.model import Model, RunContext, run, run_extending, run_gradient, run_replay
from tracehmc.nphmc import SamplerConfig, nphmc_step, run_chain
from tracehmc.npdhmc import npdhmc_step
from tracehmc.trace import C, D, Kind, OutOfDomain, State

__all__ = [
    "Beta1", "Laplace", "Normal", "Poisson", "Uniform",
    "Model", "RunContext", "run", "run_extending", "run_gradient", "run_replay",
    "SamplerConfig", "nphmc_step", "npdhmc_step", "run_chain",
    "C", "D", "Kind", "OutOfDomain", "State",
]

__version__ = "0.1.0"

"""Grid state-estimation research toolkit.

The package models a DC power grid, estimates its state from telemetered
flows, and studies the arms race around residual-based bad-data detection:
stealthy false-data injection, a neural detector for it, gradient attacks
on that detector, and a set of hardening strategies.

Layout:

- :mod:`fdialab.grid` -- grid cases and the measurement model.
- :mod:`fdialab.estimation` -- weighted least-squares estimation and the
  residual bad-data test.
- :mod:`fdialab.fdia` -- stealthy injection vectors under compromised-meter
  constraints.
- :mod:`fdialab.neural` -- a small from-scratch feed-forward classifier.
- :mod:`fdialab.attack` -- constrained gradient attacks on the classifier.
- :mod:`fdialab.defense` -- distillation, adversarial training, adversarial
  sample detection, and randomized input padding.
- :mod:`fdialab.harness` -- dataset generation, experiments, reports, CLI.
"""

from . import attack, defense, estimation, fdia, grid, harness, neural, seeding
from .seeding import derive_rng, derive_seed

__version__ = "0.1.0"

__all__ = [
    "attack",
    "defense",
    "derive_rng",
    "derive_seed",
    "estimation",
    "fdia",
    "grid",
    "harness",
    "neural",
    "seeding",
    "__version__",
]

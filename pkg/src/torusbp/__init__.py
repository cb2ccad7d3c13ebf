"""Two-way and generalized bootstrap percolation on the d-dimensional torus."""
from .lattice import Configuration, TorusShape
from .dynamics import (BP, BiasedMajority, GeneralBP, Majority, ModifiedBP, Phase, RecoveryBP,
                       TwoWayBP, evolve, parse_rule, step)

__version__ = "0.1.0"

__all__ = ["Configuration", "TorusShape", "BP", "BiasedMajority", "GeneralBP", "Majority",
           "ModifiedBP", "Phase", "RecoveryBP", "TwoWayBP", "evolve", "parse_rule", "step"]

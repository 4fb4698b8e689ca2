"""Reaction networks, mass-action scheduling and the reaction grammar."""

from .grammar import GrammarError, ReactionFile, load_reactions, parse_reactions
from .network import (COUNTER, PAYLOAD, TRANSMIT, Inflow, NetworkState, Reaction,
                      ReactionNetwork, Species, attach_inflow)
from .scheduler import (DETERMINISTIC, STOCHASTIC, Arrival, ChemSimulation, FiredReaction,
                        ReactionScheduler, loma_rate, run_until, step)

__all__ = [
    "COUNTER", "PAYLOAD", "TRANSMIT", "STOCHASTIC", "DETERMINISTIC",
    "Species", "Reaction", "ReactionNetwork", "NetworkState", "Inflow", "attach_inflow",
    "FiredReaction", "Arrival", "ReactionScheduler", "ChemSimulation",
    "loma_rate", "step", "run_until",
    "GrammarError", "ReactionFile", "parse_reactions", "load_reactions",
]

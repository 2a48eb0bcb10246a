"""Importing this module registers every package operation."""
from . import bargain_complete, bargain_incomplete, boardgames, mechanism_vcg, planner_mdp  # noqa: F401

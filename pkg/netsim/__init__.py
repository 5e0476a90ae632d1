"""Exact (DES) and fixed-step (DTS) simulation of SI/SIS contact processes on graphs."""

from .graph import Graph, GraphSpec, make_small_world, make_torus, make_tree
from .process import InfectionState, InitSpec, ProcessParams
from .desEngine import run_des
from .dtsEngine import DtsConfig, run_dts
from .coupling import RandomBlock, run_coupled

__version__ = "0.1.0"

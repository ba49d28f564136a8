"""Finite-volume simulation of symmetry-charge pumps on quantum spin chains.

Loops of symmetric product states are generated by time-dependent
interactions; their index is the charge pushed across a cut per cycle.
"""
from .chainspace import ChainGeometry, ChainState, product_state
from .groundstate import finite_gap, onsite_gap_hamiltonian, spectral_flow_kato, z_family
from .index import IndexReport, pump_index, stability_sweep
from .interaction import TDI, Interaction, Piece, StretchedExp
from .pumps import (LoopError, LoopSpec, concat, constant_loop, dress, example_pump,
                    reparametrize, rotate, stack, time_reverse, verify_loop)
from .splitting import SplitError, associated_loop, multi_split, split_single_edge
from .symmetry import DualCharge, OnsiteRep, SymmetryGroup
from .zerodim import ChargeError, contract_loop, kato_transport

__version__ = "0.1.0"

__all__ = [
    "ChainGeometry", "ChainState", "product_state",
    "finite_gap", "onsite_gap_hamiltonian", "spectral_flow_kato", "z_family",
    "IndexReport", "pump_index", "stability_sweep",
    "TDI", "Interaction", "Piece", "StretchedExp",
    "LoopError", "LoopSpec", "concat", "constant_loop", "dress", "example_pump",
    "reparametrize", "rotate", "stack", "time_reverse", "verify_loop",
    "SplitError", "associated_loop", "multi_split", "split_single_edge",
    "DualCharge", "OnsiteRep", "SymmetryGroup",
    "ChargeError", "contract_loop", "kato_transport",
    "__version__",
]

"""Desk-scale simulator of a cavity-decay quantum dense coding protocol.

Subpackages:

* :mod:`qdcsim.hilbert` -- tensor-product state space and Pauli encoding
* :mod:`qdcsim.dynamics` -- conditional atom-cavity evolution
* :mod:`qdcsim.protocol` -- encode/transfer/detect pipeline and batches
* :mod:`qdcsim.security` -- posteriors, cheat games, eavesdropper checks
* :mod:`qdcsim.feasibility` -- hardware-regime arithmetic
* :mod:`qdcsim.cli` -- command-line front end
"""

from .dynamics import PhysicalParams, alpha_beta, evolve_conditional, transfer_time
from .hilbert import (
    Message,
    MESSAGES,
    SiteSpec,
    StateVector,
    SystemLayout,
    basis_state,
    pauli_encode,
)
from .protocol import (
    DetectorModel,
    RoundConfig,
    RoundOutcome,
    bell_weights,
    build_decode_table,
    map_to_cavities,
    prepare_ghz,
    receiver_rotation,
    run_batch,
    run_round,
    simulate_window,
    success_probability_formula,
)

__all__ = [
    "PhysicalParams",
    "alpha_beta",
    "evolve_conditional",
    "transfer_time",
    "Message",
    "MESSAGES",
    "SiteSpec",
    "StateVector",
    "SystemLayout",
    "basis_state",
    "pauli_encode",
    "DetectorModel",
    "RoundConfig",
    "RoundOutcome",
    "bell_weights",
    "build_decode_table",
    "map_to_cavities",
    "prepare_ghz",
    "receiver_rotation",
    "run_batch",
    "run_round",
    "simulate_window",
    "success_probability_formula",
]

__version__ = "0.1.0"

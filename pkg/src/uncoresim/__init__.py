"""Mixed-abstraction soft-error injection simulator for a small multi-core SoC.

The package models a memory subsystem (L2 banks, memory controllers, crossbar)
at two abstraction levels: a fast functional mode for whole-run execution and a
bit-level co-simulation mode for the one component under fault injection, kept
honest by a lockstep golden twin.  On top of that sit statistical injection
campaigns, outcome classification, recovery-challenge metrics, and a quick
replay recovery (QRR) implementation for the L2 banks and memory controllers.
"""

__version__ = "0.1.0"

from .config import SimConfig
from .injector import InjectionSpec, Outcome, RunRecord, execute_run, run_campaign

__all__ = ["SimConfig", "InjectionSpec", "Outcome", "RunRecord",
           "execute_run", "run_campaign", "__version__"]

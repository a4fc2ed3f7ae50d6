"""sanrepair: autonomous repair of sanitizer-reported memory-safety crashes.

The harness classifies a sanitizer crash signature, drives an LLM through a
debugger-backed investigation loop, repairs the structure of the proposed
unified diff, and validates patches by rebuild + PoC re-execution + tests.
"""

__version__ = "0.1.0"

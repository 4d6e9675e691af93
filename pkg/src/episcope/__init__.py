"""Episcope: decide knowledge properties of programs whose agents each
observe only part of the variable space.

Queries are answered two ways: a translation to first-order logic
discharged to an external SMT solver, and a bounded explicit-state
evaluator used as ground truth on small instances.
"""

__version__ = "0.1.0"

"""Desk-scale cardiac electromechanics simulator.

Coupled pipeline: monodomain electrophysiology with heterogeneous
ischemia, phenomenological active-strain activation, Guccione passive
mechanics and a 0D closed-loop (or Windkessel) circulation.
"""

__version__ = "0.1.0"

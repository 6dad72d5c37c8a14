"""Stepwise multi-hop question answering.

Iterative per-hop supporting-sentence identification, grounded sub-question
generation and answering, and a unified reader trained jointly over all hops.
"""

__version__ = "0.1.0"

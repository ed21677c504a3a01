"""Two-stage robust day-ahead offering toolkit for DER aggregators.

Classical column-and-constraint generation plus a neural-surrogate variant
where trained ReLU networks are embedded into the master and subproblem
MILPs.  See README.md for the command-line entry points.
"""

__version__ = "0.1.0"

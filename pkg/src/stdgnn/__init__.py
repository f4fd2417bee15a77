"""Spatial-temporal dynamic graph learning for bug triage.

Build time-sliced developer collaboration networks from bug-tracker event
logs, sample them with joint random walks, learn node representations with a
recurrent convolutional network and evaluate developer-attribute and
bug-fixer prediction.
"""

__version__ = "0.1.0"

"""uqtrain: uncertainty-aware robust training for noisy labels.

A small float64 autodiff core plus the pieces built on it: feature
statistics with stochastic compensation, an uncertainty head, distance
based triplet mining, uncertainty-weighted feature mixing, and a
deterministic training/evaluation harness.
"""

__version__ = "0.1.0"

"""Robust online estimation and inference for linear policy evaluation.

Modules: ``huber`` (pseudo-Huber loss and thresholds), ``estimator``
(online Newton-type estimator), ``longrun`` (long-run covariance and
intervals), ``mdp`` (environments and the exact oracle), ``contamination``
(reward noise and outliers), ``lsa`` (averaged TD baseline with multiplier
bootstrap), ``harness`` and ``cli`` (experiments and CSV reports).
"""

__version__ = "0.1.0"

"""Anomalous sound detection: TriStat-gated spectral features, a dual-path
selective state-space backbone, angular-margin ID classification, and
negative-log-probability anomaly scoring."""

__version__ = "0.1.0"

"""Noise-robust collaborative multi-label training on tabular features.

Two small networks are trained side by side. Each one ranks the samples of
a mini-batch by a group-lasso ranking loss and hands its lowest-loss share
to its peer for the classification update, while two kernel discrepancy
terms keep their outputs consistent and their hidden representations apart.
"""
__version__ = "0.1.0"

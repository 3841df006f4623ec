"""domex: field-value extraction from detail web pages.

A library and CLI that classifies DOM-tree leaf nodes with a two-stage
neural pipeline (local node encoder, then a node-pair relation network),
trains on a few seed websites, and transfers label-free to unseen websites
of the same vertical.
"""

__version__ = "0.1.0"

"""TGV-regularised initial-condition recovery for the inviscid Burgers equation."""

__version__ = "0.1.0"

"""Weak-transcript pretraining workbench for small CTC speech recognisers."""

__version__ = "0.1.0"

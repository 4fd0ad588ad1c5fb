"""Cycle-consistency training for regression pairs with non-injective inverses."""

__version__ = "0.1.0"

"""Fairness analysis for proof-of-work fee markets: closed-form frontrunning and
publishing-fairness measures, a round-based mining simulator, a fast-vs-slow
strategy game solver and OHIE rank arithmetic."""

__version__ = "0.1.0"

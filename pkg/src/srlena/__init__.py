"""Trace-to-network pipeline for self-regulated learning analytics.

Raw interaction logs are mapped to actions, actions are labelled with
learning processes by greedy pattern matching, labelled sequences are turned
into epistemic networks, and group differences are tested by regression.
"""

__version__ = "0.1.0"

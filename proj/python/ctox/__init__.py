"""Causal token ATE tables, L_p SCM sentence scores and toxicity metrics."""

from ._core import *  # noqa: F401,F403
from ._core import testbed  # noqa: F401

__version__ = "0.3.0"

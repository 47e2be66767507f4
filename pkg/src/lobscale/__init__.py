"""Limit order book simulation and its scaling limits.

Submodules cover the tick-level book simulator (:mod:`lobscale.microsim`),
the queue-to-jump-law calculus (:mod:`lobscale.theta`), the averaged jump
process, the scaled prelimit chain, the reflected jump SDE, path
estimators and the experiment driver behind the ``lobscale`` command.
"""

__version__ = "0.1.0"

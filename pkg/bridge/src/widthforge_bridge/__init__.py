"""Trainer backend speaking the widthforge evaluator protocol over stdio.

This package deliberately does not import widthforge; the architecture JSON
schema and the line-delimited request/response protocol are its only
contract with the optimizer side.
"""

__version__ = "0.1.0"

RECIPE_VERSION = "desk-sgd-v1"

"""Python front end for the bandit OT core.

JSON-valued entry points accept and return plain dicts.
"""

import json

from . import _core
from ._core import (
    CSV_HEADER,
    ConfigError,
    DiscreteMeasure,
    Error,
    InfeasibleAction,
    cosine_basis,
    epsilon_sum_bound,
    is_coupling,
    kantorovich,
    loci_basis,
    noise_term,
    pairing,
    relative_entropy,
    sinkhorn,
    varying_order_bound,
)

__all__ = [
    "CSV_HEADER",
    "ConfigError",
    "DiscreteMeasure",
    "Error",
    "InfeasibleAction",
    "baseline",
    "cosine_basis",
    "env_summary",
    "epsilon_sum_bound",
    "is_coupling",
    "kantorovich",
    "loci_basis",
    "noise_term",
    "pairing",
    "relative_entropy",
    "run",
    "sinkhorn",
    "to_csv",
    "varying_order_bound",
]


def env_summary(spec):
    return json.loads(_core.env_summary(json.dumps(spec)))


def baseline(spec, epsilon=0.0):
    return json.loads(_core.baseline(json.dumps(spec), epsilon))


def run(config):
    """Run an experiment config; returns {"meta": ..., "records": [...]}."""
    return json.loads(_core.run(json.dumps(config)))


def to_csv(records):
    return _core.to_csv(json.dumps(records))

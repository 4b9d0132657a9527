"""Python front end for the cohort library.

Configurations are passed as ``{key: value}`` string overrides, using the
same keys as the CLI config files (``model.gamma``, ``synthetic.n_patients``, ...).
"""

from ._core import (
    ConfigError,
    NumericError,
    ParseError,
    ValidationError,
    adjusted_rand_index,
    average_precision,
    canonical_config,
    compute_metrics,
    config_hash,
    evaluate,
    jaccard_similarity,
    load_config,
    sweep,
    synthetic_summary,
    train,
)


def _value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(_value(x) for x in v)
    return str(v)


def _stringify(overrides):
    return {str(k): _value(v) for k, v in (overrides or {}).items()}


def run(overrides=None, **kwargs):
    """Train once. Keyword arguments use ``__`` for ``.``: ``model__gamma=0.95``."""
    merged = _stringify(overrides)
    merged.update(_stringify({k.replace("__", "."): v for k, v in kwargs.items()}))
    return train(merged)


__all__ = [
    "ConfigError", "NumericError", "ParseError", "ValidationError",
    "adjusted_rand_index", "average_precision", "canonical_config", "compute_metrics",
    "config_hash", "evaluate", "jaccard_similarity", "load_config", "run", "sweep",
    "synthetic_summary", "train",
]

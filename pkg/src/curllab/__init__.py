"""curllab: curl eigenfields, Reeb dynamics, and instability certificates on T^3."""

__version__ = "0.1.0"

from .fields import (
    CollocationGrid,
    FourierField,
    MetricField,
    codifferential,
    conformal_metric,
    contact_defect,
    exterior_d,
    flat,
    flat_metric,
    hodge,
    l2_inner,
    l2_norm,
    named_metric,
    random_metric,
    sharp,
)

__all__ = [
    "CollocationGrid",
    "FourierField",
    "MetricField",
    "codifferential",
    "conformal_metric",
    "contact_defect",
    "exterior_d",
    "flat",
    "flat_metric",
    "hodge",
    "l2_inner",
    "l2_norm",
    "named_metric",
    "random_metric",
    "sharp",
    "__version__",
]

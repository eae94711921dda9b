"""Distributional deviation of training orders, and the shift experiments built on it.

Submodules: ``transport`` (entropic optimal transport), ``sequencing``
(permutation trajectories), ``grouping`` (outlier counts and deviation
groups), ``theory`` (half-normal bias model), ``harness`` (synthetic shift
experiments), plus ``io``, ``reduction``, ``plotting`` and ``cli``.
"""

from importlib import resources

from .errors import ADBError

__version__ = "0.1.0"


def smoke_dataset_path():
    """Path of the bundled 240 x 4 smoke dataset (CSV with label column ``y``)."""
    return resources.files(__package__) / "data" / "smoke.csv"


__all__ = ["ADBError", "smoke_dataset_path", "__version__"]

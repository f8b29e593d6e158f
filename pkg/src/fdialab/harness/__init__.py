"""Dataset generation, experiment drivers, report exports, and the CLI."""

from . import datasets, experiments, reports

__all__ = ["datasets", "experiments", "reports"]

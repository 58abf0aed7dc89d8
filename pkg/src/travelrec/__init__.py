"""Multi-task generative travel recommender with an embedded autodiff core."""

__version__ = "0.1.0"

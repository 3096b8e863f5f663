"""Full-body pose estimation from head and wrist trackers with state space blocks."""

__version__ = "0.1.0"

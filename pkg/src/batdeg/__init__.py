"""Battery degradation under randomized cyclic protocols: protocol synthesis,
synthetic cycling, automated feature spaces, learners and test scheduling."""

__version__ = "0.1.0"

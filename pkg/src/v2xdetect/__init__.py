"""Joint GPS-spoofing and jamming detection for V2I links with coupled
generalized dynamic Bayesian networks."""

__version__ = "0.1.0"

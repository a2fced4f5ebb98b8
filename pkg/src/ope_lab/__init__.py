"""Off-policy evaluation with linear features: LSPE and a lower-bound instance."""
__version__ = "0.1.0"

"""Non-neutral Wright-Fisher chains, their ancestral duals and limit laws."""
__version__ = "0.1.0"

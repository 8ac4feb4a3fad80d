"""Bootstrap percolation laboratory: closure engine, special functions,
structural events and reproducible Monte Carlo estimation."""

__version__ = "0.1.0"

"""Random substitution systems: invariant states, Gibbs potentials, correlation decay and primitivity."""

__version__ = "0.3.0"

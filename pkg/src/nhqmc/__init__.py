"""Monte Carlo dynamics simulator for arbitrary non-Hermitian Hamiltonians.

The package decomposes a non-unitary evolution into an integral of
unitaries over a kernel variable k, estimates observable expectation
values as a ratio of two Monte Carlo means, and ships an open-system
front end via Lindbladian vectorization.
"""

__version__ = "0.1.0"

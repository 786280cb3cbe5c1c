"""Natural-gradient Gaussian filtering on matrix Lie groups."""

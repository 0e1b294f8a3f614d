"""Distributionally robust covariance steering with an adaptive-control
certificate: plan a mean/covariance-steering control schedule under
Wasserstein-ball CVaR safety constraints, augment it with an L1 adaptive
loop, and validate both guarantees by seeded Monte Carlo simulation.
"""

__version__ = "0.1.0"

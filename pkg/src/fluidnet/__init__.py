"""
fluidnet: reflection maps, overflow rate functions and Monte Carlo for stochastic fluid networks.

- Exact Skorokhod reflection of drift-plus-jump paths
- Large-deviations rate of buffer overflow (one big jump per node)
- Compound Poisson simulation with Weibull-type jumps
"""

__version__ = "0.1.0"

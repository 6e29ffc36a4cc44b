"""fslm: feature selection for simulator models via likelihood marginalization.

The library trains a single mixture-density-network surrogate of a simulator's
likelihood, marginalizes that surrogate analytically over subsets of data
features, and ranks features by how much posterior uncertainty grows when they
are removed.  It ships two reference simulators (a linear-Gaussian toy model
with a closed-form posterior, and a single-compartment Hodgkin-Huxley neuron),
sample-based divergence metrics, posterior samplers, and a command-line
interface around the whole pipeline.
"""

from fslm._version import __version__

__all__ = ["__version__"]

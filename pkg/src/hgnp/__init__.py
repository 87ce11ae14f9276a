"""Joint neuron pruning and flat-minimum training for small feed-forward nets."""

__version__ = "0.1.0"

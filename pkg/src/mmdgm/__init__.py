"""Max-margin deep generative models: a variational autoencoder trained jointly with a max-margin classifier."""

__version__ = "0.1.0"

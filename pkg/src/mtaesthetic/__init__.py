"""Multi-task CNNs that learn aesthetic quality jointly with semantic tags.

Subpackages and modules:

- :mod:`mtaesthetic.linalg` -- symmetric eigensolver, PSD square root, inverse
- :mod:`mtaesthetic.network` -- layer graph, variants, checkpoints
- :mod:`mtaesthetic.objectives` -- loss terms and gradients
- :mod:`mtaesthetic.training` -- SGD loop, covariance updates, gradient check
- :mod:`mtaesthetic.data` -- labeling, splits, augmentation, synthetic data, I/O
- :mod:`mtaesthetic.cli` -- the ``mtaesthetic`` command
"""
__version__ = "0.1.0"

"""Graph classification with separate homophilic and heterophilic branches.

Submodules: ``graph`` (graph types, homophily statistics), ``data``
(TUDataset loading, folds, reports), ``preprocess`` (node replication,
category blocks), ``spectral`` (Jacobi eigensolver, high-pass kernels),
``autodiff`` (reverse-mode autodiff, Adam), ``model`` (IntraNet, InterNet
and baselines), ``train`` (cross-validation) and ``cli``.
"""

__version__ = "0.1.0"

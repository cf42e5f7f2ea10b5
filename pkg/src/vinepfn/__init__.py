"""Prior-fitted network classification for vineyard disease risk.

Submodules: ``numerics`` (autodiff), ``prior`` (synthetic task prior),
``pfn`` (transformer training and inference), ``preprocess``,
``baselines`` (GBDT, logistic), ``explain`` (TreeSHAP), ``eval``
(benchmark protocol), ``geomap`` (probability rasters) and ``cli``.
"""

__version__ = "0.1.0"

"""Desk-scale laboratory for few-shot class-incremental representation learning.

Subpackages: ``autodiff`` (tensor engine and geometric primitives),
``encoder`` (unit-sphere MLP feature extractor), ``losses`` (temperature /
margin cosine cross-entropy, contrastive, inter/intra class-distance terms),
``protocol`` (session state machine), ``metrics`` (transferability and
spread analysis), ``ib`` (covariance bound and neural MI estimation),
``data`` (synthetic clusters, IDX loader, augmentation), ``experiment`` and
``cli`` (reproducible runs).
"""

__version__ = "0.1.0"

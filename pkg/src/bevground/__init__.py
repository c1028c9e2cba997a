"""LiDAR-based 3D visual grounding toolkit.

Subpackages cover the full desk-scale pipeline: synthetic corpus generation
and preprocessing (``bevground.data``), text encoders (``bevground.text``),
the two-stage detect-then-match baseline (``bevground.baseline``), the
one-stage BEV grounding network (``bevground.model``), evaluation
(``bevground.evalkit``), and the foundation-model annotation pipeline
(``bevground.annotate``).
"""

from bevground.geometry import Box3D, PointCloudFrame, bev_iou, iou_3d, points_in_box

__version__ = "0.1.0"

__all__ = [
    "Box3D",
    "PointCloudFrame",
    "bev_iou",
    "iou_3d",
    "points_in_box",
    "__version__",
]

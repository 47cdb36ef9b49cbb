"""Patch-based lung nodule detection workbench for chest radiographs.

Pipeline: lung segmentation masks -> per-lung bounding boxes -> overlapping
patch grid -> per-patch labels -> small residual classifier -> exact metrics
and CAM heatmaps, with a click-labeling HTTP service and batch CLI on top.
"""

__version__ = "0.1.0"

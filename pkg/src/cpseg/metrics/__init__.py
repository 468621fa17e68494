"""Dice, 95th-percentile Hausdorff and average surface distance, plus reporting."""
from .report import METRICS, CaseMetrics, MetricsReport, evaluate_case
from .stats import betainc, paired_t_test, t_two_sided_p
from .surface import (EmptySurfaceError, SurfacePoints, asd, dice, directed_distances, extract_surface, hausdorff,
                      hd95, percentile95, surface_error_map, surface_mask)

__all__ = [
    "METRICS", "CaseMetrics", "MetricsReport", "evaluate_case", "betainc", "paired_t_test", "t_two_sided_p",
    "EmptySurfaceError", "SurfacePoints", "asd", "dice", "directed_distances", "extract_surface", "hausdorff",
    "hd95", "percentile95", "surface_error_map", "surface_mask",
]

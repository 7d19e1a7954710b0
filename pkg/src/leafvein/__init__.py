"""Leaf-vein text contour representation: labels, reconstruction, losses and analysis."""

__version__ = "0.1.0"

from .config import ConfigError, LvtConfig, preset_for
from .geometry import (
    GeometryError,
    Point,
    PolarGrid,
    Polygon,
    RasterMask,
    mask_iou,
    ray_to_contour_distance,
    rasterize,
    rotate_points,
    shrink_polygon,
)
from .mainvein import MainVein, StartPointSample, fit_main_vein, middle_sample, sample_lateral_starts
from .veins import VeinSet, grow_veins, rectify_direction
from .codec import CodecError, EncodeDegenerateError, LengthMap, LvtLabel, decode, encode, roundtrip_iou
from .loss import dice_loss, global_incentive_loss, incentive_coeff, nl_loss, total_loss
from .analysis import SweepReport, render_instance, synth_corpus, upper_bound_sweep
from .datasets import Annotation, AnnotationParseError, parse_icdar15, parse_msra, parse_polyline_format

__all__ = [
    "ConfigError",
    "LvtConfig",
    "preset_for",
    "GeometryError",
    "Point",
    "PolarGrid",
    "Polygon",
    "RasterMask",
    "mask_iou",
    "ray_to_contour_distance",
    "rasterize",
    "rotate_points",
    "shrink_polygon",
    "MainVein",
    "StartPointSample",
    "fit_main_vein",
    "middle_sample",
    "sample_lateral_starts",
    "VeinSet",
    "grow_veins",
    "rectify_direction",
    "CodecError",
    "EncodeDegenerateError",
    "LengthMap",
    "LvtLabel",
    "decode",
    "encode",
    "roundtrip_iou",
    "dice_loss",
    "global_incentive_loss",
    "incentive_coeff",
    "nl_loss",
    "total_loss",
    "SweepReport",
    "render_instance",
    "synth_corpus",
    "upper_bound_sweep",
    "Annotation",
    "AnnotationParseError",
    "parse_icdar15",
    "parse_msra",
    "parse_polyline_format",
]

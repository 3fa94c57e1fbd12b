"""External file formats: one module per format."""

from .colorize import flow_to_color, flow_to_hsv, heatmap_to_image, overlay
from .correspondences import parse_correspondences, read_correspondences, write_correspondences
from .flo import load_flo, read_flo, save_flo, write_flo
from .frames import FrameIndex, FrameRecord, parse_frame_index, read_frame_index, write_frame_index
from .gyro_log import GyroLog, parse_gyro_log, read_gyro_log, write_gyro_log
from .homography import parse_homography_array, read_homography_array, write_homography_array
from .images import load_image, luma_uint8, pad_to_multiple, save_image, to_luma

__all__ = [
    "FrameIndex",
    "FrameRecord",
    "GyroLog",
    "flow_to_color",
    "flow_to_hsv",
    "heatmap_to_image",
    "load_flo",
    "load_image",
    "luma_uint8",
    "overlay",
    "pad_to_multiple",
    "parse_correspondences",
    "parse_frame_index",
    "parse_gyro_log",
    "parse_homography_array",
    "read_correspondences",
    "read_flo",
    "read_frame_index",
    "read_gyro_log",
    "read_homography_array",
    "save_flo",
    "save_image",
    "to_luma",
    "write_correspondences",
    "write_flo",
    "write_frame_index",
    "write_gyro_log",
    "write_homography_array",
]

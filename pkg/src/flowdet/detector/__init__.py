from .network import Detector, DetectorConfig, STRIDES
from .loss import LevelTargets, LossBreakdown, assign_targets, compute_loss, decode_box_corners, iou_corners
from .postprocess import Detection, decode_and_nms, decode_frame, iou_matrix, nms_keep, rerun_nms
from .train import ClipSample, SgdMomentum, TrainResult, TrainSettings, train

__all__ = [
    "Detector", "DetectorConfig", "STRIDES", "LevelTargets", "LossBreakdown",
    "assign_targets", "compute_loss", "decode_box_corners", "iou_corners",
    "Detection", "decode_and_nms", "decode_frame", "iou_matrix", "nms_keep", "rerun_nms",
    "ClipSample", "SgdMomentum", "TrainResult", "TrainSettings", "train",
]

"""Clip-based training: momentum SGD, half-cosine decay, staged motion fusion.

Clips are short consecutive-frame windows of one stream; the recurrent state
is threaded through a clip and cut at its boundary. For epochs before
``fusion_start_epoch`` the temporal neck is bypassed so only the static path
trains; from that epoch on the neck parameters join the graph.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..mstf import FlowState
from .loss import assign_targets, compute_loss
from .network import Detector

META_EPOCH = "meta.epochs_done"
OPT_PREFIX = "opt."


@dataclass
class ClipSample:
    """Frames of one stream window plus per-frame ground truth."""

    frames: list          # (H, W, 3) float arrays in [0, 1]
    boxes: list           # per frame (N_i, 4) xyxy pixel arrays
    classes: list         # per frame (N_i,) int arrays
    video_id: int = 0

    def __post_init__(self):
        if not (len(self.frames) == len(self.boxes) == len(self.classes)):
            raise ValueError("frames, boxes and classes must align per frame")


@dataclass
class TrainSettings:
    epochs: int = 8
    lr: float = 5e-3
    momentum: float = 0.9
    grad_clip: float = 10.0
    lr_floor_frac: float = 0.05
    seed: int = 0
    augment: bool = True

    def lr_at(self, step: int, total_steps: int) -> float:
        floor = self.lr * self.lr_floor_frac
        if total_steps <= 1:
            return self.lr
        frac = min(step / (total_steps - 1), 1.0)
        return floor + (self.lr - floor) * 0.5 * (1.0 + np.cos(np.pi * frac))


class SgdMomentum:
    def __init__(self, params: dict, momentum: float = 0.9):
        self.params = params
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, lr: float) -> None:
        for name, t in self.params.items():
            if t.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += t.grad
            t.data = t.data - lr * v

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def clip_gradients(self, max_norm: float) -> float:
        total = 0.0
        for t in self.params.values():
            if t.grad is not None:
                total += float((t.grad.astype(np.float64) ** 2).sum())
        norm = float(np.sqrt(total))
        if max_norm > 0 and norm > max_norm:
            scale = max_norm / (norm + 1e-12)
            for t in self.params.values():
                if t.grad is not None:
                    t.grad = t.grad * scale
        return norm


@dataclass
class TrainResult:
    records: list = field(default_factory=list)
    aborted: bool = False
    epochs_done: int = 0
    velocity: dict = field(default_factory=dict)

    def state_tensors(self, detector: Detector) -> dict:
        out = {name: t.data for name, t in detector.named_parameters().items()}
        for name, v in self.velocity.items():
            out[OPT_PREFIX + name] = v
        out[META_EPOCH] = np.asarray([self.epochs_done], dtype=np.float32)
        return out


def clip_rng(seed: int, epoch: int, clip_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, epoch, clip_index]))


def train(detector: Detector, clips: list, settings: TrainSettings,
          augment_fn=None, start_epoch: int = 0, resume_state: dict | None = None,
          on_epoch=None) -> TrainResult:
    """Run the training loop; returns records and the abort flag.

    ``augment_fn(frames, boxes_list, classes_list, rng)`` applies one
    clip-consistent transform; epoch/clip RNG derivation makes a resumed run
    replay the exact remaining schedule.
    """
    params = detector.named_parameters()
    optimizer = SgdMomentum(params, momentum=settings.momentum)
    if resume_state:
        for name, v in optimizer.velocity.items():
            key = OPT_PREFIX + name
            if key in resume_state:
                optimizer.velocity[name] = np.ascontiguousarray(resume_state[key], dtype=v.dtype)

    result = TrainResult(epochs_done=start_epoch)
    total_steps = max(settings.epochs * len(clips), 1)
    snapshot = {name: t.data.copy() for name, t in params.items()}
    grids = detector.config.grid_shapes()

    step_idx = start_epoch * len(clips)
    for epoch in range(start_epoch, settings.epochs):
        fuse = detector.mstf_params is not None and epoch >= detector.config.fusion_start_epoch
        order = np.random.default_rng(
            np.random.SeedSequence([settings.seed & 0xFFFFFFFF, epoch])).permutation(len(clips))
        for clip_index in map(int, order):
            clip = clips[clip_index]
            frames, boxes, classes = clip.frames, clip.boxes, clip.classes
            if settings.augment and augment_fn is not None:
                frames, boxes, classes = augment_fn(frames, boxes, classes,
                                                    clip_rng(settings.seed, epoch, clip_index))
            started = time.perf_counter()
            state = FlowState.initial()
            total = None
            cls_sum = box_sum = 0.0
            pos = 0
            for frame, fb, fc in zip(frames, boxes, classes):
                preds, state, _ = detector.forward_frame(frame, state, fuse=fuse)
                targets = assign_targets(fb, fc, grids, detector.config.num_classes)
                loss, breakdown = compute_loss(preds, targets)
                total = loss if total is None else _accumulate(total, loss)
                cls_sum += breakdown.cls
                box_sum += breakdown.box
                pos += breakdown.num_pos
            scale = 1.0 / len(frames)
            loss_val = float(total.data) * scale
            if not np.isfinite(loss_val):
                _restore(params, snapshot)
                result.aborted = True
                result.velocity = optimizer.velocity
                result.records.append({"event": "abort", "epoch": epoch, "step": step_idx,
                                       "loss": loss_val})
                return result
            total.backward(np.asarray(scale, dtype=total.dtype))
            norm = optimizer.clip_gradients(settings.grad_clip)
            optimizer.step(settings.lr_at(step_idx, total_steps))
            optimizer.zero_grad()
            result.records.append({
                "epoch": epoch, "step": step_idx, "loss": loss_val,
                "cls": cls_sum * scale, "box": box_sum * scale, "num_pos": pos,
                "grad_norm": norm, "lr": settings.lr_at(step_idx, total_steps),
                "ms": (time.perf_counter() - started) * 1e3, "fused": bool(fuse),
            })
            step_idx += 1
        snapshot = {name: t.data.copy() for name, t in params.items()}
        result.epochs_done = epoch + 1
        if on_epoch is not None:
            on_epoch(epoch, result)
    result.velocity = optimizer.velocity
    return result


def _accumulate(total, loss):
    from ..numerics.ops import add
    return add(total, loss)


def _restore(params: dict, snapshot: dict) -> None:
    for name, t in params.items():
        t.data = snapshot[name].copy()

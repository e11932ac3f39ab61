"""Evaluation formulas: relative error, PSNR, MPSNR, report rows."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EvalReport",
    "relative_error",
    "psnr",
    "per_frame_psnr",
    "mpsnr",
    "rescale_to_peak",
]


@dataclass
class EvalReport:
    method: str = ""
    dataset: str = ""
    re_bound: float | None = None
    cr_percent: float | None = None
    re: float | None = None
    mpsnr_db: float | None = None
    wall_seconds: float = 0.0
    per_frame: list | None = None


def relative_error(truth: np.ndarray, est: np.ndarray) -> float:
    """||truth - est||_F / ||truth||_F."""
    truth = np.asarray(truth, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if truth.shape != est.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {est.shape}")
    denom = float(np.linalg.norm(truth))
    if denom == 0.0:
        raise ValueError("relative error undefined for a zero truth tensor")
    return float(np.linalg.norm(truth - est)) / denom


def psnr(frame_truth: np.ndarray, frame_est: np.ndarray, peak: float = 255.0) -> float:
    """10 log10(peak^2 / MSE); an exact match reports +inf."""
    frame_truth = np.asarray(frame_truth, dtype=np.float64)
    frame_est = np.asarray(frame_est, dtype=np.float64)
    if frame_truth.shape != frame_est.shape:
        raise ValueError("frame shape mismatch")
    mse = float(np.mean((frame_truth - frame_est) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def per_frame_psnr(video_truth, video_est, temporal_mode: int, peak: float = 255.0) -> list:
    video_truth = np.asarray(video_truth, dtype=np.float64)
    video_est = np.asarray(video_est, dtype=np.float64)
    if video_truth.shape != video_est.shape:
        raise ValueError("video shape mismatch")
    out = []
    for t in range(video_truth.shape[temporal_mode]):
        ft = np.take(video_truth, t, axis=temporal_mode)
        fe = np.take(video_est, t, axis=temporal_mode)
        out.append(psnr(ft, fe, peak))
    return out


def mpsnr(video_truth, video_est, temporal_mode: int, peak: float = 255.0) -> tuple[float, int]:
    """Mean PSNR across frames.  Frames with an exact match (infinite PSNR)
    are excluded from the mean; their count is returned alongside."""
    frames = per_frame_psnr(video_truth, video_est, temporal_mode, peak)
    finite = [f for f in frames if math.isfinite(f)]
    n_inf = len(frames) - len(finite)
    if not finite:
        return math.inf, n_inf
    return float(np.mean(finite)), n_inf


def rescale_to_peak(truth: np.ndarray, est: np.ndarray, peak: float = 255.0):
    """Affine-map ``truth``'s range onto [0, peak] and apply the same map to
    ``est`` so pixel-domain PSNR is meaningful on synthetic data."""
    truth = np.asarray(truth, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    lo = float(truth.min())
    hi = float(truth.max())
    span = hi - lo
    if span == 0.0:
        span = 1.0
    scale = peak / span
    return (truth - lo) * scale, (est - lo) * scale

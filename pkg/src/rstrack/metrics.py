"""Evaluation of tracking runs against ground truth.

Per-frame subspace error, recovery errors and support precision/recall;
per-change detection delays; aggregate means. Everything here is pure and
deterministic given its inputs; wall-clock timing is the one exception and
is carried through from the estimates, never measured here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import Misalignment
from .datagen import GroundTruth
from .linalg import Basis, subspace_error
from .tracker import FrameEstimate, OfflineEstimate, PHASE_UPDATE

TIMING_WARMUP_FRAMES = 10


@dataclass
class ChangeMetrics:
    j: int
    t_j: int
    t_hat_j: Optional[int]
    delay_frames: Optional[int]
    pipeline_overrun: bool = False


@dataclass
class RunMetrics:
    frames: dict
    changes: list
    false_detections: list
    mean_se: float
    mean_frame_time: float
    offline_se: Optional[np.ndarray] = None
    mean_se_offline: float = float("nan")
    extras: dict = field(default_factory=dict)


def _precision_recall(est_supp: np.ndarray, true_supp: np.ndarray) -> tuple[float, float]:
    ne, nt = len(est_supp), len(true_supp)
    if ne == 0 and nt == 0:
        return 1.0, 1.0
    inter = len(np.intersect1d(est_supp, true_supp, assume_unique=True))
    precision = inter / ne if ne else 0.0
    recall = inter / nt if nt else 1.0
    return precision, recall


def _se_series(
    frames_t: np.ndarray,
    basis_ids: np.ndarray,
    bases: Mapping[int, Basis],
    truth: GroundTruth,
) -> np.ndarray:
    out = np.empty(len(frames_t))
    cache: dict[tuple[int, int], float] = {}
    for i, (t, bid) in enumerate(zip(frames_t, basis_ids)):
        seg = truth.segment_of(int(t))
        key = (int(bid), seg)
        if key not in cache:
            cache[key] = subspace_error(bases[int(bid)], truth.bases[seg])
        out[i] = cache[key]
    return out


def evaluate(
    estimates: Sequence[FrameEstimate],
    truth: GroundTruth,
    bases: Mapping[int, Basis],
    offline: Optional[Sequence[OfflineEstimate]] = None,
    offline_bases: Optional[Mapping[int, Basis]] = None,
) -> RunMetrics:
    """Score a run. `bases` maps basis ids from the estimates to bases; when
    an offline pass is supplied its (negative-id) refined bases are looked
    up in offline_bases first, falling back to the online registry."""
    if not estimates:
        raise Misalignment("no estimates to evaluate")
    n = truth.n
    ts = np.array([e.t for e in estimates], dtype=np.int64)
    if ts.min() < 0 or ts.max() >= truth.t_max:
        raise Misalignment(
            f"estimate frames [{ts.min()}, {ts.max()}] outside truth range"
        )
    if np.any(np.diff(ts) != 1):
        raise Misalignment("estimate frames must be consecutive")
    if estimates[0].l_hat.shape[0] != n:
        raise Misalignment(
            f"ambient dim {estimates[0].l_hat.shape[0]} != truth n = {n}"
        )

    m = len(estimates)
    se = _se_series(ts, np.array([e.basis_id for e in estimates]), bases, truth)
    l_rel = np.empty(m)
    x_abs = np.empty(m)
    prec = np.empty(m)
    rec = np.empty(m)
    for i, e in enumerate(estimates):
        t = int(e.t)
        l_true = truth.L[:, t]
        diff = e.l_hat - l_true
        denom = float(l_true @ l_true)
        num = float(diff @ diff)
        l_rel[i] = 0.0 if (num == 0.0 and denom == 0.0) else (
            num / denom if denom > 0 else float("inf")
        )
        x_abs[i] = float(np.linalg.norm(e.x_hat - truth.X[:, t]))
        prec[i], rec[i] = _precision_recall(e.support, truth.supports[t])

    frames = {
        "t": ts,
        "se": se,
        "l_rel_err": l_rel,
        "x_abs_err": x_abs,
        "supp_precision": prec,
        "supp_recall": rec,
        "phase": np.array([e.phase_tag for e in estimates]),
        "j": np.array([e.j for e in estimates], dtype=np.int64),
        "k": np.array([e.k for e in estimates], dtype=np.int64),
        "detect_flag": np.array([e.detect_flag for e in estimates], dtype=bool),
        "frame_time": np.array([e.frame_time for e in estimates]),
    }

    detections = [int(e.t) for e in estimates if e.detect_flag]
    changes, false_dets = _match_detections(detections, truth, frames)

    times = frames["frame_time"]
    mean_time = float(times[TIMING_WARMUP_FRAMES:].mean()) if m > TIMING_WARMUP_FRAMES else float(times.mean())
    metrics = RunMetrics(
        frames=frames,
        changes=changes,
        false_detections=false_dets,
        mean_se=float(se.mean()),
        mean_frame_time=mean_time,
    )

    if offline is not None:
        lookup = dict(bases)
        if offline_bases:
            lookup.update(offline_bases)
        ots = np.array([e.t for e in offline], dtype=np.int64)
        if not np.array_equal(ots, ts):
            raise Misalignment("offline estimates cover a different frame range")
        ose = _se_series(ots, np.array([e.basis_id for e in offline]), lookup, truth)
        metrics.offline_se = ose
        metrics.mean_se_offline = float(ose.mean())
    return metrics


def _match_detections(detections, truth: GroundTruth, frames):
    """Greedy match: each true change claims the first detection inside its
    segment; everything else is a false detection."""
    changes = []
    used = set()
    bounds = list(truth.change_times) + [truth.t_max]
    for j, t_j in enumerate(truth.change_times, start=1):
        t_next = bounds[j]
        t_hat = None
        for d in detections:
            if d in used or d < t_j:
                continue
            if d >= t_next:
                break
            t_hat = d
            used.add(d)
            break
        overrun = False
        if t_hat is not None and j < len(truth.change_times):
            in_pipe = (frames["t"] > t_hat) & (frames["phase"] == PHASE_UPDATE)
            pipe_ts = frames["t"][in_pipe]
            pipe_ts = pipe_ts[pipe_ts > t_hat]
            # pipeline frames belonging to this change only
            next_det = min((d for d in detections if d > t_hat), default=None)
            if next_det is not None:
                pipe_ts = pipe_ts[pipe_ts < next_det]
            if pipe_ts.size and pipe_ts.max() >= truth.change_times[j]:
                overrun = True
        changes.append(
            ChangeMetrics(
                j=j,
                t_j=t_j,
                t_hat_j=t_hat,
                delay_frames=None if t_hat is None else t_hat - t_j,
                pipeline_overrun=overrun,
            )
        )
    false_dets = [d for d in detections if d not in used]
    return changes, false_dets


def summarize(
    metrics: RunMetrics, alpha: int, t_train: int
) -> list[dict]:
    """Down-sample the per-frame series to t = t_train + k*alpha - 1 and
    append an aggregate row (k = -1)."""
    frames = metrics.frames
    ts = frames["t"]
    rows = []
    k = 1
    while True:
        t = t_train + k * alpha - 1
        if t > ts.max():
            break
        idx = np.searchsorted(ts, t)
        if idx < len(ts) and ts[idx] == t:
            rows.append(
                {
                    "k": k,
                    "t": int(t),
                    "se": float(frames["se"][idx]),
                    "l_rel_err": float(frames["l_rel_err"][idx]),
                    "se_offline": float(metrics.offline_se[idx])
                    if metrics.offline_se is not None
                    else float("nan"),
                }
            )
        k += 1
    if not rows and len(ts) == 1:
        rows.append(
            {
                "k": 0,
                "t": int(ts[0]),
                "se": float(frames["se"][0]),
                "l_rel_err": float(frames["l_rel_err"][0]),
                "se_offline": float(metrics.offline_se[0])
                if metrics.offline_se is not None
                else float("nan"),
            }
        )
    rows.append(
        {
            "k": -1,
            "t": -1,
            "se": metrics.mean_se,
            "l_rel_err": float(frames["l_rel_err"].mean()),
            "se_offline": metrics.mean_se_offline,
        }
    )
    return rows

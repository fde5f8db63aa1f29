"""Trajectory files and absolute trajectory error with similarity alignment."""

from __future__ import annotations

import math
from pathlib import Path

from meshslam.core.alignment import apply_alignment, compute_alignment
from meshslam.core.types import SlamError

TrajectoryRecord = list[tuple[float, float, float, float]]  # t, x, y, theta

ASSOCIATION_TOL_S = 0.025


class NoAssociation(SlamError):
    """Fewer than two pose pairs associate by timestamp."""


def save_trajectory(path: str | Path, record: TrajectoryRecord) -> None:
    lines = [f"{t:.9f} {x:.9f} {y:.9f} {theta:.9f}" for t, x, y, theta in record]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_trajectory(path: str | Path) -> TrajectoryRecord:
    record: TrajectoryRecord = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        t, x, y, theta = (float(tok) for tok in line.split())
        record.append((t, x, y, theta))
    for a, b in zip(record[:-1], record[1:]):
        if b[0] <= a[0]:
            raise ValueError("timestamps must be strictly increasing")
    return record


def associate(est: TrajectoryRecord, gt: TrajectoryRecord,
              tol_s: float = ASSOCIATION_TOL_S
              ) -> list[tuple[tuple[float, float], tuple[float, float]]]:
    """Pair estimate and ground-truth positions by nearest timestamp."""
    pairs = []
    j = 0
    for t, x, y, _ in est:
        while j + 1 < len(gt) and abs(gt[j + 1][0] - t) <= abs(gt[j][0] - t):
            j += 1
        if abs(gt[j][0] - t) <= tol_s:
            pairs.append(((x, y), (gt[j][1], gt[j][2])))
    return pairs


def evaluate_ate(est: TrajectoryRecord, gt: TrajectoryRecord,
                 with_scale: bool = True) -> float:
    """RMS translational error after aligning the estimate onto the truth."""
    pairs = associate(est, gt)
    if len(pairs) < 2:
        raise NoAssociation(f"only {len(pairs)} associated pose pairs")
    transform = compute_alignment(pairs, with_scale=with_scale)
    total = 0.0
    for (ex, ey), (gx, gy) in pairs:
        ax, ay = apply_alignment(transform, ex, ey)
        total += (ax - gx) ** 2 + (ay - gy) ** 2
    return math.sqrt(total / len(pairs))

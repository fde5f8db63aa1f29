"""Closed-form 2D similarity alignment between paired point sets."""

from __future__ import annotations

import math

from meshslam.core.types import DegenerateConfiguration

Point = tuple[float, float]


def compute_alignment(pairs: list[tuple[Point, Point]], with_scale: bool
                      ) -> tuple[float, float, float, float]:
    """Least-squares similarity (s, theta, tx, ty) mapping firsts onto seconds.

    Minimizes sum |s R(theta) a_i + t - b_i|^2 via centroids and the 2D
    cross-covariance. With with_scale False the scale is pinned to 1.

    Raises DegenerateConfiguration when all source points coincide.
    """
    if len(pairs) < 2:
        raise DegenerateConfiguration("need at least 2 point pairs")
    n = len(pairs)
    ax = sum(p[0][0] for p in pairs) / n
    ay = sum(p[0][1] for p in pairs) / n
    bx = sum(p[1][0] for p in pairs) / n
    by = sum(p[1][1] for p in pairs) / n

    sum_dot = 0.0
    sum_cross = 0.0
    sum_norm_a = 0.0
    for (pax, pay), (pbx, pby) in pairs:
        dax, day = pax - ax, pay - ay
        dbx, dby = pbx - bx, pby - by
        sum_dot += dax * dbx + day * dby
        sum_cross += dax * dby - day * dbx
        sum_norm_a += dax * dax + day * day
    if sum_norm_a == 0.0:
        raise DegenerateConfiguration("all source points coincide")

    theta = math.atan2(sum_cross, sum_dot)
    if with_scale:
        c, s = math.cos(theta), math.sin(theta)
        # projection of rotated centered sources onto centered targets
        scale = (c * sum_dot + s * sum_cross) / sum_norm_a
    else:
        scale = 1.0
    c, s = math.cos(theta), math.sin(theta)
    tx = bx - scale * (c * ax - s * ay)
    ty = by - scale * (s * ax + c * ay)
    return scale, theta, tx, ty


def apply_alignment(transform: tuple[float, float, float, float],
                    x: float, y: float) -> Point:
    scale, theta, tx, ty = transform
    c, s = math.cos(theta), math.sin(theta)
    return (scale * (c * x - s * y) + tx, scale * (s * x + c * y) + ty)

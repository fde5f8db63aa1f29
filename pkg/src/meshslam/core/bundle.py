"""Gauss-Newton bundle adjustment over poses and landmarks.

Local adjustment optimizes a covisibility window around a center
keyframe; global adjustment optimizes a whole map. Both minimize squared
range-bearing residuals with a step-halving line search, so accepted
iterations never increase cost. Normal equations are assembled in block
form (vectorized) and solved densely; a failed Cholesky factorization on
the first iteration reports a singular system and leaves the map intact.
"""

from __future__ import annotations

import math

import numpy as np

from meshslam.core import covis
from meshslam.core.types import Map, SingularSystem
from meshslam.geometry import Pose2, wrap_angle
from meshslam.ids import KeyFrameId

LBA_MAX_ITERS = 10
GBA_MAX_ITERS = 20
REL_TOL = 1e-6
MAX_HALVINGS = 12


class _Problem:
    """Packed variables and observation index arrays for one adjustment.

    Variables: 3 per free keyframe pose then 2 per free map point.
    Residuals: every observation of a free map point, by free or fixed
    (anchor) keyframes, in deterministic (map point, observer) order.
    """

    def __init__(self, m: Map, free_kfs: list[KeyFrameId], free_mps: list[str]):
        self.map = m
        self.free_kfs = free_kfs
        self.free_mps = free_mps
        self.kf_index = {kid: 3 * i for i, kid in enumerate(free_kfs)}
        base = 3 * len(free_kfs)
        self.mp_index = {mid: base + 2 * i for i, mid in enumerate(free_mps)}
        self.n_vars = base + 2 * len(free_mps)

        kf_col: list[int] = []
        mp_col: list[int] = []
        fixed_x: list[float] = []
        fixed_y: list[float] = []
        fixed_t: list[float] = []
        ranges: list[float] = []
        bearings: list[float] = []
        for mid in free_mps:
            mp = m.map_points[mid]
            for kid in sorted(mp.observers):
                kf = m.keyframes.get(kid)
                if kf is None or mid not in kf.observations:
                    continue
                o = kf.observations[mid]
                col = self.kf_index.get(kid, -1)
                kf_col.append(col)
                if col < 0:
                    fixed_x.append(kf.pose.x)
                    fixed_y.append(kf.pose.y)
                    fixed_t.append(kf.pose.theta)
                else:
                    fixed_x.append(0.0)
                    fixed_y.append(0.0)
                    fixed_t.append(0.0)
                mp_col.append(self.mp_index[mid])
                ranges.append(o.range)
                bearings.append(o.bearing)

        self.n_obs = len(kf_col)
        self.kf_col = np.array(kf_col, dtype=int)
        self.mp_col = np.array(mp_col, dtype=int)
        self.free_mask = self.kf_col >= 0
        self.fixed_x = np.array(fixed_x)
        self.fixed_y = np.array(fixed_y)
        self.fixed_t = np.array(fixed_t)
        self.obs_range = np.array(ranges)
        self.obs_bearing = np.array(bearings)

    def pack(self) -> np.ndarray:
        x = np.empty(self.n_vars)
        for kid, c in self.kf_index.items():
            p = self.map.keyframes[kid].pose
            x[c:c + 3] = (p.x, p.y, p.theta)
        for mid, c in self.mp_index.items():
            mp = self.map.map_points[mid]
            x[c:c + 2] = (mp.x, mp.y)
        return x

    def unpack(self, x: np.ndarray) -> None:
        for kid, c in self.kf_index.items():
            kf = self.map.keyframes[kid]
            kf.pose = Pose2(float(x[c]), float(x[c + 1]), wrap_angle(float(x[c + 2])))
        for mid, c in self.mp_index.items():
            mp = self.map.map_points[mid]
            mp.x, mp.y = float(x[c]), float(x[c + 1])

    def _geometry(self, x: np.ndarray):
        if self.free_mask.any():
            safe = np.where(self.free_mask, self.kf_col, 0)
            kx = np.where(self.free_mask, x[safe], self.fixed_x)
            ky = np.where(self.free_mask, x[safe + 1], self.fixed_y)
            kt = np.where(self.free_mask, x[safe + 2], self.fixed_t)
        else:
            kx, ky, kt = self.fixed_x, self.fixed_y, self.fixed_t
        px = x[self.mp_col]
        py = x[self.mp_col + 1]
        dx = px - kx
        dy = py - ky
        q = dx * dx + dy * dy
        return dx, dy, q, np.sqrt(q), kt

    def residuals(self, x: np.ndarray) -> np.ndarray:
        dx, dy, q, r, kt = self._geometry(x)
        res = np.empty(2 * self.n_obs)
        res[0::2] = r - self.obs_range
        bearing = np.arctan2(dy, dx) - kt - self.obs_bearing
        res[1::2] = np.mod(bearing + np.pi, 2.0 * np.pi) - np.pi
        return res

    def cost(self, x: np.ndarray) -> float:
        res = self.residuals(x)
        return float(res @ res)

    def normal_equations(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Assemble J^T J and J^T r from per-observation 2x5 blocks."""
        dx, dy, q, r, kt = self._geometry(x)
        res_r = r - self.obs_range
        bearing = np.arctan2(dy, dx) - kt - self.obs_bearing
        res_b = np.mod(bearing + np.pi, 2.0 * np.pi) - np.pi

        n = self.n_obs
        inv_r = 1.0 / r
        inv_q = 1.0 / q

        # Block columns: [kf.x, kf.y, kf.theta, mp.x, mp.y]
        blocks = np.zeros((n, 2, 5))
        blocks[:, 0, 0] = -dx * inv_r
        blocks[:, 0, 1] = -dy * inv_r
        blocks[:, 0, 3] = dx * inv_r
        blocks[:, 0, 4] = dy * inv_r
        blocks[:, 1, 0] = dy * inv_q
        blocks[:, 1, 1] = -dx * inv_q
        blocks[:, 1, 2] = -1.0
        blocks[:, 1, 3] = -dy * inv_q
        blocks[:, 1, 4] = dx * inv_q

        cols = np.empty((n, 5), dtype=int)
        cols[:, 0] = self.kf_col
        cols[:, 1] = self.kf_col + 1
        cols[:, 2] = self.kf_col + 2
        cols[:, 3] = self.mp_col
        cols[:, 4] = self.mp_col + 1
        fixed = ~self.free_mask
        if fixed.any():
            blocks[fixed, :, 0:3] = 0.0
            cols[fixed, 0:3] = 0  # zeroed contributions accumulate harmlessly

        jtj_blocks = np.einsum("nij,nik->njk", blocks, blocks)
        r2 = np.stack([res_r, res_b], axis=1)
        jtr_blocks = np.einsum("nij,ni->nj", blocks, r2)

        jtj = np.zeros((self.n_vars, self.n_vars))
        jtr = np.zeros(self.n_vars)
        ci = np.broadcast_to(cols[:, :, None], (n, 5, 5))
        cj = np.broadcast_to(cols[:, None, :], (n, 5, 5))
        np.add.at(jtj, (ci, cj), jtj_blocks)
        np.add.at(jtr, cols, jtr_blocks)
        return jtj, jtr


def _solve(problem: _Problem, max_iters: int) -> None:
    """Run Gauss-Newton to convergence or the iteration cap.

    Raises SingularSystem (state untouched) when the first normal system
    cannot be factorized.
    """
    if problem.n_vars == 0:
        return
    if problem.n_obs == 0:
        raise SingularSystem("no observations constrain the free variables")
    x = problem.pack()
    cost = problem.cost(x)
    if cost == 0.0:
        return
    for it in range(max_iters):
        jtj, jtr = problem.normal_equations(x)
        try:
            ell = np.linalg.cholesky(jtj)
        except np.linalg.LinAlgError:
            if it == 0:
                raise SingularSystem("rank-deficient normal equations") from None
            break
        z = np.linalg.solve(ell, -jtr)
        delta = np.linalg.solve(ell.T, z)
        step = 1.0
        new_cost = problem.cost(x + delta)
        halvings = 0
        while new_cost >= cost and halvings < MAX_HALVINGS:
            step *= 0.5
            halvings += 1
            new_cost = problem.cost(x + step * delta)
        if new_cost >= cost:
            break  # line search exhausted; stay at current optimum
        x = x + step * delta
        decreased = cost - new_cost
        cost = new_cost
        if decreased < REL_TOL * max(cost, 1e-300):
            break
    problem.unpack(x)


def _mark_dirty(m: Map, kf_ids: list[KeyFrameId], mp_ids: list[str]
                ) -> tuple[set[KeyFrameId], set[str]]:
    for kid in kf_ids:
        m.keyframes[kid].dirty = True
    for mid in mp_ids:
        m.map_points[mid].dirty = True
    return set(kf_ids), set(mp_ids)


def local_bundle_adjust(m: Map, center: KeyFrameId, n_covisible: int
                        ) -> tuple[set[KeyFrameId], set[str]]:
    """Optimize the window around center; returns the dirtied entity ids.

    The window is center plus its strongest covisible keyframes; every
    map point they observe is free. Keyframes outside the window that
    observe those points act as fixed anchors, and the oldest keyframe
    inside the window is held fixed to pin the gauge.
    """
    if center not in m.keyframes:
        raise KeyError(f"center {center} not in map")
    window = sorted({center, *covis.strongest_covisible(m, center, n_covisible)})
    oldest = window[0]
    free_kfs = [k for k in window if k != oldest]

    mp_ids: set[str] = set()
    for kid in window:
        mp_ids |= set(m.keyframes[kid].observations)
    free_mps = sorted(mid for mid in mp_ids if mid in m.map_points)

    problem = _Problem(m, free_kfs, free_mps)
    _solve(problem, LBA_MAX_ITERS)
    return _mark_dirty(m, window, free_mps)


def global_bundle_adjust(m: Map) -> tuple[set[KeyFrameId], set[str]]:
    """Optimize all poses and points of a map with its origin fixed.

    Marks the map as having had its initial keyframes optimized; the
    touched entities are flagged dirty even when already at the optimum
    so that the flag flip still replicates.
    """
    all_kfs = sorted(m.keyframes)
    free_kfs = [k for k in all_kfs if k != m.origin_kf]
    free_mps = sorted(m.map_points)
    problem = _Problem(m, free_kfs, free_mps)
    _solve(problem, GBA_MAX_ITERS)
    m.initialized_optimized = True
    return _mark_dirty(m, all_kfs, free_mps)


def track_pose(kf_obs: list[tuple[float, float, float, float]], init: Pose2,
               max_iters: int = 20) -> tuple[Pose2, bool]:
    """Pose-only Gauss-Newton over fixed landmark positions.

    kf_obs rows are (landmark_x, landmark_y, range, bearing). Returns
    (pose, diverged); diverged is set after three consecutive cost
    increases, with the best-cost iterate kept.
    """
    lx = np.array([o[0] for o in kf_obs])
    ly = np.array([o[1] for o in kf_obs])
    obs_r = np.array([o[2] for o in kf_obs])
    obs_b = np.array([o[3] for o in kf_obs])

    def residuals(px: float, py: float, pt: float) -> np.ndarray:
        ddx, ddy = lx - px, ly - py
        r = np.hypot(ddx, ddy)
        res = np.empty(2 * len(lx))
        res[0::2] = r - obs_r
        bearing = np.arctan2(ddy, ddx) - pt - obs_b
        res[1::2] = np.mod(bearing + np.pi, 2.0 * np.pi) - np.pi
        return res

    x, y, t = init.x, init.y, init.theta
    best = (x, y, t)
    res = residuals(x, y, t)
    cost = float(res @ res)
    best_cost = cost
    increases = 0
    for _ in range(max_iters):
        ddx, ddy = lx - x, ly - y
        q = ddx * ddx + ddy * ddy
        r = np.sqrt(q)
        jac = np.empty((2 * len(lx), 3))
        jac[0::2, 0] = -ddx / r
        jac[0::2, 1] = -ddy / r
        jac[0::2, 2] = 0.0
        jac[1::2, 0] = ddy / q
        jac[1::2, 1] = -ddx / q
        jac[1::2, 2] = -1.0
        jtj = jac.T @ jac
        try:
            delta = np.linalg.solve(jtj, -(jac.T @ res))
        except np.linalg.LinAlgError:
            return Pose2(*best).normalized(), True
        x, y, t = x + delta[0], y + delta[1], t + delta[2]
        res = residuals(x, y, t)
        new_cost = float(res @ res)
        if new_cost > cost:
            increases += 1
            if increases >= 3:
                return Pose2(*best).normalized(), True
        else:
            increases = 0
            if new_cost < best_cost:
                best_cost = new_cost
                best = (x, y, t)
            if cost - new_cost < REL_TOL * max(new_cost, 1e-300):
                cost = new_cost
                break
        cost = new_cost
    return Pose2(*best).normalized(), False


def map_cost(m: Map) -> float:
    """Total squared residual of a map (diagnostic, used by invariants)."""
    total = 0.0
    for kf in m.keyframes.values():
        for mid, o in kf.observations.items():
            mp = m.map_points.get(mid)
            if mp is None:
                continue
            ddx, ddy = mp.x - kf.pose.x, mp.y - kf.pose.y
            rng = math.hypot(ddx, ddy)
            brg = wrap_angle(math.atan2(ddy, ddx) - kf.pose.theta - o.bearing)
            total += (rng - o.range) ** 2 + brg ** 2
    return total

"""Grid rasters over a compact box: invariant sets, tube volumes, chains.

A GridSet is a uniform box grid (cells per axis a power of two) with a
boolean occupancy mask.  Invariant-set computations are set-oriented outer
approximations: a cell survives one step if its sampled forward image hits
the one-cell dilation of the current cell set, and if it is itself hit by
the dilated forward image of the set (the backward condition is checked
through forward images; sampling the inverse map directly would need a
sample density driven by its much larger stretching).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_dilation
from scipy.spatial import cKDTree

from .errors import DomainError, GridEmptyError
from .systems import Box, ControlSequence, ControlSystem
from .util import substream


def _require_power_of_two(resolution: int) -> int:
    r = int(resolution)
    if r < 1 or (r & (r - 1)) != 0:
        raise DomainError(f"resolution must be a power of two, got {resolution}")
    return r


@dataclass
class GridSet:
    """Occupied cells of a uniform grid over an axis-aligned region."""

    region: Box
    resolution: int
    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.resolution = _require_power_of_two(self.resolution)
        expected = (self.resolution,) * self.region.dim
        if self.mask.shape != expected:
            raise ValueError(f"mask shape {self.mask.shape} does not match {expected}")
        self._tree = None

    # -- geometry ----------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.region.dim

    @property
    def cell_widths(self) -> np.ndarray:
        return self.region.widths / self.resolution

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_widths))

    @property
    def half_diagonal(self) -> float:
        return 0.5 * float(np.linalg.norm(self.cell_widths))

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def is_empty(self) -> bool:
        return not self.mask.any()

    @property
    def volume(self) -> float:
        return self.count * self.cell_volume

    def centers(self) -> np.ndarray:
        """Occupied cell centers in lexicographic cell-index order, (N, d)."""
        idx = np.argwhere(self.mask)
        return self.region.lo + (idx + 0.5) * self.cell_widths

    def cell_of(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis cell indices and an in-region flag for a batch of points."""
        points = np.atleast_2d(np.asarray(points, float))
        ij = np.floor((points - self.region.lo) / self.cell_widths).astype(np.int64)
        inside = np.all((ij >= 0) & (ij < self.resolution), axis=-1)
        return ij, inside

    def contains(self, points: np.ndarray) -> np.ndarray:
        ij, inside = self.cell_of(points)
        out = np.zeros(ij.shape[0], bool)
        if inside.any():
            sel = ij[inside]
            out[inside] = self.mask[tuple(sel.T)]
        return out

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Distance to the set: nearest occupied center minus half diagonal, clamped at 0."""
        if self.is_empty:
            raise GridEmptyError("distance to an empty grid set is undefined")
        if self._tree is None:
            self._tree = cKDTree(self.centers())
        d, _ = self._tree.query(np.atleast_2d(np.asarray(points, float)))
        return np.maximum(d - self.half_diagonal, 0.0)

    # -- set algebra on a common grid ---------------------------------------
    def _check_same_grid(self, other: "GridSet") -> None:
        if self.resolution != other.resolution or not np.allclose(
            np.r_[self.region.lo, self.region.hi], np.r_[other.region.lo, other.region.hi]
        ):
            raise ValueError("grid sets live on different grids")

    def issubset(self, other: "GridSet") -> bool:
        self._check_same_grid(other)
        return bool(np.all(~self.mask | other.mask))

    def dilated(self, cells: int = 1) -> "GridSet":
        struct = np.ones((3,) * self.dim, bool)
        m = self.mask
        for _ in range(cells):
            m = binary_dilation(m, struct)
        return GridSet(self.region, self.resolution, m)

    @classmethod
    def from_points(cls, region: Box, resolution: int, points: np.ndarray) -> "GridSet":
        g = cls(region, resolution, np.zeros((int(resolution),) * region.dim, bool))
        ij, inside = g.cell_of(points)
        sel = ij[inside]
        if sel.size:
            g.mask[tuple(sel.T)] = True
        return g

    @classmethod
    def full(cls, region: Box, resolution: int) -> "GridSet":
        return cls(region, resolution, np.ones((int(resolution),) * region.dim, bool))

    # -- export --------------------------------------------------------------
    def to_pgm(self, path) -> None:
        """Binary P5 raster, occupied cells black on white (2-D grids only)."""
        if self.dim != 2:
            raise DomainError("PGM export requires a 2-D grid")
        # row-major image: row 0 is the top of the region (max second coordinate)
        img = np.where(self.mask.T[::-1], 0, 255).astype(np.uint8)
        with open(path, "wb") as fh:
            fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
            fh.write(img.tobytes())

    def to_svg(self, path, viewport: int = 640) -> None:
        """One rectangle per occupied cell, region mapped affinely to the viewport."""
        if self.dim != 2:
            raise DomainError("SVG export requires a 2-D grid")
        w = self.region.widths
        sx = viewport / w[0]
        sy = viewport / w[1]
        cw = self.cell_widths
        rows = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{viewport}" height="{viewport}" '
            f'viewBox="0 0 {viewport} {viewport}">',
            f'<rect width="{viewport}" height="{viewport}" fill="white"/>',
        ]
        for i, j in np.argwhere(self.mask):
            x = (i * cw[0]) * sx
            y = viewport - ((j + 1) * cw[1]) * sy
            rows.append(
                f'<rect x="{x:.3f}" y="{y:.3f}" width="{cw[0] * sx:.3f}" '
                f'height="{cw[1] * sy:.3f}" fill="black"/>'
            )
        rows.append("</svg>")
        with open(path, "w") as fh:
            fh.write("\n".join(rows))

    def metadata(self) -> dict:
        return {
            "region": {"lo": self.region.lo.tolist(), "hi": self.region.hi.tolist()},
            "resolution": self.resolution,
            "cells": self.count,
            "cell_volume": self.cell_volume,
        }

    def metadata_json(self) -> str:
        return json.dumps(self.metadata(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# invariant-set computations
# ---------------------------------------------------------------------------

def _cell_samples(grid: GridSet, idx: np.ndarray, sub: int) -> np.ndarray:
    """sub^d sample points per cell for the given cell indices, (n, sub^d, d)."""
    w = grid.cell_widths
    axes = [(np.arange(sub) + 0.5) / sub * w[k] for k in range(grid.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    offs = np.stack([m.ravel() for m in mesh], axis=-1)
    base = grid.region.lo + idx * w
    return base[:, None, :] + offs[None, :, :]


def _survivor_step(
    sys: ControlSystem, grid: GridSet, controls: np.ndarray, sub: int, chunk: int = 65536
) -> np.ndarray:
    """One application of the stay operator; returns the new mask."""
    res = grid.resolution
    struct = np.ones((3,) * grid.dim, bool)
    dil = binary_dilation(grid.mask, struct)
    idx = np.argwhere(grid.mask)
    if idx.size == 0:
        return grid.mask
    ok_fwd = np.zeros(idx.shape[0], bool)
    hit_img = np.zeros_like(grid.mask)
    for lo_i in range(0, idx.shape[0], chunk):
        block = idx[lo_i : lo_i + chunk]
        pts = _cell_samples(grid, block, sub)
        for u in controls:
            img = sys.forward(pts, u)
            ij = np.floor((img - grid.region.lo) / grid.cell_widths).astype(np.int64)
            inside = np.all((ij >= 0) & (ij < res), axis=-1)
            hits = np.zeros(inside.shape, bool)
            sel = ij[inside]
            if sel.size:
                hits[inside] = dil[tuple(sel.T)]
                hit_img[tuple(sel.T)] = True
            ok_fwd[lo_i : lo_i + block.shape[0]] |= hits.any(axis=1)
    # backward condition: the cell is reached from the current set under some control
    hit_img = binary_dilation(hit_img, struct)
    ok_bwd = hit_img[tuple(idx.T)]
    new = np.zeros_like(grid.mask)
    keep = ok_fwd & ok_bwd
    new[tuple(idx[keep].T)] = True
    return new


def maximal_invariant(
    sys: ControlSystem,
    u_fixed,
    region: Box,
    resolution: int,
    horizon: int,
    subsamples: int = 6,
) -> GridSet:
    """Outer cover of the maximal invariant set of f_{u_fixed} in the region."""
    u = np.asarray(u_fixed, float)
    grid = GridSet.full(region, resolution)
    for _ in range(horizon):
        new = _survivor_step(sys, grid, u[None, :], subsamples)
        if np.array_equal(new, grid.mask):
            break
        grid = GridSet(region, resolution, new)
    if grid.is_empty:
        raise GridEmptyError("no invariant set at this resolution")
    return grid


def controlled_invariant(
    sys: ControlSystem,
    region: Box,
    resolution: int,
    horizon: int,
    subsamples: int = 6,
) -> GridSet:
    """Outer cover of the controlled invariant set with quantized controls.

    Uses the 9-point control stencil; with a degenerate control range this
    is the maximal invariant set of the center control.
    """
    stencil = sys.control_range.stencil()
    if stencil.shape[0] == 1:
        return maximal_invariant(sys, stencil[0], region, resolution, horizon, subsamples)
    grid = GridSet.full(region, resolution)
    for _ in range(horizon):
        new = _survivor_step(sys, grid, stencil, subsamples)
        if np.array_equal(new, grid.mask):
            break
        grid = GridSet(region, resolution, new)
    if grid.is_empty:
        raise GridEmptyError("no controlled invariant set at this resolution")
    return grid


# ---------------------------------------------------------------------------
# Monte-Carlo volumes
# ---------------------------------------------------------------------------

@dataclass
class VolumeEstimate:
    """Monte-Carlo volume with its standard error and hit diagnostics."""

    value: float
    stderr: float
    hits: int
    samples: int
    zero_hits: bool = False

    def __float__(self) -> float:
        return self.value


def _fiber_targets(sys: ControlSystem, u: ControlSequence, fiber: GridSet, tau: int):
    """KD-trees of the fiber's occupied centers at times 0..tau-1.

    For a constant control the fiber is carried onto itself by the dynamics
    (the fiber of the shifted control equals the image of the fiber), so a
    single tree serves every time.  Otherwise the cover is pushed forward
    one step at a time and re-rasterized.
    """
    if u.is_constant:
        tree = cKDTree(fiber.centers())
        return [tree] * tau
    trees = []
    cover = fiber
    for t in range(tau):
        trees.append(cKDTree(cover.centers()))
        if t == tau - 1:
            break
        idx = np.argwhere(cover.mask)
        pts = _cell_samples(cover, idx, 3).reshape(-1, cover.dim)
        img = sys.forward(pts, u.at(t))
        cover = GridSet.from_points(cover.region, cover.resolution, img)
        if cover.is_empty:
            raise GridEmptyError("fiber image left the region; cannot build targets")
    return trees


def fiber_tube_volume(
    sys: ControlSystem,
    u: ControlSequence,
    tau: int,
    eps: float,
    fiber: GridSet,
    samples: int = 10**6,
    seed: int = 0,
) -> VolumeEstimate:
    """vol{ x : dist(phi(t, x, u), fiber_t) <= eps for 0 <= t < tau }, by Monte Carlo.

    dist is the grid-set distance (to the nearest occupied center, minus the
    half cell diagonal, clamped at zero).
    """
    if fiber.is_empty:
        raise GridEmptyError("fiber is empty")
    if tau < 1:
        raise DomainError("tau must be >= 1")
    trees = _fiber_targets(sys, u, fiber, tau)
    occ = fiber.centers()
    pad = eps + fiber.half_diagonal
    lo = occ.min(axis=0) - fiber.cell_widths / 2 - pad
    hi = occ.max(axis=0) + fiber.cell_widths / 2 + pad
    box_vol = float(np.prod(hi - lo))
    rng = substream(seed, "gridsets.fiber_tube_volume")
    x = rng.uniform(lo, hi, size=(samples, fiber.dim))
    alive = np.ones(samples, bool)
    half = fiber.half_diagonal
    for t in range(tau):
        pts = x[alive]
        if pts.size == 0:
            break
        d, _ = trees[t].query(pts)
        ok = np.maximum(d - half, 0.0) <= eps
        idx = np.flatnonzero(alive)
        alive[idx[~ok]] = False
        if t < tau - 1:
            x[alive] = sys.forward(x[alive], u.at(t))
    hits = int(alive.sum())
    p = hits / samples
    value = box_vol * p
    stderr = box_vol * float(np.sqrt(max(p * (1.0 - p), 0.0) / samples))
    return VolumeEstimate(value, stderr, hits, samples, zero_hits=(hits == 0))


def bowen_ball_volume(
    sys: ControlSystem,
    u: ControlSequence,
    tau: int,
    eps: float,
    x,
    samples: int = 10**5,
    seed: int = 0,
) -> VolumeEstimate:
    """Monte-Carlo volume of the Bowen ball B^{u,tau}_eps(x)."""
    x = np.asarray(x, float)
    d = x.size
    rng = substream(seed, "gridsets.bowen_ball_volume")
    pts = rng.uniform(x - eps, x + eps, size=(samples, d))
    ref = x.copy()
    alive = np.ones(samples, bool)
    cur = pts
    for t in range(tau):
        dist = np.linalg.norm(cur - ref, axis=-1)
        idx = np.flatnonzero(alive)
        bad = dist > eps
        alive[idx[bad]] = False
        cur = cur[~bad]
        if t < tau - 1:
            ut = u.at(t)
            cur = sys.forward(cur, ut)
            ref = sys.forward(ref, ut)
    hits = int(alive.sum())
    p = hits / samples
    vol_box = (2.0 * eps) ** d
    return VolumeEstimate(
        vol_box * p,
        vol_box * float(np.sqrt(max(p * (1 - p), 0.0) / samples)),
        hits,
        samples,
        zero_hits=(hits == 0),
    )


# ---------------------------------------------------------------------------
# accessibility rank and controlled chains
# ---------------------------------------------------------------------------

def regularity_rank(sys: ControlSystem, x, u_window, rank_tol: float = 1e-8) -> int:
    """Numerical rank of d phi(t, x, .) / d(u_0..u_{t-1}), assembled by the chain rule."""
    u_window = np.atleast_2d(np.asarray(u_window, float))
    t = u_window.shape[0]
    if t < 1:
        raise DomainError("control window must have length >= 1")
    states = [np.asarray(x, float)]
    for s in range(t):
        states.append(sys.forward(states[-1], u_window[s]))
    blocks = []
    for s in range(t):
        M = sys.jac_control(states[s], u_window[s])
        for r in range(s + 1, t):
            M = sys.jac_state(states[r], u_window[r]) @ M
        blocks.append(M)
    full = np.hstack(blocks)
    sv = np.linalg.svd(full, compute_uv=False)
    return int(np.sum(sv > rank_tol * sv[0]))


@dataclass
class ChainStep:
    """One link of a controlled chain; `jump` is the defect to the next point."""

    point: np.ndarray
    control: np.ndarray | None
    jump: float


def _steer_control(sys: ControlSystem, x, u0, target) -> np.ndarray:
    """One Gauss-Newton correction of the control toward f_u(x) = target, clamped."""
    u = np.asarray(u0, float)
    for _ in range(3):
        err = target - sys.forward(x, u)
        B = sys.jac_control(x, u)
        du, *_ = np.linalg.lstsq(B, err, rcond=None)
        u = sys.control_range.clamp(u + du)
    return u


def controlled_chain(
    sys: ControlSystem,
    grid: GridSet,
    x,
    y,
    eps: float,
    max_nodes: int = 200000,
) -> list[ChainStep]:
    """Controlled eps-chain from x to y through the occupied cells, by BFS.

    Candidate moves come from the quantized control stencil; each candidate
    target gets a steering correction of the control (clamped to the range)
    before the jump is measured.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if not (grid.contains(x)[0] and grid.contains(y)[0]):
        raise DomainError("both endpoints must lie in occupied cells")
    centers = grid.centers()
    tree = cKDTree(centers)
    ij_all = np.argwhere(grid.mask)
    key_of = {tuple(ij): k for k, ij in enumerate(ij_all)}

    def cell_key(p):
        ij, inside = grid.cell_of(p)
        return key_of.get(tuple(ij[0])) if inside[0] else None

    stencil = sys.control_range.stencil()
    reach = max(float(np.linalg.norm(u - stencil[0])) for u in stencil) + grid.half_diagonal

    def neighbors(p):
        """(control, jump, point, cell key) for reachable occupied centers."""
        out = []
        seen = set()
        for u in stencil:
            img = sys.forward(p, u)
            for k in tree.query_ball_point(img, eps + reach + 1e-12):
                if k in seen:
                    continue
                seen.add(k)
                target = centers[k]
                uu = _steer_control(sys, p, u, target)
                jump = float(np.linalg.norm(sys.forward(p, uu) - target))
                if jump <= eps + 1e-12:
                    out.append((uu, jump, target, k))
        return out

    # direct hit first (also covers x == y)
    if np.linalg.norm(x - y) == 0.0:
        return [ChainStep(x, None, 0.0)]
    u_direct = _steer_control(sys, x, stencil[0], y)
    jump_direct = float(np.linalg.norm(sys.forward(x, u_direct) - y))
    if jump_direct <= eps + 1e-12:
        return [ChainStep(x, u_direct, jump_direct), ChainStep(y, None, 0.0)]

    goal = cell_key(y)
    start_links = neighbors(x)
    from collections import deque

    prev: dict[int, tuple[int | None, np.ndarray, float]] = {}
    q = deque()
    for uu, jump, target, k in start_links:
        if k not in prev:
            prev[k] = (None, uu, jump)
            q.append(k)
    visited = 0
    while q:
        k = q.popleft()
        visited += 1
        if visited > max_nodes:
            break
        p = centers[k]
        # try to finish: steer to y itself
        uu = _steer_control(sys, p, stencil[0], y)
        jump = float(np.linalg.norm(sys.forward(p, uu) - y))
        if jump <= eps + 1e-12 or k == goal:
            # reconstruct
            path = []
            kk = k
            while kk is not None:
                parent = prev[kk]
                path.append((kk, parent[1], parent[2]))
                kk = parent[0]
            path.reverse()
            steps = [ChainStep(x, path[0][1], path[0][2])]
            for (kk, _, _), (nk, u_next, j_next) in zip(path[:-1], path[1:]):
                steps.append(ChainStep(centers[kk], u_next, j_next))
            last_key = path[-1][0]
            if jump <= eps + 1e-12:
                steps.append(ChainStep(centers[last_key], uu, jump))
                steps.append(ChainStep(y, None, 0.0))
            else:
                steps.append(ChainStep(centers[last_key], None, 0.0))
            return steps
        for uu, jump, target, nk in neighbors(p):
            if nk not in prev:
                prev[nk] = (k, uu, jump)
                q.append(nk)
    raise DomainError(f"not chain-connected at eps={eps} and this resolution")

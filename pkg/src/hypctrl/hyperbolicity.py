"""Stable/unstable splittings along orbits and hyperbolicity diagnostics.

The splitting is estimated by QR power iteration: a frame pushed forward
settles onto the unstable subbundle, a frame pulled backward settles onto
the stable one.  All logarithms are base 2.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NoSplittingError, NotHyperbolicError
from .systems import ControlSystem, OrbitSegment
from .util import substream


@dataclass
class Splitting:
    """Orthonormal unstable/stable frames at each orbit index of a window.

    unstable[i] is d x d_plus at time t0 + i, and likewise for stable.
    """

    t0: int
    unstable: np.ndarray
    stable: np.ndarray
    growth_rates: np.ndarray = field(default=None, repr=False)

    @property
    def d_plus(self) -> int:
        return self.unstable.shape[2]

    @property
    def d_minus(self) -> int:
        return self.stable.shape[2]

    @property
    def t1(self) -> int:
        return self.t0 + self.unstable.shape[0] - 1

    def unstable_at(self, t: int) -> np.ndarray:
        return self.unstable[self._idx(t)]

    def stable_at(self, t: int) -> np.ndarray:
        return self.stable[self._idx(t)]

    def _idx(self, t: int) -> int:
        i = t - self.t0
        if not 0 <= i < self.unstable.shape[0]:
            raise IndexError(f"time {t} outside splitting window [{self.t0}; {self.t1}]")
        return i

    def invariance_residuals(self, sys: ControlSystem, orbit: OrbitSegment) -> np.ndarray:
        """|| (I - P+_{t+1}) Dphi_1 E+_t || per step, the discrete invariance defect."""
        out = []
        for t in range(self.t0, self.t1):
            J = sys.jac_state(orbit.state_at(t), orbit.controls.at(t))
            img = J @ self.unstable_at(t)
            nxt = self.unstable_at(t + 1)
            resid = img - nxt @ (nxt.T @ img)
            out.append(np.linalg.norm(resid) / max(np.linalg.norm(img), 1e-300))
        return np.array(out)


def _qr_pass(jacs: list[np.ndarray], frame0: np.ndarray):
    """Push an orthonormal frame through a list of matrices, re-orthonormalizing.

    Returns the frames after each step and the per-step log2 of the R diagonal.
    """
    q = frame0
    frames = [q]
    logs = []
    for J in jacs:
        q, r = np.linalg.qr(J @ q)
        d = np.abs(np.diag(r))
        sign = np.sign(np.diag(r))
        q = q * sign  # fix sign so frames vary continuously
        logs.append(np.log2(np.maximum(d, 1e-300)))
        frames.append(q)
    return frames, np.array(logs)


def estimate_splitting(
    sys: ControlSystem,
    orbit: OrbitSegment,
    settle: int = 30,
    init_frame: np.ndarray | None = None,
    seed: int = 0,
    min_ratio: float = 1.01,
) -> Splitting:
    """Estimate stable/unstable frames on the interior window of an orbit.

    The orbit must extend `settle` steps beyond both ends of the reporting
    window.  The unstable dimension is the number of directions with average
    one-step growth above 1; a growth-rate gap below `min_ratio` raises.
    """
    d = sys.state_dim
    n = orbit.states.shape[0] - 1  # number of steps
    if n < 2 * settle + 1:
        raise ValueError(f"orbit with {n} steps cannot settle {settle} steps on both ends")
    jacs = [sys.jac_state(orbit.state_at(orbit.start_time + i), orbit.controls.at(orbit.start_time + i)) for i in range(n)]

    if init_frame is None:
        rng = substream(seed, "hyperbolicity.splitting")
        init_frame = np.linalg.qr(rng.normal(size=(d, d)))[0]
    fwd_frames, fwd_logs = _qr_pass(jacs, init_frame)
    inv_jacs = [np.linalg.inv(J) for J in reversed(jacs)]
    bwd_frames, bwd_logs = _qr_pass(inv_jacs, init_frame)
    bwd_frames = bwd_frames[::-1]

    # QR column order is only sorted for generic frames; classify columns by
    # their measured average one-step growth on the settled stretch instead.
    rates = fwd_logs[settle:].mean(axis=0)
    growth = np.exp2(rates)
    unstable_cols = np.where(growth > 1.0)[0]
    d_plus = unstable_cols.size
    ordered = np.sort(growth)[::-1]
    if d_plus == 0 or d_plus == d:
        raise NoSplittingError(
            f"no hyperbolic splitting detected (per-step growth factors {np.round(ordered, 4).tolist()})"
        )
    if ordered[d_plus - 1] / ordered[d_plus] < min_ratio:
        raise NoSplittingError(
            f"no hyperbolic splitting detected (growth separation "
            f"{ordered[d_plus - 1] / ordered[d_plus]:.4f} below {min_ratio})"
        )
    bwd_rates = bwd_logs[settle:].mean(axis=0)
    stable_cols = np.argsort(bwd_rates)[::-1][: d - d_plus]  # fastest backward growth

    lo = settle
    hi = n - settle
    unstable = np.array([fwd_frames[i][:, unstable_cols] for i in range(lo, hi + 1)])
    stable = np.array([bwd_frames[i][:, np.sort(stable_cols)] for i in range(lo, hi + 1)])
    return Splitting(orbit.start_time + lo, unstable, stable, growth_rates=rates)


def unstable_log_det(
    sys: ControlSystem, orbit: OrbitSegment, splitting: Splitting, t0: int, t: int
) -> float:
    """log2 of the unstable determinant of D phi_t at orbit time t0, stepwise.

    Additive over concatenation of time windows.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    if t0 < splitting.t0 or t0 + t > splitting.t1:
        raise IndexError(
            f"window [{t0}; {t0 + t}] outside splitting window [{splitting.t0}; {splitting.t1}]"
        )
    total = 0.0
    for s in range(t0, t0 + t):
        J = sys.jac_state(orbit.state_at(s), orbit.controls.at(s))
        m = splitting.unstable_at(s + 1).T @ (J @ splitting.unstable_at(s))
        total += float(np.log2(np.abs(np.linalg.det(m))))
    return total


@dataclass
class HyperbolicityReport:
    c_est: float
    lambda_est: float
    worst_t: int
    horizon: int

    def to_json(self, splitting: Splitting | None = None, residuals=None) -> str:
        payload = {
            "c": self.c_est,
            "lambda": self.lambda_est,
            "worst_t": self.worst_t,
            "horizon": self.horizon,
        }
        if splitting is not None:
            payload["dims"] = {"unstable": splitting.d_plus, "stable": splitting.d_minus}
        if residuals is not None:
            payload["residuals"] = {
                "max": float(np.max(residuals)),
                "mean": float(np.mean(residuals)),
            }
        return json.dumps(payload, indent=2, sort_keys=True)


def _restricted_block(sys, orbit, frames_at, t):
    """One-step cocycle restricted to an invariant subbundle, coords at t -> t+1."""
    J = sys.jac_state(orbit.state_at(t), orbit.controls.at(t))
    return frames_at(t + 1).T @ (J @ frames_at(t))


def _contraction_ratios(sys, orbit, splitting, horizon, weights=None):
    """Sampled ratios |Dphi v| / |v| demanded to contract under (H2).

    Yields (t, s, ratio) for stable vectors pushed forward and unstable
    vectors pulled backward, s = 1..horizon.  The derivative is restricted
    to the estimated subbundles via the splitting frames; pushing raw
    vectors would let roundoff components of the complementary bundle
    dominate after a few steps.  `weights` rescales the norm per coordinate
    (a metric change); it may move c but not the rates.
    """
    w_of = (lambda M: M) if weights is None else (lambda M: weights[:, None] * M)
    for t in range(splitting.t0, splitting.t1 + 1):
        for bundle, direction in (("stable", +1), ("unstable", -1)):
            frames_at = splitting.stable_at if bundle == "stable" else splitting.unstable_at
            dim = splitting.d_minus if bundle == "stable" else splitting.d_plus
            coords = np.eye(dim)
            s_t = t
            for s in range(1, horizon + 1):
                if direction > 0:
                    if s_t + 1 > splitting.t1:
                        break
                    coords = _restricted_block(sys, orbit, frames_at, s_t) @ coords
                    s_t += 1
                else:
                    if s_t - 1 < splitting.t0:
                        break
                    coords = np.linalg.solve(_restricted_block(sys, orbit, frames_at, s_t - 1), coords)
                    s_t -= 1
                full = w_of(frames_at(s_t) @ coords)
                base = w_of(frames_at(t))
                for k in range(dim):
                    yield t, s, np.linalg.norm(full[:, k]) / np.linalg.norm(base[:, k])


def verify_hyperbolicity(
    sys: ControlSystem,
    orbit: OrbitSegment,
    splitting: Splitting,
    horizon: int,
    lambda_grid: float = 1e-3,
    metric_weights=None,
) -> HyperbolicityReport:
    """Smallest (c, lambda) satisfying both (H2) inequalities on sampled vectors.

    lambda is scanned on a grid; for each lambda the minimal feasible c is
    max over samples of ratio / lambda^s.  A fit must demonstrate actual
    contraction within the horizon (c * lambda^horizon < 1), otherwise the
    data is not uniformly hyperbolic at this horizon.
    """
    samples = list(_contraction_ratios(sys, orbit, splitting, horizon, weights=metric_weights))
    if not samples:
        raise ValueError("no contraction samples; widen the orbit window")
    lams = np.arange(lambda_grid, 1.0, lambda_grid)
    svals = np.array([s for _, s, _ in samples])
    ratios = np.array([r for _, _, r in samples])
    # c(lambda) = max over samples of ratio / lambda^s, floored at 1
    cs = np.maximum((ratios[None, :] / lams[:, None] ** svals[None, :]).max(axis=1), 1.0)
    s_max = int(svals.max())  # samples may stop short of the horizon at window edges
    feasible = cs * lams**s_max < 1.0 - 1e-9
    if not feasible.any():
        raise NotHyperbolicError("not uniformly hyperbolic at this horizon")
    c_min = cs[feasible].min()
    idx = int(np.argmax(feasible & (cs <= c_min * (1.0 + 1e-12))))
    lam = float(lams[idx])
    c = float(cs[idx])
    worst = max(samples, key=lambda row: row[2] / lam ** row[1])
    return HyperbolicityReport(c_est=c, lambda_est=lam, worst_t=int(worst[0]), horizon=horizon)


def check_expansion_equivalence(
    sys: ControlSystem,
    orbit: OrbitSegment,
    splitting: Splitting,
    report: HyperbolicityReport,
    horizon: int,
    slack: float = 1e-9,
) -> bool:
    """Forward-expansion form of (H2): |Dphi_t v| >= c^-1 lambda^-t |v| on E+."""
    c, lam = report.c_est, report.lambda_est
    for t in range(splitting.t0, splitting.t1 + 1):
        dim = splitting.d_plus
        coords = np.eye(dim)
        s_t = t
        for s in range(1, horizon + 1):
            if s_t + 1 > splitting.t1:
                break
            coords = _restricted_block(sys, orbit, splitting.unstable_at, s_t) @ coords
            s_t += 1
            for k in range(dim):
                if np.linalg.norm(coords[:, k]) < (1.0 - slack) * lam ** (-s) / c:
                    return False
    return True

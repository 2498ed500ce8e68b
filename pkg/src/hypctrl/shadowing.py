"""Constructive shadowing: Newton refinement of pseudo-orbits.

A pseudo-orbit is refined by Newton iteration on the one-step defects
G_t = x_{t+1} - f_{u_t}(x_t).  With periodic boundary the system is square
(cyclic block structure); with anchored ends the end states are clamped to
the pseudo-orbit and a least-squares pass is followed by a free-end
minimum-norm polish so that the reported window is a true orbit to
machine accuracy.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ShadowingError
from .systems import ControlSequence, ControlSystem, OrbitSegment

MAX_ITER = 50
RESIDUAL_TOL = 1e-12
END_BUFFER = 5
# A refined orbit farther than this from the pseudo-orbit is not a shadow of
# it; desk-scale absolute cap, overridable per call.
BETA_CAP = 1.0


@dataclass
class PseudoOrbit:
    """States with jumps of size at most alpha between consecutive steps."""

    start_time: int
    states: np.ndarray
    controls: ControlSequence
    periodic: bool = False

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, float))

    @property
    def steps(self) -> int:
        return self.states.shape[0] if self.periodic else self.states.shape[0] - 1

    def jumps(self, sys: ControlSystem) -> np.ndarray:
        n = self.states.shape[0]
        out = np.empty(self.steps)
        for i in range(self.steps):
            t = self.start_time + i
            nxt = self.states[(i + 1) % n]
            out[i] = np.linalg.norm(nxt - sys.forward(self.states[i], self.controls.at(t)))
        return out

    def alpha(self, sys: ControlSystem) -> float:
        return float(self.jumps(sys).max())


@dataclass
class ShadowResult:
    orbit: OrbitSegment
    beta: float
    residual: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "beta": self.beta,
                "residual": self.residual,
                "start_time": self.orbit.start_time,
                "length": int(self.orbit.states.shape[0]),
            },
            indent=2,
            sort_keys=True,
        )

    def to_csv(self, sys: ControlSystem, path) -> None:
        """Rows of (t, state coords, control coords, one-step defect)."""
        orbit = self.orbit
        d = orbit.states.shape[1]
        m = orbit.controls.control_dim
        defects = orbit.defects(sys)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{k}" for k in range(d)] + [f"u{k}" for k in range(m)] + ["defect"])
            for i in range(orbit.states.shape[0]):
                t = orbit.start_time + i
                defect = defects[i] if i < defects.size else 0.0
                w.writerow([t, *orbit.states[i], *orbit.controls.at(t), defect])


def _jacobians(sys, states, controls, t0, periodic):
    n = states.shape[0]
    steps = n if periodic else n - 1
    return [sys.jac_state(states[i], controls.at(t0 + i)) for i in range(steps)]


def _defects(sys, states, controls, t0, periodic):
    n = states.shape[0]
    steps = n if periodic else n - 1
    G = np.empty((steps, states.shape[1]))
    for i in range(steps):
        G[i] = states[(i + 1) % n] - sys.forward(states[i], controls.at(t0 + i))
    return G


def _newton_periodic(sys, states, controls, t0, max_iter, tol):
    """Cyclic Newton; unknowns are all states of one period."""
    X = states.copy()
    n, d = X.shape
    best = np.inf
    stall = 0
    for _ in range(max_iter):
        G = _defects(sys, X, controls, t0, periodic=True)
        r = float(np.abs(G).max())
        if r < tol:
            return X, r
        if not np.isfinite(r) or r > 1e8:
            raise ShadowingError("shadowing failed (pseudo-orbit too far from hyperbolic set)")
        J = np.zeros((n * d, n * d))
        jacs = _jacobians(sys, X, controls, t0, periodic=True)
        for i in range(n):
            J[i * d : (i + 1) * d, i * d : (i + 1) * d] = -jacs[i]
            j = (i + 1) % n
            J[i * d : (i + 1) * d, j * d : (j + 1) * d] += np.eye(d)
        try:
            dx = np.linalg.solve(J, -G.ravel())
        except np.linalg.LinAlgError as exc:
            raise ShadowingError(f"shadowing failed (singular Newton system: {exc})") from exc
        # halving line search on the residual
        step = 1.0
        for _ in range(10):
            Xn = X + step * dx.reshape(n, d)
            rn = float(np.abs(_defects(sys, Xn, controls, t0, periodic=True)).max())
            if rn < r or not np.isfinite(rn):
                break
            step *= 0.5
        X = X + step * dx.reshape(n, d)
        if r >= best * 0.999:
            stall += 1
            if stall > 8:
                raise ShadowingError("shadowing failed (Newton stalled)")
        else:
            stall = 0
            best = r
    G = _defects(sys, X, controls, t0, periodic=True)
    r = float(np.abs(G).max())
    if r >= tol:
        raise ShadowingError(f"shadowing failed (residual {r:.2e} after {max_iter} iterations)")
    return X, r


def _newton_window(sys, states, controls, t0, max_iter, tol, clamp_ends):
    """Gauss-Newton on a finite window.

    With clamp_ends the first and last states stay fixed (least-squares on
    the interior); otherwise the step is the minimum-norm solution of the
    underdetermined linearized system, which converges to a nearby true
    orbit segment.
    """
    X = states.copy()
    n, d = X.shape
    best = np.inf
    stall = 0
    for _ in range(max_iter):
        G = _defects(sys, X, controls, t0, periodic=False)
        r = float(np.abs(G).max())
        if r < tol:
            return X, r
        if not np.isfinite(r) or r > 1e8:
            raise ShadowingError("shadowing failed (pseudo-orbit too far from hyperbolic set)")
        jacs = _jacobians(sys, X, controls, t0, periodic=False)
        J = np.zeros(((n - 1) * d, n * d))
        for i in range(n - 1):
            J[i * d : (i + 1) * d, i * d : (i + 1) * d] = -jacs[i]
            J[i * d : (i + 1) * d, (i + 1) * d : (i + 2) * d] = np.eye(d)
        if clamp_ends:
            cols = np.ones(n * d, bool)
            cols[:d] = False
            cols[-d:] = False
            dx_int, *_ = np.linalg.lstsq(J[:, cols], -G.ravel(), rcond=None)
            dx = np.zeros(n * d)
            dx[cols] = dx_int
        else:
            dx, *_ = np.linalg.lstsq(J, -G.ravel(), rcond=None)
        step = 1.0
        for _ in range(10):
            Xn = X + step * dx.reshape(n, d)
            rn = float(np.abs(_defects(sys, Xn, controls, t0, periodic=False)).max())
            if rn < r or not np.isfinite(rn):
                break
            step *= 0.5
        X = X + step * dx.reshape(n, d)
        if r >= best * 0.999:
            stall += 1
            if stall > 8:
                if clamp_ends:
                    return X, r  # clamped stage is allowed to bottom out
                raise ShadowingError("shadowing failed (Newton stalled)")
        else:
            stall = 0
            best = r
    G = _defects(sys, X, controls, t0, periodic=False)
    return X, float(np.abs(G).max())


def refine_to_orbit(
    sys: ControlSystem,
    pseudo: PseudoOrbit,
    boundary: str = "periodic",
    max_iter: int = MAX_ITER,
    tol: float = RESIDUAL_TOL,
    end_buffer: int = END_BUFFER,
    beta_cap: float | None = BETA_CAP,
) -> ShadowResult:
    """Refine a pseudo-orbit to a true orbit; returns the orbit and beta.

    boundary 'periodic' wraps the window; 'anchored-ends' clamps the end
    states during a least-squares stage, then releases them for a
    minimum-norm polish and trims `end_buffer` steps from both ends of the
    reported window.  A result farther than beta_cap from the pseudo-orbit
    is rejected: Newton found an orbit, but not a shadow.
    """
    t0 = pseudo.start_time
    if boundary == "periodic":
        X, r = _newton_periodic(sys, pseudo.states, pseudo.controls, t0, max_iter, tol)
        closed = np.vstack([X, X[0]])
        orbit = OrbitSegment(t0, closed, pseudo.controls)
        beta = float(np.linalg.norm(X - pseudo.states, axis=1).max())
        if beta_cap is not None and beta > beta_cap:
            raise ShadowingError(
                f"shadowing failed (pseudo-orbit too far from hyperbolic set: beta {beta:.3g})"
            )
        return ShadowResult(orbit, beta, r)
    if boundary != "anchored-ends":
        raise ValueError(f"unknown boundary '{boundary}'")
    X, _ = _newton_window(sys, pseudo.states, pseudo.controls, t0, max_iter, tol, clamp_ends=True)
    X, r = _newton_window(sys, X, pseudo.controls, t0, max_iter, tol, clamp_ends=False)
    if r >= tol:
        raise ShadowingError(f"shadowing failed (residual {r:.2e} after polish)")
    n = X.shape[0]
    buf = min(end_buffer, (n - 1) // 2)
    lo, hi = buf, n - buf
    states = X[lo:hi]
    beta = float(np.linalg.norm(states - pseudo.states[lo:hi], axis=1).max())
    if beta_cap is not None and beta > beta_cap:
        raise ShadowingError(
            f"shadowing failed (pseudo-orbit too far from hyperbolic set: beta {beta:.3g})"
        )
    G = _defects(sys, X, pseudo.controls, t0, periodic=False)
    resid = float(np.abs(G[lo : hi - 1]).max()) if hi - 1 > lo else 0.0
    return ShadowResult(OrbitSegment(t0 + lo, states, pseudo.controls), beta, resid)


def find_periodic_orbit(
    sys: ControlSystem,
    u_periodic: ControlSequence,
    seed,
    period: int | None = None,
    max_iter: int = MAX_ITER,
) -> OrbitSegment:
    """tau-periodic orbit under a periodic control, by cyclic Newton from a seed state."""
    if u_periodic.extension != "periodic":
        raise ValueError("control sequence must have periodic extension")
    tau = period or u_periodic.length
    seed = np.asarray(seed, float)
    pseudo = PseudoOrbit(0, np.tile(seed, (tau, 1)), u_periodic, periodic=True)
    try:
        # a seed is allowed to sit far from the orbit it finds: no shadow cap
        result = refine_to_orbit(sys, pseudo, boundary="periodic", max_iter=max_iter, beta_cap=None)
    except ShadowingError as exc:
        raise ShadowingError(f"no periodic orbit found from seed {seed.tolist()}") from exc
    return result.orbit


def conjugacy_point(
    sys: ControlSystem,
    x,
    u: ControlSequence,
    window: int,
    base_control=None,
    end_buffer: int = END_BUFFER,
) -> np.ndarray:
    """Image h_u(x) of a base-orbit point under the perturbation conjugacy.

    The orbit of x under the constant base control over [-window; window]
    is refined, with anchored ends, against the perturbed control u; the
    state at time 0 of the refined orbit is returned.
    """
    x = np.asarray(x, float)
    u0 = np.asarray(base_control, float) if base_control is not None else sys.control_range.center
    states = [x]
    fwd = x
    for _ in range(window):
        fwd = sys.forward(fwd, u0)
        states.append(fwd)
    bwd = x
    back = []
    for _ in range(window):
        bwd = sys.inverse(bwd, u0)
        back.append(bwd)
    states = np.array(back[::-1] + states)
    pseudo = PseudoOrbit(-window, states, u)
    try:
        result = refine_to_orbit(sys, pseudo, boundary="anchored-ends", end_buffer=end_buffer)
    except ShadowingError as exc:
        raise ShadowingError("conjugacy undefined (control too large?)") from exc
    return result.orbit.state_at(0)


def expansivity_probe(sys: ControlSystem, u: ControlSequence, x, y, horizon: int) -> float:
    """max over |t| <= horizon of the distance between the two orbits under u."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    best = float(np.linalg.norm(x - y))
    fx, fy = x.copy(), y.copy()
    for t in range(horizon):
        ut = u.at(t)
        fx = sys.forward(fx, ut)
        fy = sys.forward(fy, ut)
        if np.isfinite(fx).all() and np.isfinite(fy).all():
            best = max(best, float(np.linalg.norm(fx - fy)))
    bx, by = x.copy(), y.copy()
    for t in range(-1, -horizon - 1, -1):
        ut = u.at(t)
        bx = sys.inverse(bx, ut)
        by = sys.inverse(by, ut)
        if np.isfinite(bx).all() and np.isfinite(by).all():
            best = max(best, float(np.linalg.norm(bx - by)))
    return best

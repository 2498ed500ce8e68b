"""Discrete-time invertible control systems and their transition cocycle.

States live in R^d with the Euclidean metric.  A system bundles the forward
map f(x, u), its inverse in x, both Jacobians, and the admissible control
range.  Maps are vectorized: they accept states of shape (..., d) and a
single control or a matching batch of controls.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, ControlRangeError
from .util import DEFAULT_TOL


# ---------------------------------------------------------------------------
# control ranges
# ---------------------------------------------------------------------------

class Box:
    """Axis-aligned box [lo_1, hi_1] x ... x [lo_m, hi_m]."""

    def __init__(self, lo, hi):
        self.lo = np.atleast_1d(np.asarray(lo, float))
        self.hi = np.atleast_1d(np.asarray(hi, float))
        if self.lo.shape != self.hi.shape or np.any(self.hi < self.lo):
            raise ConfigError(f"invalid box bounds lo={lo} hi={hi}")

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, u, tol: float = 1e-9) -> bool:
        u = np.asarray(u, float)
        slack = tol * (1.0 + np.abs(self.widths))
        return bool(np.all(u >= self.lo - slack) and np.all(u <= self.hi + slack))

    def clamp(self, u) -> np.ndarray:
        return np.clip(np.asarray(u, float), self.lo, self.hi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))

    def stencil(self) -> np.ndarray:
        """Quantized control values: center, axis extremes, diagonal corners."""
        c = self.center
        if self.is_degenerate:
            return c[None, :]
        pts = [c]
        for k in range(self.dim):
            for v in (self.lo[k], self.hi[k]):
                p = c.copy()
                p[k] = v
                pts.append(p)
        if self.dim == 2:
            for a in (self.lo[0], self.hi[0]):
                for b in (self.lo[1], self.hi[1]):
                    pts.append(np.array([a, b]))
        return np.unique(np.array(pts), axis=0)

    @property
    def is_degenerate(self) -> bool:
        return bool(np.all(self.widths == 0.0))

    def bounding_box(self) -> "Box":
        return self

    def __repr__(self):
        return f"Box({self.lo.tolist()}, {self.hi.tolist()})"


class Disk:
    """Euclidean ball of given radius centered at the origin of R^m."""

    def __init__(self, radius: float, dim: int = 2):
        if radius < 0:
            raise ConfigError(f"invalid disk radius {radius}")
        self.radius = float(radius)
        self._dim = int(dim)

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def center(self) -> np.ndarray:
        return np.zeros(self._dim)

    def contains(self, u, tol: float = 1e-9) -> bool:
        u = np.asarray(u, float)
        return bool(np.linalg.norm(u) <= self.radius + tol * (1.0 + self.radius))

    def clamp(self, u) -> np.ndarray:
        u = np.asarray(u, float)
        n = np.linalg.norm(u)
        if n <= self.radius or n == 0.0:
            return u
        return u * (self.radius / n)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        v = rng.normal(size=(n, self._dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        r = self.radius * rng.uniform(size=(n, 1)) ** (1.0 / self._dim)
        return v * r

    def stencil(self) -> np.ndarray:
        """Center, the four axis extremes, and four diagonal points on the rim."""
        if self.is_degenerate:
            return np.zeros((1, self._dim))
        pts = [np.zeros(self._dim)]
        for k in range(self._dim):
            for s in (-1.0, 1.0):
                p = np.zeros(self._dim)
                p[k] = s * self.radius
                pts.append(p)
        if self._dim == 2:
            d = self.radius / np.sqrt(2.0)
            for a in (-d, d):
                for b in (-d, d):
                    pts.append(np.array([a, b]))
        return np.array(pts)

    @property
    def is_degenerate(self) -> bool:
        return self.radius == 0.0

    def bounding_box(self) -> Box:
        return Box(-self.radius * np.ones(self._dim), self.radius * np.ones(self._dim))

    def __repr__(self):
        return f"Disk({self.radius}, dim={self._dim})"


# ---------------------------------------------------------------------------
# the system itself
# ---------------------------------------------------------------------------

@dataclass
class ControlSystem:
    """Invertible map family f(.,u) with Jacobians and a control range.

    forward / inverse take (states (..., d), control) and return (..., d);
    jac_state / jac_control return (..., d, d) and (..., d, m).
    """

    name: str
    state_dim: int
    control_range: Box | Disk
    forward: Callable
    inverse: Callable
    jac_state: Callable
    jac_control: Callable

    @property
    def control_dim(self) -> int:
        return self.control_range.dim

    def require_admissible(self, u) -> np.ndarray:
        u = np.asarray(u, float)
        if not self.control_range.contains(u):
            raise ControlRangeError(
                f"control {u.tolist()} outside control range {self.control_range} of '{self.name}'"
            )
        return u


# ---------------------------------------------------------------------------
# control sequences and orbit segments
# ---------------------------------------------------------------------------

@dataclass
class ControlSequence:
    """Finite window of controls u_t, t in [t0; t0+n), plus an extension rule.

    Queries outside the window use 'hold' (clamp to the nearest endpoint)
    or 'periodic' continuation.  The shift theta^k is an index offset.
    """

    values: np.ndarray
    t0: int = 0
    extension: str = "hold"

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, float))
        if self.extension not in ("hold", "periodic"):
            raise ConfigError(f"unknown control extension '{self.extension}'")

    @classmethod
    def constant(cls, u, t0: int = 0) -> "ControlSequence":
        return cls(np.atleast_1d(np.asarray(u, float))[None, :], t0=t0, extension="hold")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def control_dim(self) -> int:
        return self.values.shape[1]

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values[0]))

    def at(self, t: int) -> np.ndarray:
        i = t - self.t0
        n = self.length
        if self.extension == "periodic":
            i %= n
        else:
            i = min(max(i, 0), n - 1)
        return self.values[i]

    def shifted(self, k: int) -> "ControlSequence":
        """theta^k u, i.e. (shifted u)_t = u_{t+k}."""
        return ControlSequence(self.values, t0=self.t0 - k, extension=self.extension)

    def validate(self, sys: ControlSystem) -> None:
        for u in self.values:
            sys.require_admissible(u)


@dataclass
class OrbitSegment:
    """States x_t for t in [start_time; start_time+T] driven by `controls`."""

    start_time: int
    states: np.ndarray
    controls: ControlSequence

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, float))

    @property
    def end_time(self) -> int:
        return self.start_time + self.states.shape[0] - 1

    def state_at(self, t: int) -> np.ndarray:
        i = t - self.start_time
        if not 0 <= i < self.states.shape[0]:
            raise IndexError(f"time {t} outside orbit window [{self.start_time}; {self.end_time}]")
        return self.states[i]

    def defects(self, sys: ControlSystem) -> np.ndarray:
        """Per-step inconsistencies |x_{t+1} - f(x_t, u_t)|."""
        steps = self.states.shape[0] - 1
        out = np.empty(steps)
        for i in range(steps):
            t = self.start_time + i
            out[i] = np.linalg.norm(self.states[i + 1] - sys.forward(self.states[i], self.controls.at(t)))
        return out

    def validate(self, sys: ControlSystem, tol: float = DEFAULT_TOL) -> None:
        d = self.defects(sys)
        scale = 1.0 + np.abs(self.states[:-1]).max(axis=1)
        if np.any(d > tol * scale):
            raise ValueError(f"orbit defect {d.max():.3e} exceeds tolerance {tol:.1e}")


# ---------------------------------------------------------------------------
# elementary operations
# ---------------------------------------------------------------------------

def step(sys: ControlSystem, x, u) -> np.ndarray:
    """One forward step f_u(x); rejects controls outside the range."""
    u = sys.require_admissible(u)
    return np.asarray(sys.forward(np.asarray(x, float), u), float)


def inverse_step(sys: ControlSystem, x, u) -> np.ndarray:
    """One backward step f_u^{-1}(x); rejects controls outside the range."""
    u = sys.require_admissible(u)
    return np.asarray(sys.inverse(np.asarray(x, float), u), float)


def transition(sys: ControlSystem, t: int, x, u: ControlSequence) -> np.ndarray:
    """Transition phi(t, x, u) for t of either sign.

    Forward time composes f_{u_{t-1}} o ... o f_{u_0}; backward time applies
    inverse maps with controls u_{-1}, u_{-2}, ...
    """
    x = np.asarray(x, float)
    if t >= 0:
        for s in range(t):
            x = sys.forward(x, u.at(s))
    else:
        for s in range(-1, t - 1, -1):
            x = sys.inverse(x, u.at(s))
    return x


def orbit_states(sys: ControlSystem, x, u: ControlSequence, t_min: int, t_max: int) -> np.ndarray:
    """States phi(t, x, u) for t = t_min..t_max (x sits at t = 0)."""
    if t_min > 0 or t_max < 0 or t_min > t_max:
        raise ValueError("window must contain 0 with t_min <= t_max")
    x = np.asarray(x, float)
    fwd = [x]
    y = x
    for s in range(t_max):
        y = sys.forward(y, u.at(s))
        fwd.append(y)
    bwd = []
    y = x
    for s in range(-1, t_min - 1, -1):
        y = sys.inverse(y, u.at(s))
        bwd.append(y)
    return np.array(bwd[::-1] + fwd)


def orbit_segment(sys: ControlSystem, x, u: ControlSequence, t_min: int, t_max: int) -> OrbitSegment:
    return OrbitSegment(t_min, orbit_states(sys, x, u, t_min, t_max), u)


def bowen_distance(sys: ControlSystem, u: ControlSequence, tau: int, x, y) -> float:
    """d^{u,tau}(x, y) = max over t in [0; tau) of |phi(t,x,u) - phi(t,y,u)|."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    best = 0.0
    for t in range(tau):
        best = max(best, float(np.linalg.norm(x - y)))
        if t < tau - 1:
            ut = u.at(t)
            x = sys.forward(x, ut)
            y = sys.forward(y, ut)
    return best


def orbit_array(sys: ControlSystem, points: np.ndarray, u: ControlSequence, tau: int) -> np.ndarray:
    """Forward trajectories of a batch of points: shape (n, tau, d), t = 0..tau-1."""
    points = np.atleast_2d(np.asarray(points, float))
    out = np.empty((points.shape[0], tau, points.shape[1]))
    out[:, 0] = points
    x = points
    for t in range(1, tau):
        x = sys.forward(x, u.at(t - 1))
        out[:, t] = x
    return out


# ---------------------------------------------------------------------------
# built-in systems
# ---------------------------------------------------------------------------

def henon_planar(eps: float = 1.0, a: float = 5.0, b: float = 0.3) -> ControlSystem:
    """Henon horseshoe map with additive planar control in a disk of radius eps.

    f(x, y) = (a - b*y - x^2 + u, x + v) with u^2 + v^2 <= eps^2.
    """

    def forward(x, u):
        u = np.asarray(u, float)
        X = a - b * x[..., 1] - x[..., 0] ** 2 + u[..., 0]
        Y = x[..., 0] + u[..., 1]
        return np.stack([X, Y], axis=-1)

    def inverse(x, u):
        u = np.asarray(u, float)
        px = x[..., 1] - u[..., 1]
        py = (a - px**2 + u[..., 0] - x[..., 0]) / b
        return np.stack([px, py], axis=-1)

    def jac_state(x, u):
        x = np.asarray(x, float)
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 0] = -2.0 * x[..., 0]
        J[..., 0, 1] = -b
        J[..., 1, 0] = 1.0
        return J

    def jac_control(x, u):
        x = np.asarray(x, float)
        B = np.zeros(x.shape[:-1] + (2, 2))
        B[..., 0, 0] = 1.0
        B[..., 1, 1] = 1.0
        return B

    return ControlSystem("henon_planar", 2, Disk(eps, 2), forward, inverse, jac_state, jac_control)


def henon_scalar(eps: float = 1.0, a: float = 5.0, b: float = 0.3) -> ControlSystem:
    """Henon horseshoe map with scalar additive control |u| <= eps on the first coordinate."""

    def forward(x, u):
        u = np.asarray(u, float)
        X = a - b * x[..., 1] - x[..., 0] ** 2 + u[..., 0]
        Y = x[..., 0]
        return np.stack([X, Y], axis=-1)

    def inverse(x, u):
        u = np.asarray(u, float)
        px = x[..., 1]
        py = (a - px**2 + u[..., 0] - x[..., 0]) / b
        return np.stack([px, py], axis=-1)

    def jac_state(x, u):
        x = np.asarray(x, float)
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 0] = -2.0 * x[..., 0]
        J[..., 0, 1] = -b
        J[..., 1, 0] = 1.0
        return J

    def jac_control(x, u):
        x = np.asarray(x, float)
        B = np.zeros(x.shape[:-1] + (2, 1))
        B[..., 0, 0] = 1.0
        return B

    return ControlSystem("henon_scalar", 2, Box([-eps], [eps]), forward, inverse, jac_state, jac_control)


def linear_toy(bound: float = 1.0, expand: float = 2.0, contract: float = 0.5) -> ControlSystem:
    """Hyperbolic linear map diag(expand, contract) with additive box control."""
    A = np.diag([expand, contract])
    Ainv = np.diag([1.0 / expand, 1.0 / contract])

    def forward(x, u):
        return x @ A.T + np.asarray(u, float)

    def inverse(x, u):
        return (x - np.asarray(u, float)) @ Ainv.T

    def jac_state(x, u):
        x = np.asarray(x, float)
        return np.broadcast_to(A, x.shape[:-1] + (2, 2)).copy()

    def jac_control(x, u):
        x = np.asarray(x, float)
        return np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()

    rng = Box([-bound, -bound], [bound, bound])
    return ControlSystem("linear_toy", 2, rng, forward, inverse, jac_state, jac_control)


BUILTIN_SYSTEMS = {
    "henon_planar": henon_planar,
    "henon_scalar": henon_scalar,
    "linear_toy": linear_toy,
}


def make_system(name: str, **overrides) -> ControlSystem:
    if name not in BUILTIN_SYSTEMS:
        raise ConfigError(f"unknown system '{name}'; built-ins: {sorted(BUILTIN_SYSTEMS)}")
    factory = BUILTIN_SYSTEMS[name]
    try:
        return factory(**overrides)
    except TypeError as exc:
        raise ConfigError(f"bad parameter for system '{name}': {exc}") from exc


def system_from_config(table: dict) -> ControlSystem:
    """Build a system from a TOML [system] table: name plus parameter overrides."""
    table = dict(table)
    try:
        name = table.pop("name")
    except KeyError:
        raise ConfigError("config key 'system.name' is required") from None
    return make_system(name, **table)


def henon_side_length(a: float = 5.0, b: float = 0.3) -> float:
    """Side of the origin-centered square isolating the Henon horseshoe."""
    # For the standard parameters this is 1.3 + sqrt(1.69 + 20).
    return (1.0 + b) + np.sqrt((1.0 + b) ** 2 + 4.0 * a)


def henon_fixed_points(a: float = 5.0, b: float = 0.3) -> tuple[np.ndarray, np.ndarray]:
    """Both fixed points (x, x) of the uncontrolled map, from the quadratic formula."""
    disc = np.sqrt((1.0 + b) ** 2 + 4.0 * a)
    xp = (-(1.0 + b) + disc) / 2.0
    xm = (-(1.0 + b) - disc) / 2.0
    return np.array([xp, xp]), np.array([xm, xm])

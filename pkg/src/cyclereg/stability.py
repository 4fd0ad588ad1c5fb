"""Contraction lab: affine iterations under bounded perturbations.

For X_{t+1} = A X_t + c + delta_t with contraction factor
L = ||A||_2 < 1, fixed point x* = (I - A)^-1 c and V(x) = ||x - x*||^2,
one step obeys

    V_{t+1} - V_t <= (L^2 - 1) d^2 + 2 L d ||delta|| + ||delta||^2,

with d = ||X_t - x*||. When the per-step disturbance cap satisfies
0 < delta_max <= (1 - L) d the right side is <= 0, so V decreases until
the state enters the noise floor d ~ delta_max / (1 - L). check_decrease
audits a simulated trajectory against exactly these statements.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AffineSystem:
    a: np.ndarray
    c: np.ndarray

    @property
    def dim(self):
        return self.a.shape[0]

    @property
    def contraction_factor(self):
        return float(np.linalg.norm(self.a, 2))

    def equilibrium(self):
        return np.linalg.solve(np.eye(self.dim) - self.a, self.c)

    def step(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:  # batch of row vectors
            return x @ self.a.T + self.c
        return self.a @ x + self.c


def affine_system(a, c):
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"state matrix must be square, got {a.shape}")
    if c.shape != (a.shape[0],):
        raise ValueError(f"offset shape {c.shape} does not match dim {a.shape[0]}")
    return AffineSystem(a, c)


def random_affine_system(dim, factor, seed=0):
    """Random map rescaled so its spectral norm equals `factor` exactly."""
    if not 0.0 <= factor < 1.0:
        raise ValueError(f"contraction factor must lie in [0, 1), got {factor}")
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(dim, dim))
    top = np.linalg.norm(a, 2)
    a = a * (factor / top) if factor > 0.0 else np.zeros((dim, dim))
    return AffineSystem(a, rng.normal(size=dim))


def sample_in_ball(rng, dim, radius):
    """Uniform draw from the solid ball of the given radius."""
    v = rng.normal(size=dim)
    v /= np.linalg.norm(v)
    return v * radius * rng.random() ** (1.0 / dim)


@dataclass
class Trajectory:
    states: np.ndarray   # (steps+1, dim)
    deltas: np.ndarray   # (steps, dim)
    noise: float


def simulate(system, x0, steps, noise=0.0, seed=0):
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if noise < 0.0:
        raise ValueError(f"noise cap must be >= 0, got {noise}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.dim,):
        raise ValueError(f"x0 shape {x0.shape} does not match dim {system.dim}")
    rng = np.random.default_rng(seed)
    states = np.empty((steps + 1, system.dim))
    deltas = np.zeros((steps, system.dim))
    states[0] = x0
    for t in range(steps):
        if noise > 0.0:
            deltas[t] = sample_in_ball(rng, system.dim, noise)
        states[t + 1] = system.step(states[t]) + deltas[t]
    return Trajectory(states, deltas, noise)


def lyapunov_values(system, states):
    """V_t = squared distance to the fixed point, per state."""
    return np.sum((states - system.equilibrium()) ** 2, axis=1)


@dataclass
class StepCheck:
    t: int
    distance: float        # d = ||X_t - x*||
    delta_norm: float
    condition_holds: bool  # 0 < delta_max <= (1 - L) d
    decreased: bool        # V_{t+1} < V_t
    bound: float           # one-step upper bound on V_{t+1} - V_t
    within_bound: bool


def check_decrease(system, traj, atol=1e-12):
    """Audit every step of a trajectory against the decrease guarantee."""
    L = system.contraction_factor
    v = lyapunov_values(system, traj.states)
    d = np.sqrt(v)
    cap = traj.noise
    out = []
    for t in range(len(traj.deltas)):
        dn = float(np.linalg.norm(traj.deltas[t]))
        bound = (L ** 2 - 1.0) * v[t] + 2.0 * L * d[t] * dn + dn ** 2
        out.append(StepCheck(
            t=t,
            distance=float(d[t]),
            delta_norm=dn,
            condition_holds=bool(0.0 < cap <= (1.0 - L) * d[t]),
            decreased=bool(v[t + 1] < v[t]),
            bound=float(bound),
            within_bound=bool(v[t + 1] - v[t] <= bound + atol),
        ))
    return out


def estimate_lipschitz(fn, points):
    """Largest pairwise expansion ratio of fn over the sample rows."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValueError("need a 2-d sample with at least two rows")
    values = np.asarray(fn(points), dtype=float)
    if values.shape[0] != points.shape[0]:
        raise ValueError("fn must return one output row per input row")
    best = 0.0
    for i in range(points.shape[0] - 1):
        dx = np.linalg.norm(points[i + 1:] - points[i], axis=1)
        dy = np.linalg.norm(values[i + 1:] - values[i], axis=1)
        keep = dx > 0.0
        if keep.any():
            best = max(best, float(np.max(dy[keep] / dx[keep])))
    return best

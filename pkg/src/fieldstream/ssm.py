"""Linear state-space memory over Legendre measures.

The transition pair comes from the HiPPO-LegS construction and is never
trained; each latent channel runs the same scalar-input system, so the full
state is one (L, P) matrix updated in closed form per frame. Discretization
uses the bilinear transform, solved by forward substitution on the
lower-triangular resolvent and cached per step size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import autodiff as ad


def hippo_legs(order):
    """Transition matrix and input vector of the scaled-Legendre memory system.

    A[l, k] = -sqrt((2l+1)(2k+1)) below the diagonal, -(l+1) on it, zero above;
    b[l] = sqrt(2l+1). Zero-based indices, shapes (order, order) and (order,).
    """
    if order < 1:
        raise ValueError(f"order must be a positive integer, got {order}")
    idx = np.arange(order, dtype=np.float64)
    odd = 2.0 * idx + 1.0
    # single square root of the exact integer product: correctly rounded,
    # unlike sqrt(2l+1) * sqrt(2k+1) which rounds twice
    a = -np.tril(np.sqrt(np.outer(odd, odd)), -1) - np.diag(idx + 1.0)
    return a, np.sqrt(odd)


def discretize_bilinear(a, b, dt):
    """Bilinear (Tustin) discretization of x' = A x + b u at step dt.

    Returns (Abar, bbar) with Abar = (I - dt/2 A)^-1 (I + dt/2 A) and
    bbar = (I - dt/2 A)^-1 dt b. Lower-triangular systems are solved by
    forward substitution; anything else falls back to a dense solve.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if dt <= 0 or not np.isfinite(dt):
        raise ValueError(f"step size must be positive and finite, got {dt}")
    order = a.shape[0]
    if a.shape != (order, order) or b.shape != (order,):
        raise ValueError(f"expected ({order},{order}) matrix and ({order},) vector, "
                         f"got {a.shape} and {b.shape}")
    half = 0.5 * dt
    resolvent = np.eye(order) - half * a
    if np.any(np.abs(np.diag(resolvent)) < np.finfo(np.float64).tiny):
        raise np.linalg.LinAlgError(f"resolvent singular at dt={dt}")
    rhs_a = np.eye(order) + half * a
    if np.array_equal(resolvent, np.tril(resolvent)):
        abar = solve_triangular(resolvent, rhs_a, lower=True)
        bbar = solve_triangular(resolvent, dt * b, lower=True)
    else:
        abar = np.linalg.solve(resolvent, rhs_a)
        bbar = np.linalg.solve(resolvent, dt * b)
    return abar, bbar


def median_step(timestamps):
    """Median raw step of a record's timestamps; 1.0 when fewer than two frames."""
    timestamps = np.asarray(timestamps, dtype=np.float64)
    if timestamps.size < 2:
        return 1.0
    diffs = np.diff(timestamps)
    if np.any(diffs <= 0):
        raise ValueError("timestamps must be strictly increasing")
    return float(np.median(diffs))


class HippoSystem:
    """Frozen LegS pair plus a cache of discretizations keyed by step size.

    Cache keys round dt to 12 significant digits, so step sizes equal at that
    precision share one (Abar, bbar) pair and irregular streams that normalize
    to the same steps reproduce each other bitwise.
    """

    def __init__(self, order):
        self.order = order
        self.a, self.b = hippo_legs(order)
        self._cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def discretize(self, dt):
        key = f"{float(dt):.12g}"
        pair = self._cache.get(key)
        if pair is None:
            pair = discretize_bilinear(self.a, self.b, float(dt))
            self._cache[key] = pair
        return pair

    def step(self, x, z, dt):
        """One recurrence step: X_t = Abar X_{t-1} + outer(bbar, z_t).

        x is the (L, P) state tensor, z the (P,) frame summary; gradients flow
        through both while the transition pair stays constant.
        """
        if len(x.shape) != 2 or x.shape[0] != self.order:
            raise ad.ShapeError(f"state must be ({self.order}, P), got {x.shape}")
        if z.shape != (x.shape[1],):
            raise ad.ShapeError(f"summary shape {z.shape} does not match state {x.shape}")
        abar, bbar = self.discretize(dt)
        dtype = x.dtype
        return (ad.matmul(ad.constant(abar, dtype), x)
                + ad.outer(ad.constant(bbar, dtype), z))


@dataclass
class StreamState:
    """Carried across frames of one record: the memory and the clock."""

    x: ad.Tensor
    frame: int = 0
    last_t: float | None = None
    dt_ref: float = 1.0  # per-record median raw step; normalizer for dt

    def next_dt(self, t):
        """Normalized step to timestamp t; the first step is one by construction."""
        if self.last_t is None:
            return 1.0
        dt = (t - self.last_t) / self.dt_ref
        if dt <= 0:
            raise ValueError(f"timestamps must be strictly increasing, got step {dt}")
        return dt

    def advanced(self, x, t):
        return StreamState(x=x, frame=self.frame + 1, last_t=t, dt_ref=self.dt_ref)


class ScalarSSM:
    """Scalar-input, scalar-output probe of the frozen system.

    Exists for unit tests only: the model path never reads a scalar output,
    but impulse responses of this readout pin down the recurrence algebra.
    """

    def __init__(self, system, c, d=0.0):
        self.system = system
        self.c = np.asarray(c, dtype=np.float64)
        if self.c.shape != (system.order,):
            raise ValueError(f"readout must have shape ({system.order},), got {self.c.shape}")
        self.d = float(d)

    def step(self, x, s, dt):
        """Advance state x by input s over dt; returns (new state, readout)."""
        abar, bbar = self.system.discretize(dt)
        x_new = abar @ x + bbar * s
        return x_new, float(self.c @ x_new + self.d * s)

"""Bounded-variable least squares.

Solves ``min ||z - L b||^2`` subject to ``lower <= b <= upper`` with a primal
active-set method of the Stark-Parker type. Every variable is either *free*
or held at one of its bounds. The outer loop releases the bound variable
with the largest KKT violation (lowest index on ties); the inner loop solves
the least-squares problem over the free variables and, if that point leaves
the box, steps toward it until the first free variable reaches a bound.
Each inner step is a convex combination toward a subspace minimizer, so the
objective never increases.

A variable that re-enters the bound set immediately after being released
is skipped until the iterate moves again. This keeps the method from
cycling when ``L`` is rank deficient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["BoxBounds", "BvlsSolution", "kkt_residual", "solve", "voltages_from_b"]

AT_LOWER, FREE, AT_UPPER = -1, 0, 1


@dataclass(frozen=True)
class BoxBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("bounds must be vectors of equal length")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, m: int) -> "BoxBounds":
        """The [0, 1]^m box used for lifted DM inputs."""
        return cls(np.zeros(m), np.ones(m))


@dataclass
class BvlsSolution:
    b_star: np.ndarray
    objective: float
    active_lower: tuple[int, ...]
    active_upper: tuple[int, ...]
    kkt_residual: float
    iterations: int
    converged: bool
    objective_history: list[float] = field(default_factory=list, repr=False)


def _scale(L: np.ndarray, z: np.ndarray) -> float:
    return 2.0 * np.linalg.norm(L, np.inf) * np.linalg.norm(z) + 1.0


def kkt_residual(L, z, b, bounds: BoxBounds, atol: float = 0.0) -> float:
    """Largest scaled KKT violation of ``b`` for the box-constrained problem.

    Coordinates within ``atol`` of a bound are treated as lying on it.
    The gradient ``2 L^T (L b - z)`` is divided by ``2 ||L||_inf ||z||_2 + 1``.
    """
    L = np.asarray(L, dtype=float)
    z = np.asarray(z, dtype=float)
    g = 2.0 * L.T @ (L @ b - z)
    at_lo = b <= bounds.lower + atol
    at_hi = b >= bounds.upper - atol
    viol = np.abs(g)
    viol = np.where(at_lo & ~at_hi, np.maximum(-g, 0.0), viol)
    viol = np.where(at_hi & ~at_lo, np.maximum(g, 0.0), viol)
    viol = np.where(at_lo & at_hi, 0.0, viol)  # fixed variable
    return float(viol.max(initial=0.0) / _scale(L, z))


def solve(
    L: np.ndarray,
    z_D: np.ndarray,
    bounds: BoxBounds | None = None,
    tol: float = 1e-10,
    max_iter: int | None = None,
    x0: np.ndarray | None = None,
) -> BvlsSolution:
    """Box-constrained linear least squares.

    Parameters
    ----------
    L : (n, m) array
    z_D : (n,) array
    bounds : BoxBounds, optional
        Defaults to the unit box.
    tol : float
        KKT tolerance relative to ``2 ||L||_inf ||z_D||_2 + 1``.
    max_iter : int, optional
        Cap on subspace least-squares solves, ``10 m`` by default.
    x0 : (m,) array, optional
        Warm start. Clipped into the box; coordinates on a bound start in
        the bound set, the rest start free.

    Returns
    -------
    BvlsSolution
        ``converged`` is False when ``max_iter`` ran out; ``b_star`` is then
        the best (feasible) iterate found.

    Notes
    -----
    When ``L`` lacks full column rank the minimizer is not unique; subspace
    problems use the minimum-norm solution and the returned point is the one
    the pivot order reaches.
    """
    L = np.asarray(L, dtype=float)
    z = np.asarray(z_D, dtype=float)
    if L.ndim != 2 or z.shape != (L.shape[0],):
        raise ValueError(f"shape mismatch: L {L.shape}, z_D {z.shape}")
    if not (np.all(np.isfinite(L)) and np.all(np.isfinite(z))):
        raise ValueError("L and z_D must be finite")
    if not tol > 0:
        raise ValueError("tol must be positive")
    m = L.shape[1]
    if bounds is None:
        bounds = BoxBounds.unit(m)
    if bounds.lower.shape != (m,):
        raise ValueError(f"bounds have length {bounds.lower.size}, expected {m}")
    if max_iter is None:
        max_iter = 10 * m
    lo, hi = bounds.lower, bounds.upper
    thresh = tol * _scale(L, z)

    if x0 is None:
        x = lo.copy()
        status = np.full(m, AT_LOWER)
    else:
        x = np.clip(np.asarray(x0, dtype=float), lo, hi)
        status = np.where(x <= lo, AT_LOWER, np.where(x >= hi, AT_UPPER, FREE))
    status[lo == hi] = AT_LOWER  # fixed variables never leave

    def objective(v):
        r = z - L @ v
        return float(r @ r)

    history = [objective(x)]
    iterations = 0
    skipped: set[int] = set()

    def descend(entering: int | None, entered_from: int) -> None:
        """Minimize over the free set, dropping variables that hit a bound."""
        nonlocal iterations
        first = entering is not None
        while iterations < max_iter:
            free = np.flatnonzero(status == FREE)
            if free.size == 0:
                return
            fixed = status != FREE
            rhs = z - L[:, fixed] @ x[fixed]
            y = np.linalg.lstsq(L[:, free], rhs, rcond=None)[0]
            iterations += 1

            if first:
                first = False
                yt = y[np.searchsorted(free, entering)]
                if (entered_from == AT_LOWER and yt <= lo[entering]) or (
                    entered_from == AT_UPPER and yt >= hi[entering]
                ):
                    status[entering] = entered_from
                    skipped.add(entering)
                    return

            xf = x[free]
            below = y < lo[free]
            above = y > hi[free]
            if not (below.any() or above.any()):
                x[free] = y
                history.append(objective(x))
                skipped.clear()
                return

            # step toward y until the first free variable hits its bound
            step = y - xf
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(
                    below, (lo[free] - xf) / step, np.where(above, (hi[free] - xf) / step, np.inf)
                )
            ratio = np.clip(ratio, 0.0, 1.0)
            alpha = ratio.min()
            x[free] = xf + alpha * step
            hit = (below | above) & (ratio <= alpha)
            for j, is_below in zip(free[hit], below[hit]):
                if is_below:
                    x[j], status[j] = lo[j], AT_LOWER
                else:
                    x[j], status[j] = hi[j], AT_UPPER
            history.append(objective(x))
            if alpha > 0:
                skipped.clear()

    if np.any(status == FREE):
        descend(None, FREE)

    converged = False
    while True:
        g = 2.0 * L.T @ (L @ x - z)
        viol = np.zeros(m)
        viol[status == AT_LOWER] = np.maximum(-g[status == AT_LOWER], 0.0)
        viol[status == AT_UPPER] = np.maximum(g[status == AT_UPPER], 0.0)
        viol[lo == hi] = 0.0
        for i in skipped:
            viol[i] = 0.0
        if viol.max(initial=0.0) <= thresh:
            converged = True
            break
        if iterations >= max_iter:
            break
        t = int(np.argmax(viol))
        entered_from = status[t]
        status[t] = FREE
        descend(t, entered_from)

    x = np.clip(x, lo, hi)
    return BvlsSolution(
        b_star=x,
        objective=objective(x),
        active_lower=tuple(int(i) for i in np.flatnonzero(x == lo)),
        active_upper=tuple(int(i) for i in np.flatnonzero((x == hi) & (lo != hi))),
        kkt_residual=kkt_residual(L, z, x, bounds),
        iterations=iterations,
        converged=converged,
        objective_history=history,
    )


def voltages_from_b(b: np.ndarray, theta_assumed: float) -> np.ndarray:
    """Invert the lift: ``u = b ** (1 / theta)``."""
    b = np.asarray(b, dtype=float)
    if np.any(b < 0) or np.any(b > 1) or not np.all(np.isfinite(b)):
        raise ValueError("lifted inputs must lie in [0, 1]")
    if not theta_assumed > 0:
        raise ValueError("theta_assumed must be positive")
    return np.clip(b ** (1.0 / theta_assumed), 0.0, 1.0)

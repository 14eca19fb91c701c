"""Influence-matrix identification.

The influence matrix ``L`` (n x m) maps lifted inputs ``b`` to Zernike
coefficients, ``z_next = L b + noise``. It is initialised by batch least
squares over random probes and then tracked with recursive least squares
with forgetting factor ``beta``.

Two equivalent state representations are provided:

``dense``
    Works on ``x = vec(L)`` with the full (n*m) x (n*m) matrix ``S`` and the
    regressor ``H = b^T kron I_n``. Reference implementation for small n*m.
``factored``
    Uses ``S = P kron I_n``. The update keeps that structure: with
    ``q = b^T P b`` and ``g = P b / (beta + q)``::

        L <- L + eps g^T
        P <- (P - g (P b)^T) / beta

    which costs O(m^2 + n m) per step.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import linalg

from .io import atomic_write_bytes, load_matrix_text, save_matrix_text
from .plant import lift

__all__ = [
    "EstimatorError",
    "EstimatorState",
    "InitReport",
    "ProbeDataset",
    "batch_init",
    "current_L",
    "generate_probes",
    "init_state",
    "load_probes",
    "load_state",
    "rls_update",
    "save_probes",
    "save_state",
    "unvec",
    "vec",
]

log = logging.getLogger(__name__)

PROBE_MEAN = 0.5
PROBE_STD = 0.15
DEFAULT_CONDITION_CAP = 1e10


class EstimatorError(ArithmeticError):
    """Numerical failure in identification (ill-conditioned data, corrupt state)."""


def vec(L: np.ndarray) -> np.ndarray:
    """Stack the columns of ``L`` into one vector."""
    return np.asarray(L, dtype=float).reshape(-1, order="F")


def unvec(x: np.ndarray, n: int, m: int) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape((n, m), order="F")


@dataclass
class ProbeDataset:
    """Random identification probes: voltages ``U``, lifts ``B``, observations ``Z``.

    Column ``j`` of ``Z`` is the observation that followed input column ``j``.
    """

    U: np.ndarray
    B: np.ndarray
    Z: np.ndarray

    @property
    def s(self) -> int:
        return self.U.shape[1]


def generate_probes(
    m: int,
    s: int,
    theta_assumed: float,
    seed: int,
    observe: Callable[[np.ndarray, int], np.ndarray],
) -> ProbeDataset:
    """Draw ``s`` random probes and record the plant's responses.

    Voltages are drawn from Normal(0.5, 0.15) and clamped to [0, 1].
    ``observe(u, j)`` must return the coefficient vector measured after
    applying probe ``j``.
    """
    if s < m:
        raise ValueError(f"need s >= m probes (s={s}, m={m})")
    rng = np.random.default_rng(seed)
    U = np.clip(rng.normal(PROBE_MEAN, PROBE_STD, size=(m, s)), 0.0, 1.0)
    B = lift(U, theta_assumed)
    Z = np.column_stack([observe(U[:, j], j) for j in range(s)])
    return ProbeDataset(U, B, Z)


@dataclass
class InitReport:
    L0_hat: np.ndarray
    condition_BBt: float
    residual_fro: float


def batch_init(probes: ProbeDataset, condition_cap: float = DEFAULT_CONDITION_CAP) -> InitReport:
    """Least-squares influence matrix ``Z B^T (B B^T)^-1``.

    Solved as ``B^T L^T = Z^T`` with an orthogonal factorization instead of
    forming ``B B^T``.
    """
    B = np.asarray(probes.B, dtype=float)
    Z = np.asarray(probes.Z, dtype=float)
    if B.shape[1] != Z.shape[1]:
        raise ValueError("B and Z must have the same number of columns")
    sv = linalg.svdvals(B)
    cond_bbt = np.inf if sv[-1] == 0 or B.shape[0] > B.shape[1] else float((sv[0] / sv[-1]) ** 2)
    if not np.isfinite(cond_bbt) or cond_bbt > condition_cap:
        raise EstimatorError(
            f"probe matrix B is rank deficient or ill-conditioned "
            f"(cond(B B^T) = {cond_bbt:.3g} > {condition_cap:.3g})"
        )
    Lt, *_ = linalg.lstsq(B.T, Z.T, lapack_driver="gelsd")
    L0 = Lt.T
    residual = float(np.linalg.norm(Z - L0 @ B))
    return InitReport(L0, cond_bbt, residual)


@dataclass
class EstimatorState:
    """RLS state. Exactly one of ``S_dense`` / ``P`` is set, according to ``form``."""

    x_hat: np.ndarray
    n: int
    m: int
    form: str
    beta: float
    delta: float
    S_dense: np.ndarray | None = None
    P: np.ndarray | None = None
    last_epsilon: np.ndarray | None = None
    steps: int = 0

    @property
    def L_hat(self) -> np.ndarray:
        return unvec(self.x_hat, self.n, self.m)

    def covariance(self) -> np.ndarray:
        """Full (n*m) x (n*m) matrix S, materialized for either form."""
        if self.form == "dense":
            return self.S_dense
        return np.kron(self.P, np.eye(self.n))

    def min_eigenvalue(self) -> float:
        mat = self.S_dense if self.form == "dense" else self.P
        return float(linalg.eigvalsh(mat)[0])


def init_state(L0: np.ndarray, delta: float, beta: float, form: str = "factored") -> EstimatorState:
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    L0 = np.array(L0, dtype=float)
    n, m = L0.shape
    if form == "dense":
        return EstimatorState(vec(L0), n, m, form, beta, delta, S_dense=delta * np.eye(n * m))
    if form == "factored":
        return EstimatorState(vec(L0), n, m, form, beta, delta, P=delta * np.eye(m))
    raise ValueError(f"unknown estimator form {form!r}")


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def rls_update(state: EstimatorState, b: np.ndarray, z_next: np.ndarray) -> EstimatorState:
    """One recursive least-squares step; returns a new state."""
    b = np.asarray(b, dtype=float)
    z_next = np.asarray(z_next, dtype=float)
    n, m, beta = state.n, state.m, state.beta
    if b.shape != (m,) or z_next.shape != (n,):
        raise ValueError(f"expected b of length {m} and z of length {n}")

    if state.form == "dense":
        S = state.S_dense
        H = np.kron(b[None, :], np.eye(n))
        HS = H @ S
        gram = beta * np.eye(n) + HS @ H.T
        try:
            F = linalg.solve(gram, HS, assume_a="pos").T
        except (linalg.LinAlgError, ValueError) as exc:
            raise EstimatorError(f"beta*I + H S H^T is singular: {exc}") from exc
        S_new = _symmetrize((S - F @ HS) / beta)
        eps = z_next - H @ state.x_hat
        x_new = state.x_hat + F @ eps
        return replace(state, x_hat=x_new, S_dense=S_new, last_epsilon=eps, steps=state.steps + 1)

    P = state.P
    Pb = P @ b
    denom = beta + b @ Pb
    if not denom > 0 or not np.isfinite(denom):
        raise EstimatorError(f"beta + b^T P b = {denom} is not positive; state is corrupt")
    g = Pb / denom
    L = state.L_hat
    eps = z_next - L @ b
    L_new = L + np.outer(eps, g)
    P_new = _symmetrize((P - np.outer(g, Pb)) / beta)
    return replace(state, x_hat=vec(L_new), P=P_new, last_epsilon=eps, steps=state.steps + 1)


def current_L(state: EstimatorState) -> np.ndarray:
    return state.L_hat.copy()


# --- persistence ----------------------------------------------------------


def save_state(path, state: EstimatorState) -> None:
    """Write the state as an ``.npz`` archive.

    Keys: ``form``, ``n``, ``m``, ``beta``, ``delta``, ``steps``, ``L_hat``,
    ``last_epsilon`` (empty before the first update) and ``P`` or ``S_dense``.
    """
    arrays = dict(
        form=np.array(state.form),
        n=np.array(state.n),
        m=np.array(state.m),
        beta=np.array(state.beta),
        delta=np.array(state.delta),
        steps=np.array(state.steps),
        L_hat=state.L_hat,
        last_epsilon=np.array([]) if state.last_epsilon is None else state.last_epsilon,
    )
    if state.form == "dense":
        arrays["S_dense"] = state.S_dense
    else:
        arrays["P"] = state.P
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write_bytes(path, buf.getvalue())


def load_state(path) -> EstimatorState:
    with np.load(Path(path), allow_pickle=False) as data:
        form = str(data["form"])
        n, m = int(data["n"]), int(data["m"])
        eps = data["last_epsilon"]
        return EstimatorState(
            x_hat=vec(data["L_hat"]),
            n=n,
            m=m,
            form=form,
            beta=float(data["beta"]),
            delta=float(data["delta"]),
            S_dense=data["S_dense"].copy() if form == "dense" else None,
            P=data["P"].copy() if form == "factored" else None,
            last_epsilon=eps.copy() if eps.size else None,
            steps=int(data["steps"]),
        )


def save_probes(directory, probes: ProbeDataset) -> None:
    """Write ``U.txt``, ``B.txt`` and ``Z.txt`` in the row-per-line matrix format."""
    directory = Path(directory)
    for name in ("U", "B", "Z"):
        save_matrix_text(directory / f"{name}.txt", getattr(probes, name))


def load_probes(directory) -> ProbeDataset:
    directory = Path(directory)
    return ProbeDataset(*(load_matrix_text(directory / f"{k}.txt") for k in ("U", "B", "Z")))

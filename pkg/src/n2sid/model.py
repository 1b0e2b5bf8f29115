"""Discrete-time LTI state-space models, simulation and fit metrics.

Models are quintuples (A, B, C, D, K) driving the recursions

    x(k+1) = A x(k) + B u(k) + K e(k)
    y(k)   = C x(k) + D u(k) + e(k)

with state dimension n, m inputs and p outputs.  The equivalent
predictor ("observer") form replaces (A, B) by (A - K C, B - K D) and is
driven by the measured output instead of the unknown noise e.

Time indexing: sample k of the external arrays (row k, 0-based) is the
k-th measurement; simulation starts from the initial state x0 which is
the state at the first sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SimulationOverflowError

__all__ = [
    "StateSpaceModel",
    "ObserverModel",
    "IoRecord",
    "to_observer",
    "simulate",
    "predict_observer",
    "markov_parameters",
    "vaf",
    "generate_innovation_data",
]


def _as_matrix(a, rows: int | None = None, cols: int | None = None, name: str = "") -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if rows is not None and a.shape[0] != rows:
        raise ValueError(f"{name} has {a.shape[0]} rows, expected {rows}")
    if cols is not None and a.shape[1] != cols:
        raise ValueError(f"{name} has {a.shape[1]} columns, expected {cols}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class StateSpaceModel:
    """Innovation-form quintuple (A, B, C, D, K).

    K may be zero when no noise model is wanted.  All matrices are
    validated for mutually consistent shapes and finite entries.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, name="A")
        n = A.shape[0]
        if A.shape[1] != n:
            raise ValueError(f"A must be square, got {A.shape}")
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        m = B.shape[1]
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.shape[1] != n:
            raise ValueError(f"C has {C.shape[1]} columns, expected {n}")
        p = C.shape[0]
        D = np.asarray(self.D, dtype=float).reshape(p, m)
        K = np.asarray(self.K, dtype=float).reshape(n, p)
        for name, mat in (("A", A), ("B", B), ("C", C), ("D", D), ("K", K)):
            if not np.all(np.isfinite(mat)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "K", K)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class ObserverModel:
    """Predictor form with Aobs = A - K C and Bobs = B - K D."""

    Aobs: np.ndarray
    Bobs: np.ndarray
    C: np.ndarray
    D: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        # Reuse the quintuple validation; the observer shares its shape rules.
        checked = StateSpaceModel(self.Aobs, self.Bobs, self.C, self.D, self.K)
        object.__setattr__(self, "Aobs", checked.A)
        object.__setattr__(self, "Bobs", checked.B)
        object.__setattr__(self, "C", checked.C)
        object.__setattr__(self, "D", checked.D)
        object.__setattr__(self, "K", checked.K)

    @property
    def n(self) -> int:
        return self.Aobs.shape[0]

    @property
    def m(self) -> int:
        return self.Bobs.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def to_state_space(self) -> StateSpaceModel:
        """Recover the innovation-form quintuple (A = Aobs + K C, B = Bobs + K D)."""
        return StateSpaceModel(
            self.Aobs + self.K @ self.C,
            self.Bobs + self.K @ self.D,
            self.C,
            self.D,
            self.K,
        )


@dataclass(frozen=True)
class IoRecord:
    """Time-aligned input/output samples; row k holds u(k), y(k).

    ``u`` has shape (N, m) and may have zero columns for output-only
    records; ``y`` has shape (N, p).
    """

    u: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if u.ndim != 2 or y.ndim != 2:
            raise ValueError("u and y must be 1- or 2-dimensional arrays")
        if u.shape[0] != y.shape[0]:
            raise ValueError(f"u has {u.shape[0]} samples but y has {y.shape[0]}")
        if y.shape[0] < 1:
            raise ValueError("record must contain at least one sample")
        if not np.all(np.isfinite(u)) or not np.all(np.isfinite(y)):
            raise ValueError("record contains non-finite entries")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @property
    def p(self) -> int:
        return self.y.shape[1]


def to_observer(model: StateSpaceModel) -> ObserverModel:
    """Convert an innovation-form model to its predictor (observer) form."""
    return ObserverModel(
        model.A - model.K @ model.C,
        model.B - model.K @ model.D,
        model.C,
        model.D,
        model.K,
    )


def _check_input(u: np.ndarray, m: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.ndim != 2 or u.shape[1] != m:
        raise ValueError(f"input has shape {u.shape}, expected (N, {m})")
    return u


def _check_x0(x0, n: int) -> np.ndarray:
    if x0 is None:
        return np.zeros(n)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != n:
        raise ValueError(f"x0 has length {x0.shape[0]}, expected {n}")
    return x0


def simulate(model: StateSpaceModel, u: np.ndarray, x0=None) -> np.ndarray:
    """Simulate the deterministic part of the model.

    Runs x(k+1) = A x(k) + B u(k), yhat(k) = C x(k) + D u(k) starting
    from x(0) = x0 (zeros when omitted).  The gain K plays no role here:
    this is a simulation, not a filter.

    Raises:
        SimulationOverflowError: if the recursion leaves float range
            (unstable A over a long horizon).
    """
    u = _check_input(u, model.m)
    x = _check_x0(x0, model.n)
    N = u.shape[0]
    yhat = np.empty((N, model.p))
    A, B, C, D = model.A, model.B, model.C, model.D
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(N):
            yhat[k] = C @ x + D @ u[k]
            x = A @ x + B @ u[k]
            if not np.all(np.isfinite(x)):
                raise SimulationOverflowError(f"state overflow at sample {k + 1}")
    if not np.all(np.isfinite(yhat)):
        raise SimulationOverflowError("output overflow")
    return yhat


def predict_observer(obs: ObserverModel, rec: IoRecord, x0=None) -> np.ndarray:
    """One-step-ahead prediction with the observer driven by measured data.

    Runs xhat(k+1) = Aobs xhat(k) + Bobs u(k) + K y(k) and returns
    yhat(k) = C xhat(k) + D u(k).
    """
    if rec.m != obs.m or rec.p != obs.p:
        raise ValueError(
            f"record has (m={rec.m}, p={rec.p}), observer expects (m={obs.m}, p={obs.p})"
        )
    x = _check_x0(x0, obs.n)
    N = rec.N
    yhat = np.empty((N, obs.p))
    Aobs, Bobs, C, D, K = obs.Aobs, obs.Bobs, obs.C, obs.D, obs.K
    u, y = rec.u, rec.y
    for k in range(N):
        yhat[k] = C @ x + D @ u[k]
        x = Aobs @ x + Bobs @ u[k] + K @ y[k]
        if not np.all(np.isfinite(x)):
            raise SimulationOverflowError(f"observer state overflow at sample {k + 1}")
    return yhat


def markov_parameters(obs: ObserverModel, count: int, channel: str = "input") -> list[np.ndarray]:
    """Impulse-response blocks of the predictor.

    channel="input" returns [D, C Bobs, C Aobs Bobs, ...] (p x m blocks);
    channel="output" returns [0, C K, C Aobs K, ...] (p x p blocks, zero
    feed-through).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if channel == "input":
        first = obs.D
        gain = obs.Bobs
    elif channel == "output":
        first = np.zeros((obs.p, obs.p))
        gain = obs.K
    else:
        raise ValueError(f"unknown channel {channel!r}")
    blocks = [first]
    CA = obs.C
    for _ in range(count - 1):
        blocks.append(CA @ gain)
        CA = CA @ obs.Aobs
    return blocks


def vaf(y: np.ndarray, yhat: np.ndarray) -> float:
    """Variance accounted for, in percent.

    Returns (1 - sum ||y(k) - yhat(k)||^2 / sum ||y(k)||^2) * 100, which
    may be negative for poor fits.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    yhat = np.atleast_2d(np.asarray(yhat, dtype=float))
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {yhat.shape}")
    denom = float(np.sum(y * y))
    if denom == 0.0:
        raise ValueError("reference output is identically zero")
    num = float(np.sum((y - yhat) ** 2))
    return (1.0 - num / denom) * 100.0


def generate_innovation_data(
    model: StateSpaceModel,
    u: np.ndarray,
    x0=None,
    noise_std: float = 0.0,
    seed: int | None = None,
) -> IoRecord:
    """Generate an i/o record by running the innovation form.

    The noise e(k) is i.i.d. zero-mean Gaussian with standard deviation
    ``noise_std``, drawn from a generator seeded with ``seed``; the
    output is deterministic for a fixed seed.
    """
    u = _check_input(u, model.m)
    x = _check_x0(x0, model.n)
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    N = u.shape[0]
    rng = np.random.default_rng(seed)
    e = noise_std * rng.standard_normal((N, model.p)) if noise_std > 0 else np.zeros((N, model.p))
    y = np.empty((N, model.p))
    A, B, C, D, K = model.A, model.B, model.C, model.D, model.K
    for k in range(N):
        y[k] = C @ x + D @ u[k] + e[k]
        x = A @ x + B @ u[k] + K @ e[k]
        if not np.all(np.isfinite(x)):
            raise SimulationOverflowError(f"state overflow at sample {k + 1}")
    return IoRecord(u=u, y=y)

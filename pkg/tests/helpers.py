"""Shared oracles and synthetic systems for the test suite.

Everything here is written independently of the package internals it
checks: explicit index loops, naive per-sample recursions, and canonical
basis probing.
"""

from __future__ import annotations

import numpy as np

from n2sid.model import IoRecord, StateSpaceModel
from n2sid.structured_ops import DecisionVector, OperatorSpec, apply_adjoint, apply_operator


def naive_simulate(A, B, C, D, u, x0):
    """Step-by-step simulation oracle, one sample at a time."""
    A, B, C, D = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, C, D))
    x = np.asarray(x0, dtype=float).reshape(-1).copy()
    out = []
    for k in range(u.shape[0]):
        out.append(C @ x + D @ u[k])
        x = A @ x + B @ u[k]
    return np.array(out)


def naive_observer_predict(Aobs, Bobs, C, D, K, u, y, x0):
    Aobs, Bobs, C, D, K = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (Aobs, Bobs, C, D, K))
    x = np.asarray(x0, dtype=float).reshape(-1).copy()
    out = []
    for k in range(y.shape[0]):
        out.append(C @ x + D @ u[k])
        x = Aobs @ x + Bobs @ u[k] + K @ y[k]
    return np.array(out)


def naive_states(A, B, u, x0):
    """State trajectory x(0..N-1) under x(k+1) = A x(k) + B u(k)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    x = np.asarray(x0, dtype=float).reshape(-1).copy()
    states = []
    for k in range(u.shape[0]):
        states.append(x.copy())
        x = A @ x + B @ u[k]
    return np.array(states)


def observability(A, C, s):
    A = np.atleast_2d(A)
    C = np.atleast_2d(C)
    blocks = []
    CA = C.copy()
    for _ in range(s):
        blocks.append(CA.copy())
        CA = CA @ A
    return np.vstack(blocks)


def dense_output_operator(spec: OperatorSpec) -> np.ndarray:
    """Dense matrix of one output's sub-operator, by explicit index loops.

    Maps the per-output block [yhat (N), v (m*s), w (p*(s-1))] to the
    row-major flattening of the s x ncols result.
    """
    s, nc, m, p, N = spec.s, spec.ncols, spec.m, spec.p, spec.N
    d = spec.block_dim
    A = np.zeros((s * nc, d))
    for a in range(s):
        for b in range(nc):
            A[a * nc + b, a + b] += 1.0
    for j in range(m):
        for a in range(s):
            for b in range(nc):
                for q in range(a + 1):
                    A[a * nc + b, N + j * s + (a - q)] += spec.V[j][q, b]
    for j in range(p):
        for a in range(s):
            for b in range(nc):
                for q in range(a):
                    A[a * nc + b, N + m * s + j * (s - 1) + (a - q - 1)] += spec.W[j][q, b]
    return A


def probe_M(spec: OperatorSpec) -> np.ndarray:
    """Coefficient-matrix oracle: adjoint(operator(e_k)) for every basis vector."""
    d = spec.block_dim
    M = np.empty((d, d))
    for k in range(d):
        X = np.zeros((spec.p, d))
        X[0, k] = 1.0
        x = DecisionVector.from_output_stack(X, spec.N, spec.m, spec.s)
        M[:, k] = apply_adjoint(apply_operator(x, spec), spec).output_stack()[0]
    return M


def probe_full_M(spec: OperatorSpec) -> np.ndarray:
    """Full coefficient matrix over all p output blocks (probed)."""
    d = spec.block_dim
    M = np.empty((spec.p * d, spec.p * d))
    for i in range(spec.p):
        for k in range(d):
            X = np.zeros((spec.p, d))
            X[i, k] = 1.0
            x = DecisionVector.from_output_stack(X, spec.N, spec.m, spec.s)
            M[:, i * d + k] = apply_adjoint(apply_operator(x, spec), spec).output_stack().ravel()
    return M


def random_spec(rng: np.random.Generator, s_lo=2, s_hi=8, n_hi=40) -> OperatorSpec:
    s = int(rng.integers(s_lo, s_hi + 1))
    N = int(rng.integers(s + 2, n_hi + 1))
    p = int(rng.integers(1, 3))
    m = int(rng.integers(1, 3))
    u = rng.standard_normal((N, m))
    y = rng.standard_normal((N, p))
    return OperatorSpec.from_data(u, y, s)


def random_decision(rng: np.random.Generator, spec: OperatorSpec) -> DecisionVector:
    return DecisionVector(
        yhat=rng.standard_normal((spec.p, spec.N)),
        v=rng.standard_normal((spec.p, spec.m, spec.s)),
        w=rng.standard_normal((spec.p, spec.p, spec.s - 1)),
    )


def make_siso_order2() -> StateSpaceModel:
    """Well-damped second-order SISO test system with a stable observer."""
    return StateSpaceModel(
        A=[[0.7, 0.3], [-0.3, 0.7]],
        B=[[2.0], [1.0]],
        C=[[2.0, -0.8]],
        D=[[0.2]],
        K=[[0.5], [-0.2]],
    )


def prbs(rng: np.random.Generator, N: int, m: int = 1) -> np.ndarray:
    """Random binary +-1 excitation."""
    return rng.integers(0, 2, size=(N, m)) * 2.0 - 1.0


def make_record(model, N, seed, noise_std=0.0, input_kind="prbs"):
    from n2sid.model import generate_innovation_data

    rng = np.random.default_rng(seed)
    if input_kind == "prbs":
        u = prbs(rng, N, model.m)
    elif input_kind == "zero":
        u = np.zeros((N, model.m))
    else:
        u = rng.standard_normal((N, model.m))
    return generate_innovation_data(model, u, noise_std=noise_std, seed=seed + 1)


def output_record(y) -> IoRecord:
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape[0] == 1:
        y = y.T
    return IoRecord(u=np.zeros((y.shape[0], 0)), y=y)

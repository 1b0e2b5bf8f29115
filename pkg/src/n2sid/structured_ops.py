"""Structured-matrix operators behind the identification program.

The convex program optimizes over a predicted-output sequence and the
first-column parameters of two lower-triangular block-Toeplitz matrices.
Collecting those unknowns in x, the linear map

    A(x) = Hankel(yhat) + sum_j Toeplitz(v_j) V_j + sum_j Toeplitz0(w_j) W_j

(with frozen data matrices V_j, W_j built from negated input/output
Hankel matrices) produces the matrix whose nuclear norm is penalized.
This module provides A, its adjoint, and the FFT-based assembly of the
coefficient matrix M representing adj(A(.)) o A(.) on one output block.

All DFT identities used here work at the exact orders N and 2s-1; no
power-of-two padding is applied anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError

__all__ = [
    "circulant",
    "hankel",
    "toeplitz_lower",
    "block_hankel",
    "FourierCache",
    "OperatorSpec",
    "DecisionVector",
    "apply_operator",
    "apply_adjoint",
    "build_M",
]


def circulant(x: np.ndarray) -> np.ndarray:
    """Circulant matrix with first column x; column c is x shifted down c times."""
    x = np.asarray(x, dtype=float).reshape(-1)
    q = x.shape[0]
    if q < 1:
        raise ValueError("circulant needs a nonempty vector")
    idx = (np.arange(q)[:, None] - np.arange(q)[None, :]) % q
    return x[idx]


def hankel(x: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Hankel matrix H[a, b] = x[a + b] from a vector of length rows + cols - 1."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != rows + cols - 1:
        raise ValueError(f"vector length {x.shape[0]} != rows + cols - 1 = {rows + cols - 1}")
    return x[np.arange(rows)[:, None] + np.arange(cols)[None, :]]


def toeplitz_lower(first_col: np.ndarray, s: int) -> np.ndarray:
    """Lower-triangular s x s Toeplitz matrix.

    A first column of length s fills the diagonal and below; length s - 1
    fills strictly below the diagonal (zero diagonal).
    """
    c = np.asarray(first_col, dtype=float).reshape(-1)
    if c.shape[0] == s:
        full = c
    elif c.shape[0] == s - 1:
        full = np.concatenate([[0.0], c])
    else:
        raise ValueError(f"first column must have length {s} or {s - 1}, got {c.shape[0]}")
    T = np.zeros((s, s))
    for d in range(s):
        idx = np.arange(s - d)
        T[idx + d, idx] = full[d]
    return T


def block_hankel(series: np.ndarray, s: int) -> np.ndarray:
    """Block-Hankel matrix with s block rows from an (N, q) sample array.

    Column c stacks samples c, c+1, ..., c+s-1 (one q-vector per block
    entry); the result has shape (q*s, N - s + 1).
    """
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    N, q = series.shape
    if N <= s:
        raise ValueError(f"need more than s={s} samples, got {N}")
    ncols = N - s + 1
    out = np.empty((q * s, ncols))
    for r in range(s):
        out[r * q : (r + 1) * q, :] = series[r : r + ncols].T
    return out


@dataclass(frozen=True)
class FourierCache:
    """DFT bookkeeping for the (rows x cols) Hankel factorization.

    The factorization works at order = rows + cols - 1 and selects DFT
    columns g_cols (the flipped leading block) and h_cols (the trailing
    block).  forward/inverse are plain mixed-radix transforms at that
    exact order.
    """

    rows: int
    cols: int
    g_cols: np.ndarray = field(init=False)
    h_cols: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "g_cols", np.arange(self.cols - 1, -1, -1))
        object.__setattr__(self, "h_cols", np.arange(self.cols - 1, self.cols - 1 + self.rows))

    @property
    def order(self) -> int:
        return self.rows + self.cols - 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.fft.fft(x, axis=0)

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return np.fft.ifft(x, axis=0)

    def dft_matrix(self) -> np.ndarray:
        return np.fft.fft(np.eye(self.order), axis=0)

    # Products with the selected column blocks, evaluated by FFT on
    # scattered inputs instead of materializing the DFT matrix.
    def mul_G(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(Z)
        pad = np.zeros((self.order, Z.shape[1]), dtype=complex)
        pad[: self.cols] = Z[::-1]
        return np.fft.fft(pad, axis=0)

    def mul_H(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(Z)
        pad = np.zeros((self.order, Z.shape[1]), dtype=complex)
        pad[self.cols - 1 : self.cols - 1 + self.rows] = Z
        return np.fft.fft(pad, axis=0)

    def mul_Fh(self, Z: np.ndarray) -> np.ndarray:
        return self.order * np.fft.ifft(Z, axis=0)


def _is_hankel(a: np.ndarray) -> bool:
    if min(a.shape) < 2:
        return True
    return bool(np.array_equal(a[1:, :-1], a[:-1, 1:]))


@dataclass(frozen=True)
class OperatorSpec:
    """Dimensions plus the frozen data matrices defining the linear map.

    V holds one s x ncols matrix per input channel (the negated input
    Hankel matrices), W one per output channel (negated output Hankel
    matrices), with ncols = N - s + 1.
    """

    N: int
    s: int
    p: int
    m: int
    V: tuple
    W: tuple

    def __post_init__(self):
        if self.s < 2:
            raise ValueError("window s must be at least 2")
        if self.N <= self.s:
            raise ValueError(f"need N > s, got N={self.N}, s={self.s}")
        if len(self.V) != self.m or len(self.W) != self.p:
            raise ValueError("V/W channel counts do not match m/p")
        V = tuple(np.asarray(v, dtype=float) for v in self.V)
        W = tuple(np.asarray(w, dtype=float) for w in self.W)
        for name, mats in (("V", V), ("W", W)):
            for j, a in enumerate(mats):
                if a.shape != (self.s, self.ncols):
                    raise ValueError(
                        f"{name}[{j}] has shape {a.shape}, expected {(self.s, self.ncols)}"
                    )
                if not _is_hankel(a):
                    raise ValueError(f"{name}[{j}] violates the Hankel pattern")
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "W", W)

    @property
    def ncols(self) -> int:
        return self.N - self.s + 1

    @property
    def block_dim(self) -> int:
        """Length of one output's decision block: N + m*s + p*(s-1)."""
        return self.N + self.m * self.s + self.p * (self.s - 1)

    @classmethod
    def from_data(cls, u: np.ndarray, y: np.ndarray, s: int) -> "OperatorSpec":
        """Build the spec from raw input/output samples ((N, m) and (N, p))."""
        u = np.asarray(u, dtype=float)
        y = np.asarray(y, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if u.shape[0] != y.shape[0]:
            raise ValueError("u and y must have the same number of samples")
        N = y.shape[0]
        ncols = N - s + 1
        V = tuple(-hankel(u[:, j], s, ncols) for j in range(u.shape[1]))
        W = tuple(-hankel(y[:, j], s, ncols) for j in range(y.shape[1]))
        return cls(N=N, s=s, p=y.shape[1], m=u.shape[1], V=V, W=W)


@dataclass(frozen=True)
class DecisionVector:
    """Unknowns of the convex program, grouped per output.

    yhat[i] is output i's predicted sequence (length N); v[i, j] the s
    first-column entries of the Toeplitz block coupling output i to
    input j; w[i, j] the s-1 strictly-lower entries coupling output i to
    output j.  The flat layout is all yhat rows, then all v blocks
    (grouped by output, then channel), then all w blocks likewise.
    """

    yhat: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        yhat = np.atleast_2d(np.asarray(self.yhat, dtype=float))
        v = np.asarray(self.v, dtype=float)
        w = np.asarray(self.w, dtype=float)
        p = yhat.shape[0]
        if v.ndim != 3 or v.shape[0] != p:
            raise ValueError(f"v must have shape (p, m, s) with p={p}, got {v.shape}")
        if w.ndim != 3 or w.shape[:2] != (p, p):
            raise ValueError(f"w must have shape (p, p, s-1) with p={p}, got {w.shape}")
        object.__setattr__(self, "yhat", yhat)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)

    @property
    def p(self) -> int:
        return self.yhat.shape[0]

    @property
    def N(self) -> int:
        return self.yhat.shape[1]

    @classmethod
    def zeros(cls, spec: OperatorSpec) -> "DecisionVector":
        return cls(
            yhat=np.zeros((spec.p, spec.N)),
            v=np.zeros((spec.p, spec.m, spec.s)),
            w=np.zeros((spec.p, spec.p, spec.s - 1)),
        )

    def to_vector(self) -> np.ndarray:
        """Flatten to the documented global stacking order."""
        return np.concatenate([self.yhat.ravel(), self.v.ravel(), self.w.ravel()])

    @classmethod
    def from_vector(cls, vec: np.ndarray, N: int, p: int, m: int, s: int) -> "DecisionVector":
        vec = np.asarray(vec, dtype=float).reshape(-1)
        sizes = (p * N, p * m * s, p * p * (s - 1))
        if vec.shape[0] != sum(sizes):
            raise ValueError(f"vector length {vec.shape[0]} != {sum(sizes)}")
        y_part = vec[: sizes[0]].reshape(p, N)
        v_part = vec[sizes[0] : sizes[0] + sizes[1]].reshape(p, m, s)
        w_part = vec[sizes[0] + sizes[1] :].reshape(p, p, s - 1)
        return cls(yhat=y_part, v=v_part, w=w_part)

    def output_stack(self) -> np.ndarray:
        """Per-output layout: row i is [yhat_i, v_i (by channel), w_i]."""
        p = self.p
        return np.concatenate(
            [self.yhat, self.v.reshape(p, -1), self.w.reshape(p, -1)], axis=1
        )

    @classmethod
    def from_output_stack(
        cls, X: np.ndarray, N: int, m: int, s: int
    ) -> "DecisionVector":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        p = X.shape[0]
        if X.shape[1] != N + m * s + p * (s - 1):
            raise ValueError("per-output stack has wrong width")
        return cls(
            yhat=X[:, :N],
            v=X[:, N : N + m * s].reshape(p, m, s),
            w=X[:, N + m * s :].reshape(p, p, s - 1),
        )


def _check_compat(x: DecisionVector, spec: OperatorSpec) -> None:
    if x.yhat.shape != (spec.p, spec.N) or x.v.shape != (spec.p, spec.m, spec.s) or x.w.shape != (
        spec.p,
        spec.p,
        spec.s - 1,
    ):
        raise ValueError("decision vector shapes do not match the operator spec")


def apply_operator(x: DecisionVector, spec: OperatorSpec) -> np.ndarray:
    """Evaluate the linear map on x; result is (p*s) x ncols.

    Output rows are interleaved: block row r stacks all p outputs at
    window offset r, matching the block-Hankel layout of the data.
    """
    _check_compat(x, spec)
    s, ncols, p, m = spec.s, spec.ncols, spec.p, spec.m
    out = np.zeros((p * s, ncols))
    for i in range(p):
        Ai = hankel(x.yhat[i], s, ncols)
        for j in range(m):
            Ai += toeplitz_lower(x.v[i, j], s) @ spec.V[j]
        for j in range(p):
            Ai += toeplitz_lower(x.w[i, j], s) @ spec.W[j]
        out[i::p] = Ai
    return out


def _antidiag_sums(Z: np.ndarray) -> np.ndarray:
    rows, cols = Z.shape
    idx = (np.arange(rows)[:, None] + np.arange(cols)[None, :]).ravel()
    return np.bincount(idx, weights=Z.ravel(), minlength=rows + cols - 1)


def _lower_diag_sums(Y: np.ndarray, start: int, count: int) -> np.ndarray:
    return np.array([np.trace(Y, offset=-(start + d)) for d in range(count)])


def apply_adjoint(Z: np.ndarray, spec: OperatorSpec) -> DecisionVector:
    """Adjoint of apply_operator: <A(x), Z> == <x, adjoint(Z)> for all x."""
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (spec.p * spec.s, spec.ncols):
        raise ValueError(f"Z has shape {Z.shape}, expected {(spec.p * spec.s, spec.ncols)}")
    s, p, m = spec.s, spec.p, spec.m
    yhat = np.empty((p, spec.N))
    v = np.empty((p, m, s))
    w = np.empty((p, p, s - 1))
    for i in range(p):
        Zi = Z[i::p]
        yhat[i] = _antidiag_sums(Zi)
        for j in range(m):
            v[i, j] = _lower_diag_sums(Zi @ spec.V[j].T, 0, s)
        for j in range(p):
            w[i, j] = _lower_diag_sums(Zi @ spec.W[j].T, 1, s - 1)
    return DecisionVector(yhat=yhat, v=v, w=w)


def build_M(spec: OperatorSpec) -> np.ndarray:
    """Assemble the per-output coefficient matrix M of adj(A(.)) o A(.).

    All p output blocks of the full coefficient matrix are identical, so
    a single block of side N + m*s + p*(s-1) is returned.  Every block
    is formed from Hadamard products of small DFT-domain factors: the
    predicted-output coupling uses order-N transforms, the Toeplitz
    couplings order 2s-1.  Intermediates are complex; the result is the
    real part after checking that the imaginary residue is negligible.
    """
    N, s, ncols, p, m = spec.N, spec.s, spec.ncols, spec.p, spec.m
    kappa = 2 * s - 1
    d = spec.block_dim

    fc = FourierCache(rows=s, cols=ncols)
    F_k = np.fft.fft(np.eye(kappa), axis=0)
    Phi = F_k[:, :s]
    Psi = F_k[:, 1:s]
    CC = np.conj(Phi @ Phi.T)

    Pv = [Phi @ Vj for Vj in spec.V]
    Pw = [Phi @ Wj for Wj in spec.W]

    M = np.zeros((d, d), dtype=complex)

    # Output-output block: the two order-N Gram factors are circulant, so
    # their Hadamard product conjugated back by the DFT is a diagonal.
    ind_h = np.zeros(N)
    ind_h[fc.h_cols] = 1.0
    ind_g = np.zeros(N)
    ind_g[fc.g_cols] = 1.0
    col0 = np.fft.fft(ind_h) * np.conj(np.fft.fft(ind_g))
    diag_rev = np.fft.fft(col0)
    M[np.arange(N), np.arange(N)] = np.roll(diag_rev[::-1], 1) / N

    HPhiH = fc.mul_H(Phi.conj().T)  # N x kappa

    def cross_block(P: np.ndarray, trailing: np.ndarray) -> np.ndarray:
        # conj(G) @ P.T computed as conj(G @ conj(P.T))
        B = np.conj(fc.mul_G(np.conj(P.T)))
        return fc.mul_Fh(HPhiH * B) @ trailing / (N * kappa)

    def vs(j: int) -> slice:
        return slice(N + j * s, N + (j + 1) * s)

    def ws(j: int) -> slice:
        base = N + m * s
        return slice(base + j * (s - 1), base + (j + 1) * (s - 1))

    for j in range(m):
        blk = cross_block(Pv[j], Phi)
        M[:N, vs(j)] = blk
        M[vs(j), :N] = blk.T
    for j in range(p):
        blk = cross_block(Pw[j], Psi)
        M[:N, ws(j)] = blk
        M[ws(j), :N] = blk.T

    scale = 1.0 / kappa**2
    for j in range(m):
        for k in range(m):
            M[vs(j), vs(k)] = scale * (Phi.T @ ((Pv[j] @ Pv[k].T) * CC) @ Phi)
        for k in range(p):
            blk = scale * (Phi.T @ ((Pv[j] @ Pw[k].T) * CC) @ Psi)
            M[vs(j), ws(k)] = blk
            M[ws(k), vs(j)] = blk.T
    for j in range(p):
        for k in range(p):
            M[ws(j), ws(k)] = scale * (Psi.T @ ((Pw[j] @ Pw[k].T) * CC) @ Psi)

    real = M.real
    residue = float(np.abs(M.imag).max())
    if residue > 1e-9 * (1.0 + float(np.abs(real).max())):
        raise ConsistencyError(f"imaginary residue {residue:.3e} in coefficient matrix")
    return (real + real.T) / 2.0

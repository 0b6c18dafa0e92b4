"""Quadratic stage cost with block-sparse state weight."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .errors import NotPositiveDefiniteError, StructuralError, ValidationError

DENSE_EIG_LIMIT = 2000
EIG_TOL = 1e-12
PD_TOL = 1e-12


@dataclass(frozen=True)
class SpectralBounds:
    """``mu * |x|^2 <= x'Qx``, ``|Qx| <= m_q |x|``, ``|Ru| <= m_r |u|``."""

    mu: float
    m_q: float
    m_r: float

    def __post_init__(self):
        if not (0.0 < self.mu <= self.m_q * (1 + 1e-12)) or self.m_r <= 0.0:
            raise ValidationError(f"inconsistent spectral bounds {self}")


def _offsets(dims: Sequence[int]) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(dims)]).astype(int)


@dataclass(frozen=True, eq=False)
class QuadraticCost:
    """Stage cost ``x'Qx + u'Ru`` on ``s`` subsystems.

    ``q_blocks`` maps 1-based ``(i, j)`` to the dense ``n_i x n_j`` block;
    absent keys are zero blocks. ``r_blocks[k - 1]`` is ``R_k``.
    """

    state_dims: tuple[int, ...]
    control_dims: tuple[int, ...]
    q_blocks: Mapping[tuple[int, int], np.ndarray]
    r_blocks: tuple[np.ndarray, ...]
    _bounds_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        s = len(self.state_dims)
        if s < 1 or len(self.control_dims) != s or len(self.r_blocks) != s:
            raise StructuralError("state_dims, control_dims and r_blocks must all have length s")
        if any(d < 1 for d in self.state_dims) or any(d < 0 for d in self.control_dims):
            raise StructuralError("invalid block dimensions")
        blocks = {}
        for (i, j), blk in self.q_blocks.items():
            if not (1 <= i <= s and 1 <= j <= s):
                raise StructuralError(f"block index ({i},{j}) outside 1..{s}")
            blk = np.array(blk, dtype=float, copy=True)
            if blk.shape != (self.state_dims[i - 1], self.state_dims[j - 1]):
                raise StructuralError(
                    f"block Q[{i},{j}] has shape {blk.shape}, expected "
                    f"{(self.state_dims[i - 1], self.state_dims[j - 1])}"
                )
            blk.setflags(write=False)
            blocks[(i, j)] = blk
        object.__setattr__(self, "q_blocks", blocks)
        rs = []
        for k, rk in enumerate(self.r_blocks, start=1):
            rk = np.array(rk, dtype=float, copy=True).reshape(self.control_dims[k - 1], self.control_dims[k - 1])
            if not np.allclose(rk, rk.T, atol=1e-12 * max(1.0, np.max(np.abs(rk), initial=0.0))):
                raise ValidationError(f"R_{k} not symmetric")
            if rk.size and np.linalg.eigvalsh(rk)[0] <= 0.0:
                raise ValidationError(f"R_{k} not positive definite")
            rk.setflags(write=False)
            rs.append(rk)
        object.__setattr__(self, "r_blocks", tuple(rs))
        q = self.dense_q
        if not np.allclose(q, q.T, rtol=0.0, atol=1e-10 * max(1.0, self.max_abs_q())):
            raise ValidationError("Q is not symmetric")

    @classmethod
    def from_dense(cls, q, r, state_dims: Sequence[int], control_dims: Sequence[int]) -> "QuadraticCost":
        """Split dense ``Q`` and block-diagonal ``R`` into per-node blocks."""
        q = np.asarray(q, dtype=float)
        r = np.asarray(r, dtype=float)
        xo, uo = _offsets(state_dims), _offsets(control_dims)
        if q.shape != (xo[-1], xo[-1]) or r.shape != (uo[-1], uo[-1]):
            raise StructuralError(f"Q shape {q.shape} / R shape {r.shape} do not match block dims")
        s = len(state_dims)
        blocks = {}
        for i in range(s):
            for j in range(s):
                blk = q[xo[i]:xo[i + 1], xo[j]:xo[j + 1]]
                if np.any(blk != 0.0):
                    blocks[(i + 1, j + 1)] = blk
        r_blocks = []
        for k in range(s):
            r_blocks.append(r[uo[k]:uo[k + 1], uo[k]:uo[k + 1]])
        off = r.copy()
        for k in range(s):
            off[uo[k]:uo[k + 1], uo[k]:uo[k + 1]] = 0.0
        if np.any(off != 0.0):
            raise StructuralError("R must be block diagonal")
        return cls(tuple(state_dims), tuple(control_dims), blocks, tuple(r_blocks))

    @property
    def node_count(self) -> int:
        return len(self.state_dims)

    @property
    def state_dim(self) -> int:
        return int(sum(self.state_dims))

    @property
    def control_dim(self) -> int:
        return int(sum(self.control_dims))

    @cached_property
    def state_offsets(self) -> np.ndarray:
        return _offsets(self.state_dims)

    @cached_property
    def control_offsets(self) -> np.ndarray:
        return _offsets(self.control_dims)

    def q_block(self, i: int, j: int) -> np.ndarray:
        blk = self.q_blocks.get((i, j))
        if blk is None:
            return np.zeros((self.state_dims[i - 1], self.state_dims[j - 1]))
        return blk

    def max_abs_q(self) -> float:
        return max((float(np.max(np.abs(b), initial=0.0)) for b in self.q_blocks.values()), default=0.0)

    @cached_property
    def dense_q(self) -> np.ndarray:
        xo = self.state_offsets
        q = np.zeros((xo[-1], xo[-1]))
        for (i, j), blk in self.q_blocks.items():
            q[xo[i - 1]:xo[i], xo[j - 1]:xo[j]] = blk
        q.setflags(write=False)
        return q

    @cached_property
    def dense_r(self) -> np.ndarray:
        uo = self.control_offsets
        r = np.zeros((uo[-1], uo[-1]))
        for k, rk in enumerate(self.r_blocks):
            r[uo[k]:uo[k + 1], uo[k]:uo[k + 1]] = rk
        r.setflags(write=False)
        return r

    def state_slice(self, i: int) -> slice:
        return slice(int(self.state_offsets[i - 1]), int(self.state_offsets[i]))

    def control_slice(self, i: int) -> slice:
        return slice(int(self.control_offsets[i - 1]), int(self.control_offsets[i]))

    def state_indices(self, nodes) -> np.ndarray:
        """Positions of the listed nodes' states in the aggregated vector."""
        return np.concatenate([np.arange(self.state_offsets[i - 1], self.state_offsets[i]) for i in nodes]
                              or [np.zeros(0, dtype=int)]).astype(int)

    def control_indices(self, nodes) -> np.ndarray:
        return np.concatenate([np.arange(self.control_offsets[i - 1], self.control_offsets[i]) for i in nodes]
                              or [np.zeros(0, dtype=int)]).astype(int)


def stage_cost(c: QuadraticCost, x, u) -> float:
    """``x'Qx + u'Ru`` summed over the stored blocks only."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (c.state_dim,) or u.shape != (c.control_dim,):
        raise StructuralError(f"expected x of length {c.state_dim} and u of length {c.control_dim}")
    total = 0.0
    for (i, j), blk in c.q_blocks.items():
        total += x[c.state_slice(i)] @ blk @ x[c.state_slice(j)]
    for k, rk in enumerate(c.r_blocks, start=1):
        uk = u[c.control_slice(k)]
        total += uk @ rk @ uk
    return float(total)


def build_chain_cost(s: int, gamma: float, delta: float) -> QuadraticCost:
    """Vehicle-chain weights.

    Positions carry ``y_i^2 + sum (y_{i+1} - y_i)^2``: diagonal 3 inside the
    chain, 2 at both ends, -1 between neighbours. Velocities carry ``gamma``,
    controls ``delta``.
    """
    if s < 2:
        raise ValidationError("a vehicle chain needs s >= 2")
    if gamma <= 0 or delta <= 0:
        raise ValidationError("gamma and delta must be positive")
    blocks = {}
    for i in range(1, s + 1):
        pos = 2.0 if i in (1, s) else 3.0
        blocks[(i, i)] = np.diag([pos, gamma])
        if i < s:
            coupling = np.array([[-1.0, 0.0], [0.0, 0.0]])
            blocks[(i, i + 1)] = coupling
            blocks[(i + 1, i)] = coupling
    return QuadraticCost((2,) * s, (1,) * s, blocks, tuple(np.array([[delta]]) for _ in range(s)))


def _sparse_extremes(qs) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a sparse symmetric matrix."""
    from scipy.sparse.linalg import eigsh

    v0 = np.random.default_rng(0).standard_normal(qs.shape[0])
    hi = float(eigsh(qs, k=1, which="LA", v0=v0, tol=EIG_TOL, return_eigenvectors=False)[0])
    try:
        lo = float(eigsh(qs.tocsc(), k=1, sigma=0.0, which="LM", v0=v0, tol=EIG_TOL,
                         return_eigenvectors=False)[0])
    except RuntimeError:  # singular factorisation at the shift
        lo = 0.0
    return lo, hi


def spectral_bounds(c: QuadraticCost) -> SpectralBounds:
    """Certified ``(mu, M_Q, M_R)`` for the Euclidean block norm.

    Raises:
        NotPositiveDefiniteError: if the smallest eigenvalue of ``Q`` is not
            positive.
    """
    cached = c._bounds_cache.get("bounds")
    if cached is not None:
        return cached
    n = c.state_dim
    if n <= DENSE_EIG_LIMIT:
        ev = np.linalg.eigvalsh(c.dense_q)
        lo, hi = float(ev[0]), float(ev[-1])
    else:
        from scipy import sparse

        xo = c.state_offsets
        rows, cols, vals = [], [], []
        for (i, j), blk in c.q_blocks.items():
            r, cc = np.nonzero(blk)
            rows.append(r + xo[i - 1])
            cols.append(cc + xo[j - 1])
            vals.append(blk[r, cc])
        qs = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        lo, hi = _sparse_extremes(qs)
    if lo <= PD_TOL * max(1.0, abs(hi)):
        raise NotPositiveDefiniteError(f"Q is not positive definite (smallest eigenvalue {lo:.3e})")
    m_r = max(float(np.linalg.eigvalsh(rk)[-1]) for rk in c.r_blocks if rk.size)
    sb = SpectralBounds(mu=lo, m_q=hi, m_r=m_r)
    c._bounds_cache["bounds"] = sb
    return sb


def restrict_cost(c: QuadraticCost, nodes) -> QuadraticCost:
    """Cost on the listed nodes only (renumbered ``1..len(nodes)`` in the given order)."""
    nodes = list(nodes)
    pos = {node: k for k, node in enumerate(nodes, start=1)}
    blocks = {(pos[i], pos[j]): b for (i, j), b in c.q_blocks.items() if i in pos and j in pos}
    return QuadraticCost(tuple(c.state_dims[i - 1] for i in nodes), tuple(c.control_dims[i - 1] for i in nodes),
                         blocks, tuple(c.r_blocks[i - 1] for i in nodes))

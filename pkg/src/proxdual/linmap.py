"""Affine-constraint operators ``A`` with exact adjoints.

Four variants cover the constraint families used by the solvers:

* ``DenseRows``  -- an explicit m x n matrix acting on vectors,
* ``EntryMask``  -- extraction of selected entries of a (symmetric) matrix,
* ``SingleSum``  -- the all-ones row ``e^T``,
* ``Stack``      -- ``[A_1, A_2, ...]`` acting on a tuple of variables.

Symmetric matrix variables are stored full.  For a symmetric ``EntryMask`` the
adjoint scatters ``w_k`` into both ``(i, j)`` and ``(j, i)``, so the forward map
returns ``X[i, j] + X[j, i]`` for off-diagonal entries; that keeps
``<A X, w> = <X, A^* w>`` exact under the Frobenius inner product.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, eigsh

__all__ = [
    "DimensionError",
    "LinearMap",
    "DenseRows",
    "EntryMask",
    "SingleSum",
    "Stack",
    "apply",
    "adjoint",
    "gram_min_eig",
]

DENSE_EIG_CAP = 5000


class DimensionError(ValueError):
    """Raised when an argument does not have the shape an operator expects."""


class LinearMap:
    """Base class.  Subclasses implement ``_apply`` and ``_adjoint``."""

    input_shape: tuple
    output_dim: int

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != self.input_shape:
            raise DimensionError(f"expected input of shape {self.input_shape}, got {x.shape}")
        return self._apply(x)

    def adjoint(self, w):
        w = np.atleast_1d(np.asarray(w, dtype=float))
        if w.shape != (self.output_dim,):
            raise DimensionError(f"expected vector of length {self.output_dim}, got shape {w.shape}")
        return self._adjoint(w)

    __call__ = apply

    def as_matrix(self):
        """Materialize ``A`` as an ``m x prod(input_shape)`` (possibly sparse) matrix."""
        cols = int(np.prod(self.input_shape))
        rows = [self._adjoint(e).ravel() for e in np.eye(self.output_dim)]
        return np.array(rows).reshape(self.output_dim, cols)

    @cached_property
    def gram(self) -> np.ndarray:
        """Dense ``A A^*`` as an m x m array."""
        M = self.as_matrix()
        G = M @ M.T
        if sp.issparse(G):
            G = G.toarray()
        return np.asarray(G, dtype=float)

    def gram_action(self, y):
        return self._apply(self._adjoint(np.asarray(y, dtype=float)))

    def to_dict(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_dict(d: dict) -> "LinearMap":
        kind = d["kind"]
        if kind == "dense_rows":
            return DenseRows(np.asarray(d["matrix"], dtype=float))
        if kind == "entry_mask":
            return EntryMask(tuple(d["shape"]), [tuple(e) for e in d["entries"]], d["symmetric"])
        if kind == "single_sum":
            return SingleSum(int(d["n"]))
        if kind == "stack":
            return Stack([LinearMap.from_dict(b) for b in d["blocks"]])
        raise ValueError(f"unknown linear map kind {kind!r}")


class DenseRows(LinearMap):
    def __init__(self, matrix):
        M = np.array(matrix, dtype=float, ndmin=2)
        if M.ndim != 2:
            raise DimensionError("DenseRows needs a 2-d matrix")
        self.matrix = M
        self.output_dim, n = M.shape
        self.input_shape = (n,)

    def _apply(self, x):
        return self.matrix @ x

    def _adjoint(self, w):
        return self.matrix.T @ w

    def as_matrix(self):
        return self.matrix

    def to_dict(self):
        return {"kind": "dense_rows", "matrix": self.matrix.tolist()}

    def __repr__(self):
        return f"DenseRows(m={self.output_dim}, n={self.input_shape[0]})"


class EntryMask(LinearMap):
    """Extract ``X[i_k, j_k]`` for an ordered list of index pairs.

    With ``symmetric=True`` the pairs ``(i, j)`` and ``(j, i)`` are one entry;
    off-diagonal rows then read ``X[i, j] + X[j, i]``.
    """

    def __init__(self, shape, entries, symmetric: bool = False):
        shape = tuple(int(s) for s in shape)
        if len(shape) != 2:
            raise DimensionError("EntryMask acts on matrices")
        if symmetric and shape[0] != shape[1]:
            raise DimensionError("symmetric EntryMask needs a square shape")
        idx = np.array(entries, dtype=np.intp).reshape(-1, 2)
        if idx.size and (idx.min() < 0 or (idx[:, 0] >= shape[0]).any() or (idx[:, 1] >= shape[1]).any()):
            raise DimensionError("entry index out of range")
        self.input_shape = shape
        self.output_dim = len(idx)
        self.symmetric = bool(symmetric)
        self.rows = idx[:, 0].copy()
        self.cols = idx[:, 1].copy()
        self.offdiag = (self.rows != self.cols) if symmetric else np.zeros(len(idx), dtype=bool)

    @classmethod
    def diagonal(cls, n: int, symmetric: bool = False):
        return cls((n, n), [(i, i) for i in range(n)], symmetric)

    def _apply(self, x):
        out = x[self.rows, self.cols].copy()
        off = self.offdiag
        out[off] += x[self.cols[off], self.rows[off]]
        return out

    def _adjoint(self, w):
        X = np.zeros(self.input_shape)
        np.add.at(X, (self.rows, self.cols), w)
        off = self.offdiag
        np.add.at(X, (self.cols[off], self.rows[off]), w[off])
        return X

    def as_matrix(self):
        n1 = self.input_shape[1]
        k = np.arange(self.output_dim)
        off = self.offdiag
        ri = np.concatenate([k, k[off]])
        ci = np.concatenate([self.rows * n1 + self.cols, self.cols[off] * n1 + self.rows[off]])
        return sp.csr_matrix(
            (np.ones(len(ri)), (ri, ci)), shape=(self.output_dim, int(np.prod(self.input_shape)))
        )

    def to_dict(self):
        return {
            "kind": "entry_mask",
            "shape": list(self.input_shape),
            "entries": np.stack([self.rows, self.cols], axis=1).tolist(),
            "symmetric": self.symmetric,
        }

    def __repr__(self):
        return f"EntryMask(shape={self.input_shape}, m={self.output_dim}, symmetric={self.symmetric})"


class SingleSum(LinearMap):
    def __init__(self, n: int):
        self.input_shape = (int(n),)
        self.output_dim = 1

    def _apply(self, x):
        return np.array([x.sum()])

    def _adjoint(self, w):
        return np.full(self.input_shape, w[0])

    def as_matrix(self):
        return np.ones((1, self.input_shape[0]))

    def to_dict(self):
        return {"kind": "single_sum", "n": self.input_shape[0]}

    def __repr__(self):
        return f"SingleSum(n={self.input_shape[0]})"


class Stack(LinearMap):
    """``[A_1, ..., A_p]`` applied to ``(x_1, ..., x_p)`` as ``sum_i A_i x_i``."""

    def __init__(self, blocks):
        blocks = list(blocks)
        if not blocks:
            raise ValueError("Stack needs at least one block")
        m = {b.output_dim for b in blocks}
        if len(m) != 1:
            raise DimensionError("all stacked blocks must share the output dimension")
        self.blocks = blocks
        self.output_dim = m.pop()
        self.input_shape = tuple(b.input_shape for b in blocks)

    def apply(self, x):
        if len(x) != len(self.blocks):
            raise DimensionError(f"expected a tuple of {len(self.blocks)} variables")
        return sum(b.apply(xi) for b, xi in zip(self.blocks, x))

    __call__ = apply

    def _adjoint(self, w):
        return tuple(b._adjoint(w) for b in self.blocks)

    def gram_action(self, y):
        return sum(b.gram_action(y) for b in self.blocks)

    def as_matrix(self):
        mats = [b.as_matrix() for b in self.blocks]
        if any(sp.issparse(M) for M in mats):
            return sp.hstack([sp.csr_matrix(M) for M in mats]).tocsr()
        return np.hstack(mats)

    def to_dict(self):
        return {"kind": "stack", "blocks": [b.to_dict() for b in self.blocks]}

    def __repr__(self):
        return f"Stack({self.blocks!r})"


def apply(linmap: LinearMap, x):
    return linmap.apply(x)


def adjoint(linmap: LinearMap, w):
    return linmap.adjoint(w)


def gram_min_eig(linmap: LinearMap, cap: int = DENSE_EIG_CAP) -> float:
    """Smallest eigenvalue of ``A A^*``; Lanczos above ``cap`` constraints."""
    m = linmap.output_dim
    if m <= cap:
        return float(np.linalg.eigvalsh(linmap.gram)[0])
    op = LinearOperator((m, m), matvec=linmap.gram_action, dtype=float)
    return float(eigsh(op, k=1, which="SA", return_eigenvectors=False)[0])


def gram_max_eig(linmap: LinearMap, cap: int = DENSE_EIG_CAP) -> float:
    m = linmap.output_dim
    if m <= cap:
        return float(np.linalg.eigvalsh(linmap.gram)[-1])
    op = LinearOperator((m, m), matvec=linmap.gram_action, dtype=float)
    return float(eigsh(op, k=1, which="LA", return_eigenvectors=False)[0])

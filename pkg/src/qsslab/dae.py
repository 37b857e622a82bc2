"""Global residual and Jacobian assembly with block views.

Blocks follow the row/column naming ``D_<col>_<row>``: for example ``D_x_g``
is the derivative of the algebraic residuals with respect to the fast states.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import EvaluationError, SingularityError, StructureError
from .state import PartitionedState

SINGULAR_RCOND = 1e-10


def _unpack(system, state):
    if isinstance(state, PartitionedState):
        try:
            state.check(system.layout)
        except StructureError:
            raise
        return state.w, np.asarray(state.zd, dtype=float), state
    w, zd = state
    w = np.asarray(w, dtype=float)
    zd = np.asarray(zd, dtype=float)
    system.check_size(w, zd)
    return w, zd, PartitionedState.from_w(system.layout, w, zd)


@dataclass(frozen=True)
class ResidualVector:
    h_c_part: np.ndarray
    f_part: np.ndarray
    g_part: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.h_c_part, self.f_part, self.g_part])

    @staticmethod
    def _inf(v):
        return float(np.max(np.abs(v))) if v.size else 0.0

    @property
    def norms(self) -> dict:
        return {"h_c": self._inf(self.h_c_part), "f": self._inf(self.f_part), "g": self._inf(self.g_part)}

    @property
    def max_norm(self) -> float:
        return max(self.norms.values())


def assemble_residuals(system, state) -> ResidualVector:
    """Evaluate ``(h_c, f, g)`` at ``state`` (a PartitionedState or ``(w, zd)``)."""
    w, zd, _ = _unpack(system, state)
    r = system.residual(w, zd)
    bad = np.flatnonzero(~np.isfinite(r))
    if bad.size:
        name = system.layout.w_names[bad[0]]
        raise EvaluationError(f"non-finite residual in the row of {name}", variable=name)
    lay = system.layout
    return ResidualVector(h_c_part=r[lay.zc_slice], f_part=r[lay.x_slice], g_part=r[lay.y_slice])


@dataclass(frozen=True)
class JacobianBundle:
    """Full Jacobian of ``(h_c, f, g)`` with respect to ``(zc, x, y)``."""

    matrix: np.ndarray
    nz: int
    nx: int
    ny: int
    point: PartitionedState | None = None

    def _block(self, rows, cols):
        s = {"zc": slice(0, self.nz), "x": slice(self.nz, self.nz + self.nx),
             "y": slice(self.nz + self.nx, self.nz + self.nx + self.ny)}
        r = {"h_c": s["zc"], "f": s["x"], "g": s["y"]}[rows]
        return self.matrix[r, s[cols]]

    @property
    def D_x_f(self):
        return self._block("f", "x")

    @property
    def D_y_f(self):
        return self._block("f", "y")

    @property
    def D_x_g(self):
        return self._block("g", "x")

    @property
    def D_y_g(self):
        return self._block("g", "y")

    @property
    def D_zc_f(self):
        return self._block("f", "zc")

    @property
    def D_zc_g(self):
        return self._block("g", "zc")

    @property
    def D_x_hc(self):
        return self._block("h_c", "x")

    @property
    def D_y_hc(self):
        return self._block("h_c", "y")

    @property
    def D_zc_hc(self):
        return self._block("h_c", "zc")

    @property
    def fast_block(self) -> np.ndarray:
        """``[[D_x f, D_y f], [D_x g, D_y g]]``, the constraint-manifold Jacobian."""
        k = self.nz
        return self.matrix[k:, k:]

    def sparse(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.matrix)

    @classmethod
    def from_blocks(cls, D_x_f, D_y_f, D_x_g, D_y_g) -> "JacobianBundle":
        """Bundle with no slow states from the four fast/algebraic blocks."""
        D_x_f = np.atleast_2d(np.asarray(D_x_f, dtype=float))
        D_y_g = np.atleast_2d(np.asarray(D_y_g, dtype=float))
        nx, ny = D_x_f.shape[0], D_y_g.shape[0]
        D_y_f = np.asarray(D_y_f, dtype=float).reshape(nx, ny)
        D_x_g = np.asarray(D_x_g, dtype=float).reshape(ny, nx)
        return cls(matrix=np.block([[D_x_f, D_y_f], [D_x_g, D_y_g]]), nz=0, nx=nx, ny=ny)


def assemble_jacobian(system, state) -> JacobianBundle:
    """Analytic Jacobian at ``state``."""
    w, zd, point = _unpack(system, state)
    J = system.jacobian(w, zd)
    bad = np.argwhere(~np.isfinite(J))
    if bad.size:
        name = system.layout.w_names[bad[0][0]]
        raise EvaluationError(f"non-finite Jacobian entry in the row of {name}", variable=name)
    lay = system.layout
    return JacobianBundle(matrix=J, nz=lay.nz, nx=lay.nx, ny=lay.ny, point=point)


def finite_difference_jacobian(system, state, step: float = 1e-6) -> JacobianBundle:
    """Central-difference Jacobian, one column per variable."""
    if not step > 0:
        raise ValueError("step must be positive")
    w, zd, point = _unpack(system, state)
    n = w.size
    J = np.empty((n, n))
    for j in range(n):
        wp = w.copy()
        wm = w.copy()
        wp[j] += step
        wm[j] -= step
        J[:, j] = (system.residual(wp, zd) - system.residual(wm, zd)) / (2 * step)
    lay = system.layout
    return JacobianBundle(matrix=J, nz=lay.nz, nx=lay.nx, ny=lay.ny, point=point)


def inverse_condition(A) -> float:
    """``sigma_min / sigma_max`` (1 for an empty matrix, 0 for a zero matrix)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 1.0
    s = np.linalg.svd(A, compute_uv=False)
    return float(s[-1] / s[0]) if s[0] > 0 else 0.0


def schur_complement(J: JacobianBundle, rcond: float = SINGULAR_RCOND) -> np.ndarray:
    """``D_x f - D_y f D_y g^{-1} D_x g``.

    Raises :class:`SingularityError` when ``D_y g`` fails the inverse
    condition test.
    """
    if J.ny == 0:
        return np.array(J.D_x_f, copy=True)
    rc = inverse_condition(J.D_y_g)
    if rc < rcond:
        raise SingularityError(f"algebraic block is numerically singular (1/cond = {rc:.3e})",
                               condition=rc)
    return J.D_x_f - J.D_y_f @ np.linalg.solve(J.D_y_g, J.D_x_g)


def write_jacobian_triplets(J: JacobianBundle, path, names=None) -> None:
    """Dump non-zero entries as ``row col value`` lines (debug aid)."""
    rows, cols = np.nonzero(J.matrix)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# n={J.matrix.shape[0]} nz={J.nz} nx={J.nx} ny={J.ny}\n")
        for r, c in zip(rows, cols):
            label = f" {names[r]} {names[c]}" if names is not None else ""
            fh.write(f"{r} {c} {J.matrix[r, c]:.17g}{label}\n")

"""Classification of constraint-manifold points and transient equilibria.

Points of the constraint manifold (``f = 0``, ``g = 0`` at frozen slow
states) are sorted into the stable component, type-k components and the
singular set.  Stability is judged on the reduced matrix
``D_x f - D_y f D_y g^{-1} D_x g`` whenever ``D_y g`` is invertible; the
eigenvalues of the unreduced block are reported alongside.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .dae import SINGULAR_RCOND, JacobianBundle, assemble_jacobian, inverse_condition, schur_complement
from .errors import SingularityError
from .simulators import solve_constraint

EIG_MARGIN = 1e-8
MANIFOLD_TOLERANCE = 1e-6


def _eig_list(v):
    return [[float(np.real(z)), float(np.imag(z))] for z in v]


@dataclass(frozen=True)
class ManifoldClassification:
    """Verdict for one point: ``stable-component``, ``type-k``, ``marginal`` or ``singular``."""

    verdict: str
    k: int
    eigenvalues: np.ndarray
    schur_eigenvalues: np.ndarray | None
    in_gamma_s: bool
    gamma0: bool
    inverse_condition: float

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "k": self.k,
            "in_gamma_s": self.in_gamma_s,
            "gamma0": self.gamma0,
            "inverse_condition": float(self.inverse_condition),
            "eigenvalues": _eig_list(self.eigenvalues),
            "schur_eigenvalues": None if self.schur_eigenvalues is None else _eig_list(self.schur_eigenvalues),
        }


def is_singular(J, tolerance: float = SINGULAR_RCOND):
    """``(flag, 1/cond)`` for the constraint Jacobian (or any square matrix)."""
    A = J.fast_block if isinstance(J, JacobianBundle) else np.atleast_2d(np.asarray(J, dtype=float))
    rc = inverse_condition(A)
    return rc < tolerance, rc


def _sort(ev):
    ev = np.asarray(ev, dtype=complex)
    return ev[np.lexsort((ev.imag, -ev.real))]


def pencil_eigenvalues(J: JacobianBundle) -> np.ndarray:
    """Finite generalized eigenvalues of ``(A, diag(I_x, 0))``."""
    A = J.fast_block
    E = np.zeros_like(A)
    E[: J.nx, : J.nx] = np.eye(J.nx)
    alpha, beta = sla.eig(A, E, right=False, homogeneous_eigvals=True)
    finite = np.abs(beta) > 1e-12 * np.maximum(np.abs(alpha), 1.0)
    return _sort(alpha[finite] / beta[finite])


def classify_constraint_point(J: JacobianBundle, margin: float = EIG_MARGIN,
                              rcond: float = SINGULAR_RCOND) -> ManifoldClassification:
    """Classify a point of the constraint manifold from its Jacobian.

    ``k`` counts eigenvalues with real part above ``margin``; eigenvalues
    within ``margin`` of the imaginary axis make the point ``marginal``.
    """
    A = J.fast_block
    eig = _sort(np.linalg.eigvals(A)) if A.size else np.zeros(0, dtype=complex)
    gamma0 = bool(np.all(eig.real < -margin)) if eig.size else True
    singular, rc = is_singular(A, rcond)
    if singular:
        return ManifoldClassification("singular", 0, eig, None, False, False, rc)
    try:
        S = schur_complement(J, rcond)
        sev = _sort(np.linalg.eigvals(S)) if S.size else np.zeros(0, dtype=complex)
    except SingularityError:
        # D_y g singular while the whole block is regular: fall back to the pencil
        sev = pencil_eigenvalues(J)
    k = int(np.sum(sev.real > margin))
    marginal = bool(np.any(np.abs(sev.real) <= margin))
    if k == 0 and not marginal:
        verdict = "stable-component"
    elif k == 0:
        verdict = "marginal"
    else:
        verdict = f"type-{k}"
    in_gs = verdict == "stable-component" and inverse_condition(J.D_y_g) >= rcond
    return ManifoldClassification(verdict, k, eig, sev, in_gs, gamma0, rc)


def classify_state(system, state, tolerance: float = MANIFOLD_TOLERANCE) -> ManifoldClassification:
    """Check ``state`` lies on the manifold, then classify it."""
    from .dae import assemble_residuals

    r = assemble_residuals(system, state)
    off = max(r.norms["f"], r.norms["g"])
    if off > tolerance:
        raise ValueError(f"point is off the constraint manifold (|f|,|g| = {off:.3e} > {tolerance:g})")
    return classify_constraint_point(assemble_jacobian(system, state))


@dataclass(frozen=True)
class TransientSep:
    """Equilibrium of the fast model at frozen ``(zc, zd)``; ``type`` > 0 means unstable."""

    zc: np.ndarray
    zd: np.ndarray
    x: np.ndarray
    y: np.ndarray
    residual: float
    type: int
    classification: ManifoldClassification
    iterations: int = 0

    def w(self, system) -> np.ndarray:
        from .simulators import _as_w

        return _as_w(system, self.zc, self.x, self.y)

    def state(self, system, t=0.0):
        from .state import PartitionedState

        return PartitionedState(zc=self.zc, zd=self.zd, x=self.x, y=self.y, t=t, epsilon=system.epsilon)

    def to_dict(self) -> dict:
        return {"type": self.type, "residual": self.residual, "iterations": self.iterations,
                "classification": self.classification.to_dict()}


def solve_transient_sep(system, zc, zd, x_guess, y_guess, tolerance: float = 1e-10,
                        max_iterations: int = 30) -> TransientSep:
    """Solve ``f = 0, g = 0`` at frozen slow states and type the result.

    The returned equilibrium may be unstable; ``type`` records how many
    eigenvalues of the reduced matrix lie in the right half plane.
    """
    zc = np.asarray(zc, dtype=float)
    zd = np.asarray(zd, dtype=float)
    x, y, it = solve_constraint(system, zc, zd, x_guess, y_guess, tolerance=tolerance,
                                max_iterations=max_iterations, return_iterations=True)
    from .simulators import _as_w

    w = _as_w(system, zc, x, y)
    r = system.residual(w, zd)
    lay = system.layout
    res = float(np.max(np.abs(r[lay.nz:]))) if lay.nz < lay.n else 0.0
    cls = classify_constraint_point(assemble_jacobian(system, (w, zd)))
    k = cls.k if cls.verdict != "singular" else -1
    return TransientSep(zc=zc, zd=zd, x=x, y=y, residual=res, type=k, classification=cls, iterations=it)


def transient_sep_at(system, state, **kw) -> TransientSep:
    """:func:`solve_transient_sep` at the slow states of ``state``, guessing its fast part."""
    return solve_transient_sep(system, state.zc, state.zd, state.x, state.y, **kw)


def _signed_rcond(system, w, zd):
    J = assemble_jacobian(system, (w, zd)).fast_block
    rc = inverse_condition(J)
    sign, _ = np.linalg.slogdet(J)
    return float(sign) * rc, rc


def detect_singularity_crossing(trajectory, system, tolerance: float = SINGULAR_RCOND,
                                bisection_steps: int = 40):
    """Instants where the constraint Jacobian becomes singular along ``trajectory``.

    A crossing is either a sign change of its determinant or the inverse
    condition number dropping below ``tolerance`` between two samples with
    the same discrete state; its time is refined by bisection on the linear
    interpolant.  Returns a list of ``(time, inverse condition)``.
    """
    out = []
    times = trajectory.times
    if len(times) == 0:
        return out
    prev = _signed_rcond(system, trajectory.W[0], trajectory.ZD[0])
    for i in range(1, len(times)):
        cur = _signed_rcond(system, trajectory.W[i], trajectory.ZD[i])
        same_zd = np.array_equal(trajectory.ZD[i], trajectory.ZD[i - 1])
        flipped = prev[0] * cur[0] < 0
        dropped = prev[1] >= tolerance > cur[1]
        if same_zd and (flipped or dropped):
            lo, hi = times[i - 1], times[i]
            w0, w1 = trajectory.W[i - 1], trajectory.W[i]
            zd = trajectory.ZD[i]

            def at(t):
                a = (t - times[i - 1]) / (times[i] - times[i - 1])
                return _signed_rcond(system, (1 - a) * w0 + a * w1, zd)

            best = cur
            for _ in range(bisection_steps):
                mid = 0.5 * (lo + hi)
                m = at(mid)
                crossed = (prev[0] * m[0] < 0) if flipped else (m[1] < tolerance)
                if crossed:
                    hi, best = mid, m
                else:
                    lo = mid
            out.append((float(hi), float(best[1])))
        prev = cur
    return out


__all__ = [
    "ManifoldClassification", "TransientSep", "classify_constraint_point", "classify_state",
    "detect_singularity_crossing", "is_singular", "pencil_eigenvalues", "solve_transient_sep",
    "transient_sep_at",
]

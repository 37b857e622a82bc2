"""System interface consumed by the engines, plus small toy systems.

A system exposes the stacked residual ``F(w, zd)`` whose rows are aligned
with ``w = [zc, x, y]``: ``zc`` rows hold ``h_c``, ``x`` rows hold ``f`` and
``y`` rows hold ``g``.  Discrete slow states ``zd`` change only through
:meth:`DynamicSystem.discrete_update` and timed scenario events.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .state import Layout, PartitionedState


@dataclass
class Scenario:
    """Timed events and run settings attached to a case."""

    events: list = field(default_factory=list)
    qss_start: float = 0.0
    horizon: float = 10.0
    long_term: dict = field(default_factory=dict)
    qss: dict = field(default_factory=dict)
    transient: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def sorted_events(self):
        return sorted(self.events, key=lambda e: e.time)


class DynamicSystem:
    """Base class: subclasses fill ``layout`` and implement the evaluations."""

    name = "system"
    layout: Layout
    scenario: Scenario

    def residual(self, w: np.ndarray, zd: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, w: np.ndarray, zd: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def initial_state(self) -> PartitionedState:
        raise NotImplementedError

    # discrete behaviour; systems without devices never change zd
    def discrete_update(self, w, zd, t):
        return np.array(zd, dtype=float), []

    def timed_events(self) -> list:
        return self.scenario.sorted_events()

    def apply_timed_event(self, zd, event):
        raise NotImplementedError(f"{self.name} has no timed events")

    def next_event_time(self, zd) -> float:
        return np.inf

    def pending(self, zd) -> bool:
        return False

    def kink_distance(self, w, zd) -> float:
        return np.inf

    @property
    def epsilon(self) -> float:
        return 1.0

    @property
    def angle_mask(self) -> np.ndarray:
        return np.array([u == "rad" for u in self.layout.w_units], dtype=bool)

    def check_size(self, w, zd) -> None:
        from .errors import StructureError

        if np.size(w) != self.layout.n or np.size(zd) != self.layout.nd:
            raise StructureError(
                f"state has {np.size(w)} continuous / {np.size(zd)} discrete entries, "
                f"system expects {self.layout.n} / {self.layout.nd}")


class ToySystem(DynamicSystem):
    """System defined by plain callables ``residual(w, zd)``/``jacobian(w, zd)``.

    ``names`` maps each of ``zc``, ``x``, ``y`` (and optionally ``zd``) to a
    list of variable names.
    """

    def __init__(self, names, residual, jacobian, w0, zd0=(), scenario=None,
                 epsilon=1.0, name="toy", metadata=None):
        self.name = name
        self.layout = Layout()
        for part in ("zc", "x", "y", "zd"):
            for v in names.get(part, ()):
                self.layout.add(part, v)
        self.layout.freeze()
        self._residual = residual
        self._jacobian = jacobian
        self._w0 = np.asarray(w0, dtype=float)
        self._zd0 = np.asarray(zd0, dtype=float)
        self._epsilon = epsilon
        self.scenario = scenario or Scenario()
        self.metadata = dict(metadata or {})

    @property
    def epsilon(self):
        return self._epsilon

    def residual(self, w, zd):
        return np.asarray(self._residual(w, zd), dtype=float)

    def jacobian(self, w, zd):
        return np.atleast_2d(np.asarray(self._jacobian(w, zd), dtype=float))

    def initial_state(self):
        return PartitionedState.from_w(self.layout, self._w0, self._zd0, t=0.0, epsilon=self._epsilon)


def tikhonov_system(epsilon=0.01, z0=1.0, x0=None, **kw) -> ToySystem:
    """Linear slow-fast pair ``z' = -z``, ``eps x' = -(x - z)``.

    The QSS reduction is ``x = z`` and the two models differ by O(eps).
    """
    x0 = z0 if x0 is None else x0

    def res(w, zd):
        z, x = w
        return np.array([-z, -(x - z) / epsilon])

    def jac(w, zd):
        return np.array([[-1.0, 0.0], [1.0 / epsilon, -1.0 / epsilon]])

    return ToySystem({"zc": ["z"], "x": ["x"]}, res, jac, [z0, x0], epsilon=epsilon,
                     name="tikhonov", metadata={"kind": "tikhonov", "epsilon": epsilon}, **kw)


def fold_system(rate=1.0, z0=1.0, x0=1.0, **kw) -> ToySystem:
    """Quadratic fold ``z' = -rate``, ``0 = z - x^2``.

    The upper branch ``x = sqrt(z)`` reaches the singular point ``x = 0`` at
    ``t = z0 / rate``.
    """

    def res(w, zd):
        z, x = w
        return np.array([-rate, z - x * x])

    def jac(w, zd):
        z, x = w
        return np.array([[0.0, 0.0], [1.0, -2.0 * x]])

    return ToySystem({"zc": ["z"], "y": ["x"]}, res, jac, [z0, x0], name="fold",
                     metadata={"kind": "fold", "rate": rate}, **kw)


def fast_fold_system(z0=1.0, x0=1.0, **kw) -> ToySystem:
    """Fold with a fast state: ``z' = -1``, ``x' = z - x^2``.

    The manifold ``x = sqrt(z)`` is attracting for ``x > 0``; its fast
    eigenvalue ``-2x`` crosses zero at the fold.
    """

    def res(w, zd):
        z, x = w
        return np.array([-1.0, z - x * x])

    def jac(w, zd):
        z, x = w
        return np.array([[0.0, 0.0], [1.0, -2.0 * x]])

    return ToySystem({"zc": ["z"], "x": ["x"]}, res, jac, [z0, x0], name="fast_fold",
                     metadata={"kind": "fast_fold"}, **kw)


TOY_FACTORIES = {
    "tikhonov": tikhonov_system,
    "fold": fold_system,
    "fast_fold": fast_fold_system,
}

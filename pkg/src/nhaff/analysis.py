"""Decision procedures built on the closed-form reaction force.

* :func:`rad_fiber` reconstructs, at one configuration, the span of all
  reaction forces realized over the constraint fiber and its annihilator
  (the fiber of the reaction-annihilator distribution).  Restricted to
  the fiber the reaction is componentwise quadratic in the r kernel
  coordinates, so finitely many generic velocity samples determine the
  span exactly in principle; an SVD rank threshold makes this robust.
* :func:`is_section_of_rad` tests whether a vector field is annihilated
  by every sampled reaction on a grid of configurations; with the
  canonical nonhomogeneous term as the field this is exactly the energy
  conservation criterion (:func:`energy_conservation_test`).
* :func:`gauge_symmetry_test` checks the on-fiber invariance condition
  Y^TQ(L) = 0 of a candidate gauge symmetry.  Orbit tangency is NOT
  checked (group actions are not part of the model data).
* :func:`momentum_drift` audits a trajectory against the momentum
  balance dJ/dt = Y^TQ(L) + R.Y.
* :func:`generator_projection` computes the A-orthogonal projection of a
  generator onto the constraint distribution and the obstruction
  (Pi_A Y - Y).(A xi - b) to that projection generating the same
  momentum.
* :func:`covariance_check` verifies that the reaction force transforms
  as a covector under a chart change.

Verdicts are certified only on the tested grid/sample set; reports carry
the grids and tolerances used.  Grid points are evaluated with
independent per-point random streams, so results do not depend on
evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Sequence

import numpy as np

from . import expr as ex
from .linalg import row_space_split
from .model import EvaluatedFrame, GuardViolation, ModelError, ModelSpec, evaluate_frame
from .reaction import kernel_basis, projector_D, reaction_force, xi

__all__ = [
    "VectorFieldSpec",
    "FiberReport",
    "SectionVerdict",
    "GaugeVerdict",
    "DriftReport",
    "GeneratorProjectionResult",
    "ChartMap",
    "rad_fiber",
    "is_section_of_rad",
    "energy_conservation_test",
    "gauge_symmetry_test",
    "momentum_drift",
    "generator_projection",
    "transform_model",
    "covariance_check",
    "grid_box",
    "point_rng",
    "xi_field",
    "builtin_fields",
]

DEFAULT_RANK_TOL = 1e-9
DEFAULT_SECTION_TOL = 1e-8
ZERO_REACTION_FLOOR = 1e-14


@dataclass(frozen=True)
class VectorFieldSpec:
    """Symbolic vector field on the configuration chart."""

    components: tuple[ex.Expr, ...]

    def __post_init__(self):
        object.__setattr__(self, "components",
                           tuple(c if isinstance(c, ex.Expr) else ex.parse(str(c))
                                 for c in self.components))

    @classmethod
    def parse(cls, texts: Sequence[str]) -> "VectorFieldSpec":
        return cls(tuple(ex.parse(t) for t in texts))

    @property
    def n(self) -> int:
        return len(self.components)


class _FieldEval:
    """Numeric evaluation of a field (and its Jacobian) against a model."""

    def __init__(self, Z: VectorFieldSpec, m: ModelSpec):
        if Z.n != m.n:
            raise ModelError(f"vector field has {Z.n} components, model has n={m.n}")
        coords = m.coords
        exprs = list(Z.components)
        exprs += [Z.components[i].diff(coords[j]) for i in range(m.n) for j in range(m.n)]
        self._fn = ex.compile_batch(exprs, list(coords), m.params)
        self._n = m.n

    def value(self, q: np.ndarray) -> np.ndarray:
        return np.array(self._fn(*q)[: self._n], dtype=float)

    def value_and_jacobian(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        vals = np.array(self._fn(*q), dtype=float)
        n = self._n
        return vals[:n], vals[n:].reshape(n, n)


def _field_callable(m: ModelSpec, Z) -> Callable[[np.ndarray], np.ndarray]:
    """Normalize a field argument (spec or plain callable) to q -> vector."""
    if isinstance(Z, VectorFieldSpec):
        return _FieldEval(Z, m).value
    if callable(Z):
        return Z
    raise TypeError(f"expected VectorFieldSpec or callable, got {type(Z).__name__}")


def xi_field(m: ModelSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Canonical nonhomogeneous term as a numeric field q -> xi(q)."""
    return lambda q: xi(evaluate_frame(m, q))


def builtin_fields(m: ModelSpec) -> dict[str, VectorFieldSpec]:
    """Named generator presets for the built-in models.

    For the rolling sphere: ``F`` is the horizontal generator whose
    momentum is the classical vertical-spin integral, ``K`` the gauge
    symmetry generating the second classical integral.
    """
    if m.name != "sphere_cylinder":
        return {}
    return {
        "F": VectorFieldSpec.parse(["0", "-a/r", "1", "0", "0"]),
        "K": VectorFieldSpec.parse([
            "0",
            "-z/r^2",
            "a*sin(gamma - phi)*cos(theta)/(I*sin(theta))",
            "-a*sin(gamma - phi)/(I*sin(theta))",
            "a*cos(gamma - phi)/I",
        ]),
    }


def point_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def _require_in_guard_domain(m: ModelSpec, f: EvaluatedFrame) -> None:
    if m.guards and np.any(f.guard_values <= 0.0):
        raise GuardViolation(f"configuration q={f.q.tolist()} violates a guard")


def _fiber_samples(f: EvaluatedFrame, N: int, speed: float,
                   rng: np.random.Generator) -> np.ndarray:
    """N velocities on the fiber: xi(q) + kernel_basis(q) . c, c uniform."""
    K = kernel_basis(f)
    c = rng.uniform(-speed, speed, size=(N, K.shape[1]))
    return xi(f)[None, :] + c @ K.T


# ---------------------------------------------------------------------------
# reaction-annihilator fiber

@dataclass
class FiberReport:
    """Sampled reaction span at q and the resulting annihilator fiber."""

    q: np.ndarray
    samples: int
    reaction_span: np.ndarray   # (n, d) orthonormal
    d: int
    rad_fiber: np.ndarray       # (n, n - d) orthonormal annihilator basis
    tolerances: dict
    flags: list[str] = field(default_factory=list)

    @property
    def fiber_dim(self) -> int:
        return self.rad_fiber.shape[1]

    def to_dict(self) -> dict:
        return {
            "q": self.q.tolist(),
            "samples": self.samples,
            "d": self.d,
            "fiber_dim": self.fiber_dim,
            "flags": list(self.flags),
            "tolerances": dict(self.tolerances),
        }


def rad_fiber(m: ModelSpec, q: Sequence[float], N: int | None = None,
              speed: float = 1.0, rank_tol: float = DEFAULT_RANK_TOL,
              seed: int = 0, rng: np.random.Generator | None = None) -> FiberReport:
    """Reconstruct the reaction-annihilator fiber at ``q`` by sampling.

    Draws ``N`` fiber velocities (default ``3k + 5``, enough to pin the
    componentwise-quadratic reaction for r <= 3), stacks the reactions
    and splits R^n into their span (rank ``d`` via SVD threshold
    ``rank_tol`` relative) and its annihilator.  When every sampled
    reaction is below ``1e-14`` the span is empty, the fiber is all of
    R^n and the report is flagged ``zero_reaction``.
    """
    q = np.asarray(q, dtype=float)
    f = evaluate_frame(m, q)
    _require_in_guard_domain(m, f)
    n_min = 3 * m.k + 5
    if N is None:
        N = n_min
    elif N < n_min:
        raise ValueError(f"need N >= 3k+5 = {n_min} samples, got {N}")
    if rng is None:
        rng = point_rng(seed, 0)
    vs = _fiber_samples(f, N, speed, rng)
    R = np.stack([reaction_force(f, v).R for v in vs])
    tolerances = {"rank_tol": rank_tol, "speed": speed, "zero_floor": ZERO_REACTION_FLOOR}
    flags: list[str] = []
    if float(np.max(np.linalg.norm(R, axis=1))) <= ZERO_REACTION_FLOOR:
        span = np.zeros((m.n, 0))
        annih = np.eye(m.n)
        d = 0
        flags.append("zero_reaction")
    else:
        span, annih, _ = row_space_split(R, rank_tol)
        d = span.shape[1]
    return FiberReport(q=q, samples=N, reaction_span=span, d=d,
                       rad_fiber=annih, tolerances=tolerances, flags=flags)


# ---------------------------------------------------------------------------
# section tests

@dataclass
class SectionVerdict:
    """Outcome of a section-of-the-annihilator test over a grid."""

    verdict: str                # "section" | "not_section"
    max_violation: float        # max |R.Z| / scale over grid x samples
    witness_q: np.ndarray
    witness_v: np.ndarray
    grid_size: int
    tolerances: dict
    note: str = ""

    @property
    def is_section(self) -> bool:
        return self.verdict == "section"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "max_violation": self.max_violation,
            "witness": {"q": self.witness_q.tolist(), "v": self.witness_v.tolist()},
            "grid_size": self.grid_size,
            "tolerances": dict(self.tolerances),
            "note": self.note,
        }


def is_section_of_rad(m: ModelSpec, Z, grid: Sequence[Sequence[float]],
                      N: int | None = None, speed: float = 1.0,
                      section_tol: float = DEFAULT_SECTION_TOL,
                      seed: int = 0, note: str = "") -> SectionVerdict:
    """Test whether Z(q) is annihilated by all sampled reactions on the grid.

    ``Z`` is a :class:`VectorFieldSpec` or a callable q -> vector.  The
    violation is ``max |R(q, v).Z(q)|`` normalized by
    ``max(1, max ||R|| * ||Z||)``; the verdict is ``section`` iff it stays
    within ``section_tol``.  The worst (q, v) pair is reported as witness.
    """
    Zf = _field_callable(m, Z)
    if N is None:
        N = 3 * m.k + 5
    max_dot = -1.0
    scale = 1.0
    witness_q = witness_v = None
    for idx, q in enumerate(grid):
        q = np.asarray(q, dtype=float)
        f = evaluate_frame(m, q)
        _require_in_guard_domain(m, f)
        Zq = np.asarray(Zf(q), dtype=float)
        Znorm = float(np.linalg.norm(Zq))
        rng = point_rng(seed, idx)
        for v in _fiber_samples(f, N, speed, rng):
            R = reaction_force(f, v).R
            scale = max(scale, float(np.linalg.norm(R)) * Znorm)
            dot = abs(float(R @ Zq))
            if dot > max_dot:
                max_dot, witness_q, witness_v = dot, q, v
    if witness_q is None:
        raise ValueError("empty grid")
    max_violation = max_dot / scale
    verdict = "section" if max_violation <= section_tol else "not_section"
    return SectionVerdict(verdict=verdict, max_violation=max_violation,
                          witness_q=witness_q, witness_v=witness_v,
                          grid_size=len(grid),
                          tolerances={"section_tol": section_tol, "samples": N, "speed": speed},
                          note=note)


def energy_conservation_test(m: ModelSpec, grid: Sequence[Sequence[float]],
                             **kwargs) -> SectionVerdict:
    """Energy is conserved iff the nonhomogeneous term is a section of the
    reaction annihilator; this tests the canonical representative.

    The verdict does not depend on the representative: adding any section
    of the constraint distribution leaves every R.Z value unchanged up to
    the ideality round-off.
    """
    kwargs.setdefault("note", "energy criterion: canonical xi against sampled reactions")
    return is_section_of_rad(m, xi_field(m), grid, **kwargs)


# ---------------------------------------------------------------------------
# gauge symmetry (invariance condition only)

@dataclass
class GaugeVerdict:
    verdict: str                # "gauge_symmetry" | "not_gauge_symmetry"
    max_violation: float
    witness_q: np.ndarray
    witness_v: np.ndarray
    grid_size: int
    tolerances: dict
    note: str = "invariance condition only; orbit tangency is not checked"

    @property
    def is_gauge_symmetry(self) -> bool:
        return self.verdict == "gauge_symmetry"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "max_violation": self.max_violation,
            "witness": {"q": self.witness_q.tolist(), "v": self.witness_v.tolist()},
            "grid_size": self.grid_size,
            "tolerances": dict(self.tolerances),
            "note": self.note,
        }


def _lifted_derivative(f: EvaluatedFrame, v: np.ndarray, Yq: np.ndarray,
                       dY: np.ndarray) -> tuple[float, float]:
    """Y^TQ(L)(q, v) and a magnitude scale for normalizing it."""
    dLdq = 0.5 * np.einsum("jhi,j,h->i", f.dA, v, v) - f.db.T @ v - f.Vp
    p = f.A @ v - f.b
    term1 = float(Yq @ dLdq)
    term2 = float(v @ (dY.T @ p))
    mag = float(np.linalg.norm(Yq) * np.linalg.norm(dLdq)
                + np.linalg.norm(dY.T @ p) * np.linalg.norm(v))
    return term1 + term2, mag


def gauge_symmetry_test(m: ModelSpec, Y: VectorFieldSpec,
                        grid: Sequence[Sequence[float]], N: int | None = None,
                        speed: float = 1.0, tol: float = DEFAULT_SECTION_TOL,
                        seed: int = 0, on_constraint: bool = True) -> GaugeVerdict:
    """Check the invariance condition Y^TQ(L) = 0 at sampled velocities.

    With ``on_constraint`` (the gauge-symmetry condition proper) the
    sampler draws fiber velocities; switching it off draws a plain box of
    velocities and distinguishes identities of L from identities that
    hold only on the constraint manifold.
    """
    fe = _FieldEval(Y, m)
    if N is None:
        N = 3 * m.k + 5
    max_val = -1.0
    scale = 1.0
    witness_q = witness_v = None
    for idx, q in enumerate(grid):
        q = np.asarray(q, dtype=float)
        f = evaluate_frame(m, q)
        _require_in_guard_domain(m, f)
        Yq, dY = fe.value_and_jacobian(q)
        rng = point_rng(seed, idx)
        if on_constraint:
            vs = _fiber_samples(f, N, speed, rng)
        else:
            vs = rng.uniform(-speed, speed, size=(N, m.n))
        for v in vs:
            val, mag = _lifted_derivative(f, v, Yq, dY)
            scale = max(scale, mag)
            if abs(val) > max_val:
                max_val, witness_q, witness_v = abs(val), q, v
    if witness_q is None:
        raise ValueError("empty grid")
    max_violation = max_val / scale
    verdict = "gauge_symmetry" if max_violation <= tol else "not_gauge_symmetry"
    return GaugeVerdict(verdict=verdict, max_violation=max_violation,
                        witness_q=witness_q, witness_v=witness_v,
                        grid_size=len(grid),
                        tolerances={"tol": tol, "samples": N, "speed": speed,
                                    "on_constraint": on_constraint})


# ---------------------------------------------------------------------------
# momentum drift along a trajectory

@dataclass
class DriftReport:
    """Momentum series along a trajectory and its balance-law residual."""

    J: np.ndarray
    max_drift: float
    rel_drift: float
    max_balance_residual: float
    balance_residual: np.ndarray   # interior samples, centered differences

    def to_dict(self) -> dict:
        return {
            "J0": float(self.J[0]),
            "max_drift": self.max_drift,
            "rel_drift": self.rel_drift,
            "max_balance_residual": self.max_balance_residual,
        }


def momentum_drift(traj, m: ModelSpec, Y: VectorFieldSpec) -> DriftReport:
    """Drift of J = (A v - b).Y along a trajectory and the residual of the
    balance dJ/dt = Y^TQ(L) + R.Y (centered differences on stored samples,
    so the residual is O(sample spacing squared))."""
    fe = _FieldEval(Y, m)
    mcount = len(traj)
    J = np.empty(mcount)
    rhs = np.empty(mcount)
    for j in range(mcount):
        f = evaluate_frame(m, traj.q[j])
        v = traj.v[j]
        Yq, dY = fe.value_and_jacobian(traj.q[j])
        J[j] = float((f.A @ v - f.b) @ Yq)
        val, _ = _lifted_derivative(f, v, Yq, dY)
        rhs[j] = val + float(traj.R[j] @ Yq)
    if mcount >= 3:
        dJdt = (J[2:] - J[:-2]) / (traj.t[2:] - traj.t[:-2])
        balance = dJdt - rhs[1:-1]
    else:
        balance = np.zeros(0)
    max_drift = float(np.max(np.abs(J - J[0])))
    return DriftReport(
        J=J,
        max_drift=max_drift,
        rel_drift=max_drift / (1.0 + abs(float(J[0]))),
        max_balance_residual=float(np.max(np.abs(balance))) if balance.size else 0.0,
        balance_residual=balance,
    )


# ---------------------------------------------------------------------------
# generator projection and its obstruction

@dataclass
class GeneratorProjectionResult:
    q: np.ndarray
    Y: np.ndarray
    PiAY: np.ndarray
    obstruction: float

    def to_dict(self) -> dict:
        return {"q": self.q.tolist(), "Y": self.Y.tolist(),
                "PiAY": self.PiAY.tolist(), "obstruction": self.obstruction}


def generator_projection(m: ModelSpec, Y: VectorFieldSpec,
                         q: Sequence[float]) -> GeneratorProjectionResult:
    """A-orthogonal projection of Y(q) onto ker S and the obstruction
    (Pi_A Y - Y).(A xi - b).

    A zero obstruction is exactly the condition for the projected
    generator to produce the same momentum on the constraint manifold,
    i.e. for the momentum to admit a generator inside the constraint
    distribution.
    """
    q = np.asarray(q, dtype=float)
    f = evaluate_frame(m, q)
    _require_in_guard_domain(m, f)
    Yq = _FieldEval(Y, m).value(q)
    PiY = projector_D(f) @ Yq
    obstruction = float((PiY - Yq) @ (f.A @ xi(f) - f.b))
    return GeneratorProjectionResult(q=q, Y=Yq, PiAY=PiY, obstruction=obstruction)


# ---------------------------------------------------------------------------
# chart covariance

@dataclass(frozen=True)
class ChartMap:
    """Coordinate change q_old = C(q_new), written in the chart's names.

    ``inverse`` (optional) gives q_new = C^-1(q_old) symbolically; when
    absent :meth:`inverse_point` falls back to Newton iteration with the
    exact Jacobian.
    """

    components: tuple[ex.Expr, ...]
    inverse: tuple[ex.Expr, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "components",
                           tuple(c if isinstance(c, ex.Expr) else ex.parse(str(c))
                                 for c in self.components))
        if self.inverse is not None:
            object.__setattr__(self, "inverse",
                               tuple(c if isinstance(c, ex.Expr) else ex.parse(str(c))
                                     for c in self.inverse))

    def forward(self, m: ModelSpec, q_new: Sequence[float]) -> np.ndarray:
        binding = m.binding(q_new)
        return np.array([c.eval(binding) for c in self.components], dtype=float)

    def jacobian(self, m: ModelSpec, q_new: Sequence[float]) -> np.ndarray:
        binding = m.binding(q_new)
        return np.array([[self.components[i].diff(m.coords[j]).eval(binding)
                          for j in range(m.n)] for i in range(m.n)], dtype=float)

    def inverse_point(self, m: ModelSpec, q_old: Sequence[float],
                      tol: float = 1e-13, maxit: int = 60) -> np.ndarray:
        q_old = np.asarray(q_old, dtype=float)
        if self.inverse is not None:
            binding = m.binding(q_old)
            return np.array([c.eval(binding) for c in self.inverse], dtype=float)
        qt = q_old.copy()  # good start for near-identity maps
        for _ in range(maxit):
            r = self.forward(m, qt) - q_old
            if float(np.max(np.abs(r))) < tol:
                return qt
            qt = qt - np.linalg.solve(self.jacobian(m, qt), r)
        raise ModelError(f"chart inversion did not converge at q={q_old.tolist()}")


def transform_model(m: ModelSpec, C: ChartMap) -> ModelSpec:
    """Pull the model back through q_old = C(q_new), fully symbolically.

    A~ = C'^T (A o C) C',  b~ = C'^T (b o C),  V~ = V o C,
    S~ = (S o C) C',       s~ = s o C,         guards~ = guards o C.
    """
    if len(C.components) != m.n:
        raise ModelError(f"chart map has {len(C.components)} components, model has n={m.n}")
    comp = {m.coords[i]: C.components[i] for i in range(m.n)}
    J = [[C.components[i].diff(m.coords[j]) for j in range(m.n)] for i in range(m.n)]

    def o(e: ex.Expr) -> ex.Expr:
        return e.subst(comp)

    def dot(terms: list[ex.Expr]) -> ex.Expr:
        return reduce(ex.add, terms, ex.Num(0.0))

    n, k = m.n, m.k
    At = tuple(tuple(dot([ex.mul(ex.mul(J[p][i], o(m.A[p][q])), J[q][j])
                          for p in range(n) for q in range(n)])
                     for j in range(n)) for i in range(n))
    bt = tuple(dot([ex.mul(J[p][i], o(m.b[p])) for p in range(n)]) for i in range(n))
    St = tuple(tuple(dot([ex.mul(o(m.S[a][i]), J[i][j]) for i in range(n)])
                     for j in range(n)) for a in range(k))
    return ModelSpec(
        n=n, k=k, coords=m.coords,
        A=At, b=bt, V=o(m.V), S=St, s=tuple(o(e) for e in m.s),
        params=dict(m.params),
        guards=tuple(o(g) for g in m.guards),
        name=(m.name + "+chart") if m.name else "chart",
    )


def covariance_check(m: ModelSpec, C: ChartMap, q_new: Sequence[float],
                     v_new: Sequence[float],
                     constraint_tol: float | None = 1e-9) -> float:
    """Relative mismatch between the pulled-back reaction and the
    covector-transformed one at a state given in the new chart.

    Returns ``||R~ - C'^T (R o C)|| / (1 + ||R||)``; zero for an exact
    implementation up to round-off.
    """
    q_new = np.asarray(q_new, dtype=float)
    v_new = np.asarray(v_new, dtype=float)
    J = C.jacobian(m, q_new)
    if abs(float(np.linalg.det(J))) < 1e-12:
        raise ModelError(f"chart map Jacobian is singular at q={q_new.tolist()}")
    mt = transform_model(m, C)
    Rt = reaction_force(evaluate_frame(mt, q_new), v_new, constraint_tol).R
    q_old = C.forward(m, q_new)
    v_old = J @ v_new
    R = reaction_force(evaluate_frame(m, q_old), v_old, constraint_tol).R
    return float(np.linalg.norm(Rt - J.T @ R) / (1.0 + np.linalg.norm(R)))


# ---------------------------------------------------------------------------
# grids

def grid_box(spec: str | Sequence[tuple[float, float, int]]) -> list[np.ndarray]:
    """Uniform box grid, e.g. ``"-1:1:3, 0.5:1.5:3, -1:1:3"``.

    Each axis is ``lo:hi:count``; the result is the cartesian product in
    C order (last axis fastest).  Chart guards are the caller's business:
    pick boxes that avoid guard zeros by a margin.
    """
    if isinstance(spec, str):
        axes = []
        for part in spec.split(","):
            lo, hi, count = part.strip().split(":")
            axes.append((float(lo), float(hi), int(count)))
    else:
        axes = [(float(lo), float(hi), int(c)) for lo, hi, c in spec]
    lines = [np.linspace(lo, hi, c) if c > 1 else np.array([(lo + hi) / 2.0])
             for lo, hi, c in axes]
    mesh = np.meshgrid(*lines, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    return [pts[i].copy() for i in range(pts.shape[0])]

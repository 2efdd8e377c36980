"""Chart-wise description of a nonholonomic system with affine constraints.

A model is the coordinate data of one chart:

* kinetic matrix ``A(q)`` (symmetric positive definite) and gyrostatic
  one-form ``b(q)`` entering the Lagrangian ``L = 1/2 q'.A(q) q' - b(q).q'
  - V(q)``, so the momentum is ``p = A q' - b``;
* potential ``V(q)``;
* constraint rows ``S(q)`` and affine term ``s(q)`` defining the
  admissible velocities ``S(q) q' + s(q) = 0`` (``s = 0`` is the linear
  case).

All coefficients are expressions (module :mod:`nhaff.expr`) in the
coordinate and parameter names, so exact partial derivatives of every
tensor are available.  ``evaluate_frame`` packs everything a single
configuration needs into an :class:`EvaluatedFrame` of plain numpy
arrays.

Two built-in systems ship with the package (see :func:`builtin`):

* ``affine_particle`` -- a unit-mass particle in R^3 with the affine
  constraint ``z' + x y' - y x' = c``; coordinates ``(x, y, z)``.
* ``sphere_cylinder`` -- a homogeneous sphere of radius ``a`` rolling
  without sliding inside a cylinder of radius ``r + a`` spinning at
  constant rate ``Omega`` about its vertical figure axis; coordinates
  ``(z, gamma, phi, psi, theta)`` (cylindrical position of the center
  plus Euler angles), two constraint rows.

Angles are plain reals.  Guard expressions (``sin(theta)`` for the Euler
chart, ``y^2`` for the particle) must stay positive; integration stops
cleanly when one of them hits zero.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .linalg import gram_solve

__all__ = [
    "ModelError",
    "GuardViolation",
    "ModelSpec",
    "State",
    "EvaluatedFrame",
    "ValidationReport",
    "ProbeResult",
    "builtin",
    "BUILTIN_NAMES",
    "validate",
    "evaluate_frame",
    "project_velocity",
    "model_to_dict",
    "model_from_dict",
    "load_model",
]

DEFAULT_CONSTRAINT_TOL = 1e-9
VALIDATION_THRESHOLD = 1e-10


class ModelError(ValueError):
    """Malformed model data or failed evaluation."""


class GuardViolation(ModelError):
    """A configuration lies outside the chart's guard domain."""


def _as_expr(e) -> ex.Expr:
    return e if isinstance(e, ex.Expr) else ex.parse(str(e))


@dataclass(frozen=True)
class ModelSpec:
    """Immutable chart data of a constrained system (see module docstring)."""

    n: int
    k: int
    coords: tuple[str, ...]
    A: tuple[tuple[ex.Expr, ...], ...]
    b: tuple[ex.Expr, ...]
    V: ex.Expr
    S: tuple[tuple[ex.Expr, ...], ...]
    s: tuple[ex.Expr, ...]
    params: dict[str, float] = field(default_factory=dict)
    guards: tuple[ex.Expr, ...] = ()
    name: str = ""

    def __post_init__(self):
        n, k = self.n, self.k
        if not (1 <= k < n):
            raise ModelError(f"need 1 <= k < n, got n={n}, k={k}")
        if n - k == 1:
            warnings.warn(
                f"constraint distribution has rank r=1 (n={n}, k={k}); "
                "the usual setting assumes 1 < r < n",
                stacklevel=2,
            )
        coords = tuple(str(c) for c in self.coords)
        if len(coords) != n or len(set(coords)) != n:
            raise ModelError(f"need {n} distinct coordinate names, got {coords}")
        params = {str(p): float(v) for p, v in dict(self.params).items()}
        for name in (*coords, *params):
            if name in ex.FUNCTIONS:
                raise ModelError(f"name '{name}' collides with a builtin function")
        if set(coords) & set(params):
            raise ModelError("coordinate and parameter names overlap")

        A = tuple(tuple(_as_expr(e) for e in row) for row in self.A)
        S = tuple(tuple(_as_expr(e) for e in row) for row in self.S)
        b = tuple(_as_expr(e) for e in self.b)
        s = tuple(_as_expr(e) for e in self.s)
        guards = tuple(_as_expr(e) for e in self.guards)
        if len(A) != n or any(len(row) != n for row in A):
            raise ModelError(f"A must be {n}x{n}")
        if len(S) != k or any(len(row) != n for row in S):
            raise ModelError(f"S must be {k}x{n}")
        if len(b) != n:
            raise ModelError(f"b must have {n} entries")
        if len(s) != k:
            raise ModelError(f"s must have {k} entries")

        known = set(coords) | set(params)
        for e in (*(x for row in A for x in row), *b, _as_expr(self.V),
                  *(x for row in S for x in row), *s, *guards):
            free = e.variables() - known
            if free:
                raise ModelError(f"unknown names {sorted(free)} in '{e}'")

        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "V", _as_expr(self.V))
        object.__setattr__(self, "guards", guards)
        object.__setattr__(self, "_tables", None)

    @property
    def r(self) -> int:
        """Rank of the constraint distribution, n - k."""
        return self.n - self.k

    def binding(self, q: Sequence[float]) -> dict[str, float]:
        """Name->value map for evaluating raw expressions at ``q``."""
        d = {c: float(v) for c, v in zip(self.coords, q)}
        d.update(self.params)
        return d

    def _frame_tables(self) -> "_FrameTables":
        tables = object.__getattribute__(self, "_tables")
        if tables is None:
            tables = _FrameTables(self)
            object.__setattr__(self, "_tables", tables)
        return tables


@dataclass(frozen=True)
class State:
    """Kinematic state (configuration q, velocity v = dq/dt) in chart units."""

    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).copy())
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).copy())
        if self.q.shape != self.v.shape or self.q.ndim != 1:
            raise ModelError(f"q and v must be equal-length vectors, got {self.q.shape}, {self.v.shape}")


@dataclass
class EvaluatedFrame:
    """All model tensors and their exact first derivatives at a fixed q.

    Index conventions: ``dA[i, j, h] = dA_ij/dq_h``, ``db[i, j] = db_i/dq_j``,
    ``dS[a, i, j] = dS_ai/dq_j``, ``ds[a, j] = ds_a/dq_j``, ``Vp[i] = dV/dq_i``.
    """

    q: np.ndarray
    A: np.ndarray
    Ainv: np.ndarray
    dA: np.ndarray
    b: np.ndarray
    db: np.ndarray
    V: float
    Vp: np.ndarray
    S: np.ndarray
    dS: np.ndarray
    s: np.ndarray
    ds: np.ndarray
    guard_values: np.ndarray


class _FrameTables:
    """Per-model compiled evaluator for all frame tensors at once."""

    def __init__(self, m: ModelSpec):
        n, k = m.n, m.k
        coords = m.coords
        exprs: list[ex.Expr] = []
        exprs += [m.A[i][j] for i in range(n) for j in range(n)]
        exprs += [m.A[i][j].diff(coords[h]) for i in range(n) for j in range(n) for h in range(n)]
        exprs += list(m.b)
        exprs += [m.b[i].diff(coords[j]) for i in range(n) for j in range(n)]
        exprs += [m.V]
        exprs += [m.V.diff(c) for c in coords]
        exprs += [m.S[a][i] for a in range(k) for i in range(n)]
        exprs += [m.S[a][i].diff(coords[j]) for a in range(k) for i in range(n) for j in range(n)]
        exprs += list(m.s)
        exprs += [m.s[a].diff(coords[j]) for a in range(k) for j in range(n)]
        exprs += list(m.guards)
        self.n, self.k, self.ng = n, k, len(m.guards)
        self.fn = ex.compile_batch(exprs, list(coords), m.params)

    def __call__(self, q: np.ndarray) -> EvaluatedFrame:
        n, k = self.n, self.k
        try:
            vals = self.fn(*q)
        except (ex.EvalError, ZeroDivisionError, OverflowError, ValueError) as exc:
            raise ModelError(f"frame evaluation failed at q={q.tolist()}: {exc}") from None
        a = np.array(vals, dtype=float)
        p = 0
        A = a[p:p + n * n].reshape(n, n); p += n * n
        dA = a[p:p + n ** 3].reshape(n, n, n); p += n ** 3
        b = a[p:p + n]; p += n
        db = a[p:p + n * n].reshape(n, n); p += n * n
        V = float(a[p]); p += 1
        Vp = a[p:p + n]; p += n
        S = a[p:p + k * n].reshape(k, n); p += k * n
        dS = a[p:p + k * n * n].reshape(k, n, n); p += k * n * n
        s = a[p:p + k]; p += k
        ds = a[p:p + k * n].reshape(k, n); p += k * n
        guards = a[p:p + self.ng]
        try:
            Ainv = np.linalg.inv(A)
        except np.linalg.LinAlgError:
            raise ModelError(f"kinetic matrix A is singular at q={q.tolist()}") from None
        return EvaluatedFrame(q=q.copy(), A=A, Ainv=Ainv, dA=dA, b=b, db=db,
                              V=V, Vp=Vp, S=S, dS=dS, s=s, ds=ds, guard_values=guards)


def evaluate_frame(m: ModelSpec, q: Sequence[float]) -> EvaluatedFrame:
    """Evaluate all tensors (with exact symbolic derivatives) at ``q``."""
    q = np.asarray(q, dtype=float)
    if q.shape != (m.n,):
        raise ModelError(f"q must have shape ({m.n},), got {q.shape}")
    return m._frame_tables()(q)


def guard_values(m: ModelSpec, q: Sequence[float]) -> np.ndarray:
    binding = m.binding(q)
    return np.array([g.eval(binding) for g in m.guards], dtype=float)


def check_guards(m: ModelSpec, q: Sequence[float], margin: float = 0.0) -> bool:
    """True when every guard expression exceeds ``margin`` at ``q``."""
    return bool(np.all(guard_values(m, q) > margin)) if m.guards else True


# ---------------------------------------------------------------------------
# validation

@dataclass
class ProbeResult:
    q: np.ndarray
    min_eig_A: float
    min_sv_S: float
    guard_values: np.ndarray
    guard_ok: bool


@dataclass
class ValidationReport:
    probes: list[ProbeResult]
    threshold: float
    passed: bool                  # eigenvalue / singular-value criterion
    guard_violations: list[int]   # probe indices outside the guard domain

    @property
    def ok(self) -> bool:
        return self.passed and not self.guard_violations


def validate(m: ModelSpec, probes: Sequence[Sequence[float]],
             threshold: float = VALIDATION_THRESHOLD) -> ValidationReport:
    """Check A(q) SPD and S(q) full-rank on a list of probe configurations.

    The report passes iff the smallest eigenvalue of A and the smallest
    singular value of S stay above ``threshold`` at every probe.  Probes
    outside the guard domain are still checked but flagged in
    ``guard_violations``.  Raises :class:`ModelError` if A evaluates
    non-symmetric anywhere.
    """
    if len(probes) == 0:
        raise ModelError("need at least one probe configuration")
    results: list[ProbeResult] = []
    violations: list[int] = []
    passed = True
    for idx, q in enumerate(probes):
        f = evaluate_frame(m, q)
        asym = float(np.max(np.abs(f.A - f.A.T)))
        if asym > 1e-9 * (1.0 + float(np.max(np.abs(f.A)))):
            raise ModelError(f"A is not symmetric at q={list(map(float, q))} (max asymmetry {asym:g})")
        eigmin = float(np.linalg.eigvalsh(f.A)[0])
        svmin = float(np.linalg.svd(f.S, compute_uv=False)[-1])
        guard_ok = bool(np.all(f.guard_values > 0.0)) if m.guards else True
        if not guard_ok:
            violations.append(idx)
        if eigmin <= threshold or svmin <= threshold:
            passed = False
        results.append(ProbeResult(np.asarray(q, dtype=float), eigmin, svmin,
                                   f.guard_values, guard_ok))
    return ValidationReport(results, threshold, passed, violations)


# ---------------------------------------------------------------------------
# velocity projection onto the constraint fiber M_q

def project_velocity(f: EvaluatedFrame, v: Sequence[float],
                     constraint_tol: float | None = None) -> np.ndarray:
    """A-orthogonal projection of ``v`` onto the affine fiber ``{S w + s = 0}``.

    Returns ``v - Ainv S^T (S Ainv S^T)^-1 (S v + s)``; idempotent, and the
    result satisfies the constraint to round-off.  Raises
    :class:`RankDropError` when the Gram matrix is numerically singular.
    """
    v = np.asarray(v, dtype=float)
    resid = f.S @ v + f.s
    G = f.S @ f.Ainv @ f.S.T
    lam = gram_solve(G, resid, q=f.q)
    return v - f.Ainv @ (f.S.T @ lam)


# ---------------------------------------------------------------------------
# built-in systems

BUILTIN_NAMES = ("affine_particle", "sphere_cylinder")

_POTENTIAL_PRESETS = {
    "affine_particle": {
        None: "0",
        "zero": "0",
        "harmonic": "(x^2 + y^2)/2",
    },
    "sphere_cylinder": {
        None: "g*z",
        "gravity": "g*z",
    },
}


def _require(params: Mapping[str, float], names: Sequence[str], builtin_name: str) -> None:
    for p in names:
        if p not in params:
            raise ModelError(f"builtin '{builtin_name}' needs parameter '{p}'")


def builtin(name: str, params: Mapping[str, float] | None = None,
            potential: str | None = None) -> ModelSpec:
    """Construct one of the built-in models.

    ``affine_particle``: parameter ``c`` (affine term of the constraint);
    potential defaults to ``0``, presets ``zero`` / ``harmonic``, or any
    expression in ``x, y, z``.

    ``sphere_cylinder``: parameters ``a, r, I, Omega`` (sphere radius,
    cylinder radius minus ``a``, moment of inertia, cylinder spin rate)
    plus ``g`` when the default potential ``g*z`` is used; a custom
    potential may be any expression in ``z, gamma``.
    """
    params = dict(params or {})
    presets = _POTENTIAL_PRESETS.get(name)
    if presets is None:
        raise ModelError(f"unknown builtin '{name}' (have {', '.join(BUILTIN_NAMES)})")
    v_text = presets.get(potential, potential)
    if name == "affine_particle":
        _require(params, ["c"], name)
        return ModelSpec(
            n=3, k=1, coords=("x", "y", "z"),
            A=(("1", "0", "0"), ("0", "1", "0"), ("0", "0", "1")),
            b=("0", "0", "0"),
            V=v_text,
            S=(("-y", "x", "1"),),
            s=("-c",),
            params=params,
            guards=("y^2",),  # chart excludes y = 0; both half-spaces are fine
            name="affine_particle",
        )
    # sphere_cylinder
    _require(params, ["a", "r", "I", "Omega"], name)
    if potential is None:
        _require(params, ["g"], name)
    ct = "cos(theta)"
    return ModelSpec(
        n=5, k=2, coords=("z", "gamma", "phi", "psi", "theta"),
        A=(
            ("1", "0", "0", "0", "0"),
            ("0", "r^2", "0", "0", "0"),
            ("0", "0", "I", f"I*{ct}", "0"),
            ("0", "0", f"I*{ct}", "I", "0"),
            ("0", "0", "0", "0", "I"),
        ),
        b=("0", "0", "0", "0", "0"),
        V=v_text,
        S=(
            ("1", "0", "0", "a*sin(theta)*cos(gamma - phi)", "a*sin(gamma - phi)"),
            ("0", "r", "a", f"a*{ct}", "0"),
        ),
        s=("0", "-(r + a)*Omega"),
        params=params,
        guards=("sin(theta)",),
        name="sphere_cylinder",
    )


# ---------------------------------------------------------------------------
# JSON model documents

def model_to_dict(m: ModelSpec) -> dict:
    return {
        "n": m.n,
        "k": m.k,
        "coords": list(m.coords),
        "A": [[str(e) for e in row] for row in m.A],
        "b": [str(e) for e in m.b],
        "V": str(m.V),
        "S": [[str(e) for e in row] for row in m.S],
        "s": [str(e) for e in m.s],
        "params": dict(m.params),
        "guards": [str(e) for e in m.guards],
        "name": m.name,
    }


def model_from_dict(d: Mapping) -> ModelSpec:
    try:
        return ModelSpec(
            n=int(d["n"]), k=int(d["k"]), coords=tuple(d["coords"]),
            A=tuple(tuple(row) for row in d["A"]),
            b=tuple(d["b"]), V=d["V"],
            S=tuple(tuple(row) for row in d["S"]),
            s=tuple(d["s"]),
            params=dict(d.get("params", {})),
            guards=tuple(d.get("guards", ())),
            name=str(d.get("name", "")),
        )
    except KeyError as exc:
        raise ModelError(f"model document is missing field {exc}") from None


def load_model(source: str, params: Mapping[str, float] | None = None,
               potential: str | None = None) -> ModelSpec:
    """Load a model from ``builtin:<name>`` or a JSON file path.

    ``params`` override (or supply) parameter values; ``potential``
    replaces V for built-ins and JSON models alike.
    """
    if source.startswith("builtin:"):
        return builtin(source[len("builtin:"):], params=params, potential=potential)
    doc = json.loads(Path(source).read_text())
    if params:
        doc.setdefault("params", {}).update(params)
    m = model_from_dict(doc)
    if potential is not None:
        m = ModelSpec(n=m.n, k=m.k, coords=m.coords, A=m.A, b=m.b, V=potential,
                      S=m.S, s=m.s, params=m.params, guards=m.guards, name=m.name)
    return m

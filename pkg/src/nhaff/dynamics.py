"""Fixed-step integration of the constrained equations of motion.

The equations ``A(q) qdd + ell(q, v) = S(q)^T lam`` with the multiplier
of :mod:`nhaff.reaction` define a smooth vector field on all of (q, v)
space that is tangent to the constraint manifold; classical RK4 with a
fixed step integrates it, and (by default) the velocity is re-projected
onto the constraint fiber after every accepted step.  Configurations are
never projected: the constraint restricts velocities only.

Every trajectory records the diagnostics the conservation tests consume:
energy, constraint residual, the reaction covector, its power R.v and
R.xi.  Integration is deterministic: two runs from identical inputs
produce bit-identical trajectories.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import DEFAULT_CONSTRAINT_TOL, EvaluatedFrame, ModelError, ModelSpec, State, \
    evaluate_frame, project_velocity
from .reaction import ell, multiplier, xi

__all__ = [
    "IntegrateOpts",
    "Trajectory",
    "acceleration",
    "energy",
    "momentum",
    "integrate",
]

CSV_FLOAT_FMT = "%.17g"


def energy(f: EvaluatedFrame, v: Sequence[float]) -> float:
    """Jacobi integral 1/2 v.A(q) v + V(q); the gyrostatic term cancels."""
    v = np.asarray(v, dtype=float)
    return 0.5 * float(v @ f.A @ v) + f.V


def momentum(f: EvaluatedFrame, v: Sequence[float], Y: Sequence[float]) -> float:
    """Momentum (A v - b) . Y of the generator value Y at q."""
    v = np.asarray(v, dtype=float)
    return float((f.A @ v - f.b) @ np.asarray(Y, dtype=float))


def acceleration(f: EvaluatedFrame, v: Sequence[float],
                 constraint_tol: float | None = DEFAULT_CONSTRAINT_TOL) -> np.ndarray:
    """Constrained acceleration Ainv (S^T lam - ell) at (f.q, v).

    Satisfies the differentiated constraint S qdd + sigma = 0 exactly (up
    to the linear solve), so the continuous flow preserves S v + s.
    """
    v = np.asarray(v, dtype=float)
    lam = multiplier(f, v, constraint_tol)
    return f.Ainv @ (f.S.T @ lam - ell(f, v))


@dataclass
class IntegrateOpts:
    """Knobs for :func:`integrate`."""

    project: bool = True            # re-project velocity after each step
    stride: int = 10                # store every `stride`-th step (and the last)
    constraint_tol: float = DEFAULT_CONSTRAINT_TOL
    guard_min: float = 1e-8         # stop when any guard drops to this level


@dataclass
class Trajectory:
    """Stored samples of one integration run plus diagnostics.

    ``R[j]`` is the reaction covector at sample j, ``work_rate = R.v`` its
    power and ``xi_work_rate = R.xi(q)``; the two agree on the fiber
    because the reaction annihilates the constraint distribution.
    """

    t: np.ndarray              # (m,)
    q: np.ndarray              # (m, n)
    v: np.ndarray              # (m, n)
    E: np.ndarray              # (m,)
    residual: np.ndarray       # (m,)  max |S v + s|
    R: np.ndarray              # (m, n)
    work_rate: np.ndarray      # (m,)
    xi_work_rate: np.ndarray   # (m,)
    termination: str           # completed | guard_stop | solver_error
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.t.size

    def to_csv(self, target) -> None:
        """Write the trajectory CSV (floats with 17 significant digits).

        ``target`` is a path or a writable text file.  Header:
        ``t,q1..qn,v1..vn,E,residual,R1..Rn,work_rate,xi_work_rate``.
        """
        n = self.q.shape[1]
        cols = (
            ["t"]
            + [f"q{i}" for i in range(1, n + 1)]
            + [f"v{i}" for i in range(1, n + 1)]
            + ["E", "residual"]
            + [f"R{i}" for i in range(1, n + 1)]
            + ["work_rate", "xi_work_rate"]
        )
        close = False
        if isinstance(target, (str, Path)):
            fh = open(target, "w", newline="")
            close = True
        else:
            fh = target
        try:
            fh.write(",".join(cols) + "\n")
            for j in range(len(self)):
                row = [self.t[j], *self.q[j], *self.v[j], self.E[j], self.residual[j],
                       *self.R[j], self.work_rate[j], self.xi_work_rate[j]]
                fh.write(",".join(CSV_FLOAT_FMT % x for x in row) + "\n")
        finally:
            if close:
                fh.close()

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


class _Recorder:
    def __init__(self):
        self.rows: list[tuple] = []

    def add(self, t: float, f: EvaluatedFrame, v: np.ndarray) -> None:
        lam = multiplier(f, v, None)
        R = f.S.T @ lam
        resid = float(np.max(np.abs(f.S @ v + f.s)))
        self.rows.append((t, f.q.copy(), v.copy(), energy(f, v), resid, R,
                          float(R @ v), float(R @ xi(f))))

    def build(self, termination: str, meta: dict) -> Trajectory:
        cols = list(zip(*self.rows))
        return Trajectory(
            t=np.array(cols[0], dtype=float),
            q=np.array(cols[1], dtype=float),
            v=np.array(cols[2], dtype=float),
            E=np.array(cols[3], dtype=float),
            residual=np.array(cols[4], dtype=float),
            R=np.array(cols[5], dtype=float),
            work_rate=np.array(cols[6], dtype=float),
            xi_work_rate=np.array(cols[7], dtype=float),
            termination=termination,
            meta=meta,
        )


def integrate(m: ModelSpec, s0: State, t_end: float, dt: float,
              opts: IntegrateOpts | None = None) -> Trajectory:
    """Integrate from ``s0`` to ``t_end`` with fixed step ``dt`` (RK4).

    The initial velocity is projected onto the constraint fiber (the
    applied delta lands in ``meta['v0_projection_delta']``).  The number
    of steps is ``round(t_end / dt)``, so ``t_end`` is honored exactly
    only when it is a multiple of ``dt``.  Integration stops early with
    ``termination='guard_stop'`` when a guard expression falls to
    ``opts.guard_min`` and with ``'solver_error'`` on NaN/Inf or an
    evaluation failure; both cases keep the samples stored so far.
    """
    opts = opts or IntegrateOpts()
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if opts.stride < 1:
        raise ValueError("stride must be >= 1")
    n_steps = int(round(t_end / dt))
    if n_steps < 1:
        raise ValueError(f"t_end={t_end} is shorter than one step dt={dt}")

    q = np.asarray(s0.q, dtype=float).copy()
    frame = evaluate_frame(m, q)
    v_raw = np.asarray(s0.v, dtype=float)
    v = project_velocity(frame, v_raw)
    meta = {
        "model": m.name,
        "integrator": "rk4",
        "dt": dt,
        "t_end": t_end,
        "stride": opts.stride,
        "project": opts.project,
        "v0_projection_delta": float(np.linalg.norm(v - v_raw)),
    }

    rec = _Recorder()
    rec.add(0.0, frame, v)
    termination = "completed"
    half = 0.5 * dt

    def acc(f: EvaluatedFrame, w: np.ndarray) -> np.ndarray:
        lam = multiplier(f, w, None)
        return f.Ainv @ (f.S.T @ lam - ell(f, w))

    for j in range(1, n_steps + 1):
        try:
            a1 = acc(frame, v)
            f2 = evaluate_frame(m, q + half * v)
            v2 = v + half * a1
            a2 = acc(f2, v2)
            f3 = evaluate_frame(m, q + half * v2)
            v3 = v + half * a2
            a3 = acc(f3, v3)
            f4 = evaluate_frame(m, q + dt * v3)
            v4 = v + dt * a3
            a4 = acc(f4, v4)
            q_new = q + (dt / 6.0) * (v + 2.0 * v2 + 2.0 * v3 + v4)
            v_new = v + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(v_new))):
                termination = "solver_error"
                break
            frame_new = evaluate_frame(m, q_new)
        except ModelError:
            termination = "solver_error"
            break
        if m.guards and np.any(frame_new.guard_values <= opts.guard_min):
            termination = "guard_stop"
            break
        if opts.project:
            v_new = project_velocity(frame_new, v_new)
        q, v, frame = q_new, v_new, frame_new
        if j % opts.stride == 0 or j == n_steps:
            rec.add(j * dt, frame, v)

    return rec.build(termination, meta)

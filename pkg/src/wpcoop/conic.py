"""Minimal cone-program IR and a Clarabel-backed solve contract.

Supports exactly the atoms the relaxed allocation programs need: scalar
variables with bounds, Hermitian PSD matrix variables, linear
equality/inequality constraints over real-linear functionals, and
hypographs of the perspective-log function

    t <= tau * log2(1 + x / tau)

with the closure convention value 0 at tau = 0 (so t <= 0 there). The atom
is encoded with one exponential cone per instance via the identity
t*ln2 <= tau*ln((tau + x)/tau), i.e. (t*ln2, tau, tau + x) in
K_exp = {(a,b,c): c >= b*exp(a/b), b > 0} plus its closure.

Hermitian N x N PSD variables are parametrized by their N^2 real degrees
of freedom and constrained through the standard real embedding
[[Re X, -Im X], [Im X, Re X]] >= 0 of dimension 2N; callers only ever see
complex matrices and real functionals Tr(A X).

The backend is Clarabel (interior point; nonnegative, exponential and PSD
cones). Solving never mutates the program, so distinct programs may be
built and solved concurrently. A piecewise-linear under-approximation of
the perspective atoms (chord cuts) exists for cross-checking only.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

__all__ = [
    "ConicError",
    "DiagnosticError",
    "LinExpr",
    "ScalarVar",
    "MatVar",
    "ConicProgram",
    "ConicSolution",
    "Tolerances",
    "solve",
]

_LN2 = math.log(2.0)
DUMP_FORMAT = "wpcoop-coneprog/1"


class ConicError(Exception):
    """Malformed program construction."""


class DiagnosticError(Exception):
    """A solved quantity violates a contract; carries residual details."""

    def __init__(self, message: str, residuals: dict | None = None):
        super().__init__(message)
        self.residuals = dict(residuals or {})


class LinExpr:
    """Real-linear functional over the program's flat dof vector."""

    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs: dict | None = None, const: float = 0.0):
        self.coeffs = dict(coeffs) if coeffs else {}
        self.const = float(const)

    def copy(self) -> "LinExpr":
        return LinExpr(self.coeffs, self.const)

    def _iadd(self, other: "LinExpr", sign: float) -> "LinExpr":
        out = self.copy()
        for k, c in other.coeffs.items():
            out.coeffs[k] = out.coeffs.get(k, 0.0) + sign * c
        out.const += sign * other.const
        return out

    def __add__(self, other):
        return self._iadd(as_expr(other), 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._iadd(as_expr(other), -1.0)

    def __rsub__(self, other):
        return as_expr(other)._iadd(self, -1.0)

    def __neg__(self):
        return LinExpr({k: -c for k, c in self.coeffs.items()}, -self.const)

    def __mul__(self, s):
        s = float(s)
        return LinExpr({k: s * c for k, c in self.coeffs.items()}, s * self.const)

    __rmul__ = __mul__

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(c * x[k] for k, c in self.coeffs.items())


def as_expr(v) -> LinExpr:
    if isinstance(v, LinExpr):
        return v
    if isinstance(v, ScalarVar):
        return LinExpr({v.index: 1.0})
    if isinstance(v, (int, float, np.floating, np.integer)):
        return LinExpr(const=float(v))
    raise ConicError(f"cannot interpret {v!r} as a linear expression")


@dataclass(frozen=True)
class ScalarVar:
    name: str
    index: int
    lb: float | None = None
    ub: float | None = None

    def __add__(self, other):
        return as_expr(self) + other

    __radd__ = __add__

    def __sub__(self, other):
        return as_expr(self) - other

    def __rsub__(self, other):
        return as_expr(other) - as_expr(self)

    def __mul__(self, s):
        return as_expr(self) * s

    __rmul__ = __mul__

    def __neg__(self):
        return -as_expr(self)


@dataclass(frozen=True)
class MatVar:
    """Hermitian PSD matrix variable of dimension dim.

    Dof layout starting at offset: dim diagonal entries, then the real
    parts of the strict upper triangle (row-major pair order), then the
    imaginary parts.
    """

    name: str
    dim: int
    offset: int

    @property
    def n_dof(self) -> int:
        return self.dim * self.dim

    def _pairs(self):
        for i in range(self.dim):
            for j in range(i + 1, self.dim):
                yield i, j

    def trace_with(self, a: np.ndarray) -> LinExpr:
        """Real-linear functional Tr(A X) for Hermitian A."""
        a = np.asarray(a, dtype=np.complex128)
        if a.shape != (self.dim, self.dim):
            raise ConicError(f"coefficient matrix must be {self.dim}x{self.dim}")
        if np.max(np.abs(a - a.conj().T)) > 1e-9 * max(1.0, np.max(np.abs(a))):
            raise ConicError("coefficient matrix must be Hermitian")
        coeffs = {}
        for i in range(self.dim):
            c = float(a[i, i].real)
            if c != 0.0:
                coeffs[self.offset + i] = c
        npair = self.dim * (self.dim - 1) // 2
        for k, (i, j) in enumerate(self._pairs()):
            re_c = 2.0 * float(a[i, j].real)
            im_c = 2.0 * float(a[i, j].imag)
            if re_c != 0.0:
                coeffs[self.offset + self.dim + k] = re_c
            if im_c != 0.0:
                coeffs[self.offset + self.dim + npair + k] = im_c
        return LinExpr(coeffs)

    def trace(self) -> LinExpr:
        return LinExpr({self.offset + i: 1.0 for i in range(self.dim)})

    def quad_form(self, h: np.ndarray) -> LinExpr:
        """h^H X h as a real-linear functional (h a complex vector)."""
        h = np.asarray(h, dtype=np.complex128).reshape(-1)
        return self.trace_with(np.outer(h, h.conj()))

    def assemble(self, x: np.ndarray) -> np.ndarray:
        """Reconstruct the complex Hermitian matrix from the dof vector."""
        m = np.zeros((self.dim, self.dim), dtype=np.complex128)
        for i in range(self.dim):
            m[i, i] = x[self.offset + i]
        npair = self.dim * (self.dim - 1) // 2
        for k, (i, j) in enumerate(self._pairs()):
            v = x[self.offset + self.dim + k] + 1j * x[self.offset + self.dim + npair + k]
            m[i, j] = v
            m[j, i] = v.conjugate()
        return m


@dataclass
class Tolerances:
    """Solver accuracy knobs; defaults target 1e-8 feasibility/gap."""

    feas: float = 1e-8
    gap_abs: float = 1e-8
    gap_rel: float = 1e-8
    max_iter: int = 200


class ConicProgram:
    """A mixed linear / PSD / perspective-log cone program."""

    def __init__(self, name: str = "prog"):
        self.name = name
        self.scalars: list[ScalarVar] = []
        self.matrices: list[MatVar] = []
        self._names: set[str] = set()
        self.n_dof = 0
        # (expr, label): expr == 0 / expr <= 0
        self.eqs: list[tuple[LinExpr, str]] = []
        self.ineqs: list[tuple[LinExpr, str]] = []
        # (t_expr, tau_expr, x_expr, label)
        self.atoms: list[tuple[LinExpr, LinExpr, LinExpr, str]] = []
        self.objective: LinExpr = LinExpr()
        self.sense: str = "min"

    # -- variables ---------------------------------------------------------

    def _register(self, name: str) -> None:
        if name in self._names:
            raise ConicError(f"duplicate variable name {name!r}")
        self._names.add(name)

    def scalar(self, name: str, lb: float | None = None,
               ub: float | None = None) -> ScalarVar:
        self._register(name)
        v = ScalarVar(name=name, index=self.n_dof, lb=lb, ub=ub)
        self.n_dof += 1
        self.scalars.append(v)
        return v

    def hermitian_psd(self, name: str, dim: int) -> MatVar:
        """Declare an N x N Hermitian matrix variable constrained PSD."""
        if dim < 1:
            raise ConicError(f"matrix dimension must be >= 1, got {dim}")
        self._register(name)
        m = MatVar(name=name, dim=int(dim), offset=self.n_dof)
        self.n_dof += m.n_dof
        self.matrices.append(m)
        return m

    # -- constraints -------------------------------------------------------

    def add_eq(self, lhs, rhs=0.0, label: str = "") -> None:
        self.eqs.append((as_expr(lhs) - as_expr(rhs), label))

    def add_le(self, lhs, rhs=0.0, label: str = "") -> None:
        self.ineqs.append((as_expr(lhs) - as_expr(rhs), label))

    def add_ge(self, lhs, rhs=0.0, label: str = "") -> None:
        self.ineqs.append((as_expr(rhs) - as_expr(lhs), label))

    def _certify_nonneg(self, expr: LinExpr, what: str) -> None:
        """Cheap syntactic nonnegativity certificate for atom arguments."""
        if expr.const < -1e-12:
            raise ConicError(f"{what} has negative constant part {expr.const}")
        lo = {v.index: v.lb for v in self.scalars}
        mat_diag = {}
        for m in self.matrices:
            for i in range(m.dim):
                mat_diag[m.offset + i] = m
        # group matrix-dof coefficients back into per-matrix functionals
        mats_touched: dict[str, dict[int, float]] = {}
        for k, c in expr.coeffs.items():
            owner = None
            for m in self.matrices:
                if m.offset <= k < m.offset + m.n_dof:
                    owner = m
                    break
            if owner is None:
                if c > 0 and (lo.get(k) is None or lo[k] < 0):
                    raise ConicError(
                        f"{what} uses variable with unconstrained sign "
                        f"(dof {k}, coefficient {c})")
                if c < 0:
                    raise ConicError(
                        f"{what} has a negative coefficient {c} on dof {k}")
            else:
                mats_touched.setdefault(owner.name, {})[k - owner.offset] = c
        for m in self.matrices:
            rel = mats_touched.get(m.name)
            if not rel:
                continue
            # rebuild the Hermitian coefficient matrix and require PSD
            a = np.zeros((m.dim, m.dim), dtype=np.complex128)
            npair = m.dim * (m.dim - 1) // 2
            pair_list = list(m._pairs())
            for k, c in rel.items():
                if k < m.dim:
                    a[k, k] = c
                elif k < m.dim + npair:
                    i, j = pair_list[k - m.dim]
                    a[i, j] += c / 2.0
                    a[j, i] += c / 2.0
                else:
                    i, j = pair_list[k - m.dim - npair]
                    a[i, j] += 1j * c / 2.0
                    a[j, i] += -1j * c / 2.0
            w = np.linalg.eigvalsh(a)
            if w.min() < -1e-9 * max(1.0, w.max()):
                raise ConicError(
                    f"{what} applies a non-PSD functional to matrix {m.name!r}")

    def add_perspective_log_hypograph(self, t, tau, x, label: str = "") -> int:
        """Add t <= tau*log2(1 + x/tau); returns the atom's handle.

        tau and x must be certifiably nonnegative (nonnegative constants,
        nonnegatively-bounded scalars with nonnegative coefficients, or PSD
        functionals of the matrix variables); otherwise construction fails.
        At tau = 0 the feasible set is t <= 0 for any x >= 0.
        """
        t_e, tau_e, x_e = as_expr(t), as_expr(tau), as_expr(x)
        self._certify_nonneg(tau_e, "perspective-log tau argument")
        self._certify_nonneg(x_e, "perspective-log x argument")
        self.atoms.append((t_e, tau_e, x_e, label))
        return len(self.atoms) - 1

    def set_objective(self, expr, sense: str = "min") -> None:
        if sense not in ("min", "max"):
            raise ConicError("sense must be 'min' or 'max'")
        self.objective = as_expr(expr)
        self.sense = sense

    # -- debugging dump ----------------------------------------------------

    def _dof_label(self, k: int) -> str:
        for v in self.scalars:
            if v.index == k:
                return v.name
        for m in self.matrices:
            if m.offset <= k < m.offset + m.n_dof:
                rel = k - m.offset
                npair = m.dim * (m.dim - 1) // 2
                if rel < m.dim:
                    return f"{m.name}[{rel},{rel}]"
                pair_list = list(m._pairs())
                if rel < m.dim + npair:
                    i, j = pair_list[rel - m.dim]
                    return f"{m.name}.re[{i},{j}]"
                i, j = pair_list[rel - m.dim - npair]
                return f"{m.name}.im[{i},{j}]"
        return f"dof[{k}]"

    def _fmt_expr(self, e: LinExpr) -> str:
        parts = [f"{e.coeffs[k]!r}*{self._dof_label(k)}"
                 for k in sorted(e.coeffs)]
        if e.const != 0.0 or not parts:
            parts.append(repr(e.const))
        return " + ".join(parts)

    def dump(self) -> str:
        """Versioned plain-text rendering for debugging and golden tests."""
        out = io.StringIO()
        out.write(f"{DUMP_FORMAT} name={self.name}\n")
        out.write(f"objective {self.sense} {self._fmt_expr(self.objective)}\n")
        for v in self.scalars:
            out.write(f"scalar {v.name} lb={v.lb!r} ub={v.ub!r}\n")
        for m in self.matrices:
            out.write(f"hermitian_psd {m.name} dim={m.dim}\n")
        for e, lab in self.eqs:
            out.write(f"eq [{lab}] {self._fmt_expr(e)} == 0\n")
        for e, lab in self.ineqs:
            out.write(f"le [{lab}] {self._fmt_expr(e)} <= 0\n")
        for t_e, tau_e, x_e, lab in self.atoms:
            out.write(f"persp_log2 [{lab}] t: {self._fmt_expr(t_e)} | "
                      f"tau: {self._fmt_expr(tau_e)} | x: {self._fmt_expr(x_e)}\n")
        return out.getvalue()


@dataclass
class ConicSolution:
    """Primal result of a solve, with self-checked residual summaries."""

    status: str                      # optimal | infeasible | unbounded | numerical_failure
    raw_status: str
    objective: float | None         # recomputed from primal values, user sense
    solver_objective: float | None  # backend-reported, user sense
    scalars: dict
    matrices: dict
    residuals: dict
    certificate: str = ""
    iterations: int = 0
    solve_time: float = 0.0
    x: np.ndarray | None = None

    def value(self, var) -> float:
        if isinstance(var, ScalarVar):
            return self.scalars[var.name]
        return self.scalars[str(var)]

    def matrix(self, var) -> np.ndarray:
        if isinstance(var, MatVar):
            return self.matrices[var.name]
        return self.matrices[str(var)]

    def eval_expr(self, expr: LinExpr) -> float:
        if self.x is None:
            raise DiagnosticError("no primal point available")
        return expr.value(self.x)


def _embed_psd_rows(m: MatVar, row0: int, rows, cols, vals) -> int:
    """Append svec rows of the 2N real embedding of matrix variable m.

    Clarabel's PSD triangle cone packs the upper triangle column-major
    with off-diagonal entries scaled by sqrt(2).
    """
    n = m.dim
    npair = n * (n - 1) // 2
    pair_index = {p: k for k, p in enumerate(m._pairs())}
    rt2 = math.sqrt(2.0)
    r = row0
    for col in range(2 * n):
        for row in range(col + 1):
            scale = 1.0 if row == col else rt2
            # embedded S[row, col]; S = [[Re, -Im], [Im, Re]]
            if row < n and col < n:
                i, j = row, col
                if i == j:
                    dof, coef = m.offset + i, 1.0
                else:
                    dof, coef = m.offset + n + pair_index[(i, j)], 1.0
            elif row < n <= col:
                i, j = row, col - n          # entry -Im X[i, j]
                if i == j:
                    dof, coef = None, 0.0    # Im of a diagonal entry is 0
                elif i < j:
                    dof, coef = m.offset + n + npair + pair_index[(i, j)], -1.0
                else:
                    dof, coef = m.offset + n + npair + pair_index[(j, i)], 1.0
            else:
                i, j = row - n, col - n
                if i == j:
                    dof, coef = m.offset + i, 1.0
                else:
                    dof, coef = m.offset + n + pair_index[(i, j)], 1.0
            if dof is not None and coef != 0.0:
                # s = b - A x with s_r = scale*coef*x_dof  =>  A[r, dof] = -scale*coef
                rows.append(r)
                cols.append(dof)
                vals.append(-scale * coef)
            r += 1
    return r


def _chord_cuts(grid: np.ndarray):
    """Chord lines (a_k, b_k) with log2(1+u) >= a_k*u + b_k on [u_k, u_k+1]."""
    u = np.asarray(grid, dtype=float)
    g = np.log2(1.0 + u)
    a = (g[1:] - g[:-1]) / (u[1:] - u[:-1])
    b = g[:-1] - a * u[:-1]
    return list(zip(a, b)) + [(0.0, float(g[-1]))]  # constant cap beyond grid


def solve(prog: ConicProgram, tolerances: Tolerances | None = None,
          verbose: bool = False, pl_grid: np.ndarray | None = None) -> ConicSolution:
    """Solve the program with Clarabel.

    status is "optimal" only when the backend converged; KKT residuals are
    re-derived from the returned primal point and the reported objective is
    cross-checked against the objective recomputed from the primal values.
    Numerical trouble is reported as status "numerical_failure", never as
    silent garbage. pl_grid switches the perspective atoms to chord-cut
    under-approximation (cross-checking only).
    """
    import clarabel

    tol = tolerances or Tolerances()
    n = prog.n_dof
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    b: list[float] = []
    cones = []
    r = 0

    def push_expr(expr: LinExpr, row: int, sign: float = 1.0) -> None:
        # contributes sign*expr to s_row via s = b - A x
        for k, c in expr.coeffs.items():
            rows.append(row)
            cols.append(k)
            vals.append(sign * c)

    # zero cone: expr == 0  ->  s = -(expr) ... encode s = b - Ax with
    # A = coeffs, b = -const so that s = -const... s must be 0:
    n_eq = len(prog.eqs)
    for e, _ in prog.eqs:
        push_expr(e, r)
        b.append(-e.const)
        r += 1
    if n_eq:
        cones.append(clarabel.ZeroConeT(n_eq))

    # nonnegative cone: expr <= 0  ->  s = -const - coeffs.x >= 0
    ineq_rows = []
    for e, _ in prog.ineqs:
        ineq_rows.append((e, r))
        push_expr(e, r)
        b.append(-e.const)
        r += 1
    n_bounds = 0
    for v in prog.scalars:
        if v.lb is not None:
            rows.append(r)
            cols.append(v.index)
            vals.append(-1.0)
            b.append(-float(v.lb))
            r += 1
            n_bounds += 1
        if v.ub is not None:
            rows.append(r)
            cols.append(v.index)
            vals.append(1.0)
            b.append(float(v.ub))
            r += 1
            n_bounds += 1
    n_pl = 0
    if pl_grid is not None:
        cuts = _chord_cuts(pl_grid)
        for t_e, tau_e, x_e, _ in prog.atoms:
            for a_k, b_k in cuts:
                e = t_e - (a_k * x_e + b_k * tau_e)
                push_expr(e, r)
                b.append(-e.const)
                r += 1
                n_pl += 1
    n_ineq = len(prog.ineqs) + n_bounds + n_pl
    if n_ineq:
        cones.append(clarabel.NonnegativeConeT(n_ineq))

    # exponential cones: (t*ln2, tau, tau + x) in K_exp
    if pl_grid is None:
        for t_e, tau_e, x_e, _ in prog.atoms:
            for expr in (t_e * _LN2, tau_e, tau_e + x_e):
                push_expr(expr, r, sign=-1.0)
                b.append(expr.const)
                r += 1
            cones.append(clarabel.ExponentialConeT())

    # PSD cones: real embedding per Hermitian matrix variable
    for m in prog.matrices:
        r_new = _embed_psd_rows(m, r, rows, cols, vals)
        b.extend([0.0] * (r_new - r))
        r = r_new
        cones.append(clarabel.PSDTriangleConeT(2 * m.dim))

    a_mat = sparse.csc_matrix((vals, (rows, cols)), shape=(r, n))
    b_vec = np.asarray(b, dtype=float)
    q = np.zeros(n)
    for k, c in prog.objective.coeffs.items():
        q[k] += c
    obj_sign = 1.0 if prog.sense == "min" else -1.0
    q = obj_sign * q

    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.tol_feas = tol.feas
    settings.tol_gap_abs = tol.gap_abs
    settings.tol_gap_rel = tol.gap_rel
    settings.max_iter = tol.max_iter
    solver = clarabel.DefaultSolver(sparse.csc_matrix((n, n)), q, a_mat, b_vec,
                                    cones, settings)
    raw = solver.solve()
    raw_status = str(raw.status)

    status_map = {
        "Solved": "optimal",
        "AlmostSolved": "optimal",
        "PrimalInfeasible": "infeasible",
        "AlmostPrimalInfeasible": "infeasible",
        "DualInfeasible": "unbounded",
        "AlmostDualInfeasible": "unbounded",
    }
    status = status_map.get(raw_status, "numerical_failure")

    scalars: dict = {}
    matrices: dict = {}
    objective = solver_obj = None
    residuals = {"r_prim": float(raw.r_prim), "r_dual": float(raw.r_dual)}
    certificate = ""
    x = np.asarray(raw.x, dtype=float) if status == "optimal" else None

    if status == "optimal":
        scalars = {v.name: float(x[v.index]) for v in prog.scalars}
        matrices = {m.name: m.assemble(x) for m in prog.matrices}
        objective = obj_sign * float(q @ x) + prog.objective.const
        solver_obj = obj_sign * float(raw.obj_val) + prog.objective.const
        denom = max(1.0, abs(objective))
        residuals["obj_selfcheck_rel"] = abs(objective - solver_obj) / denom
        if raw_status == "AlmostSolved":
            residuals["reduced_accuracy"] = 1.0
    elif status == "infeasible":
        z = np.asarray(raw.z, dtype=float)
        certificate = (f"primal infeasibility certificate: |z| = "
                       f"{float(np.linalg.norm(z)):.3e}, b'z = "
                       f"{float(b_vec @ z):.3e}")
    elif status == "unbounded":
        certificate = "dual infeasibility certificate (objective unbounded)"

    return ConicSolution(
        status=status,
        raw_status=raw_status,
        objective=objective,
        solver_objective=solver_obj,
        scalars=scalars,
        matrices=matrices,
        residuals=residuals,
        certificate=certificate,
        iterations=int(raw.iterations),
        solve_time=float(raw.solve_time),
        x=x,
    )

"""Region-of-attraction estimation as a nonlinear SOS program.

For ``xdot = phi(x)`` with ``phi(0) = 0`` we look for a polynomial ``v``, a
scalar ``b`` and SOS multipliers ``s1``, ``s2`` with

    s2 (v - iota) - dv/dx phi - rho   in SOS
    s1 (p - b) - v + iota             in SOS
    v - rho                           in SOS

while maximizing ``b``.  Then ``{p <= b}`` lies inside ``{v <= iota}``,
which is an invariant subset of the region of attraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import gram
from .model import ConstraintExpr, DecisionVar, Factor, Iterate, NlSosProblem, eval_g
from .poly import MonomialBasis, Polynomial, parse_polynomial


class NotHurwitzError(ValueError):
    pass


class _FastPoly:
    """Vectorized evaluation of a list of polynomials on many points."""

    def __init__(self, polys):
        monos = sorted({m for p in polys for m, _ in p.items()})
        n = polys[0].nvars
        self.E = np.array(monos, dtype=float).reshape(len(monos), n)
        self.C = np.array([[p.coeff(m) for p in polys] for m in monos]).reshape(len(monos), len(polys))

    def __call__(self, X):
        X = np.atleast_2d(X)
        if not len(self.E):
            return np.zeros((X.shape[0], self.C.shape[1]))
        V = np.prod(X[:, None, :] ** self.E[None, :, :], axis=2)
        return V @ self.C


@dataclass
class PolySystem:
    phi: list[Polynomial]
    name: str = ""

    def __post_init__(self):
        if not self.phi:
            raise ValueError("empty vector field")
        n = self.phi[0].nvars
        if len(self.phi) != n or any(f.nvars != n for f in self.phi):
            raise ValueError("vector field must have one component per state")
        for i, f in enumerate(self.phi):
            if abs(f.coeff((0,) * n)) > 0.0:
                raise ValueError(f"phi_{i + 1}(0) != 0: the origin must be an equilibrium")
        self._fast = _FastPoly(self.phi)

    @property
    def n(self) -> int:
        return len(self.phi)

    @classmethod
    def parse(cls, lines, name: str = "") -> "PolySystem":
        """One component per entry, e.g. ``["-x2", "x1 + (x1^2 - 1)*x2"]``."""
        lines = list(lines)
        return cls([parse_polynomial(t, len(lines)) for t in lines], name)

    @classmethod
    def linear(cls, A) -> "PolySystem":
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        xs = [Polynomial.var(n, j) for j in range(n)]
        phi = []
        for i in range(n):
            acc = Polynomial.zero(n)
            for j in range(n):
                acc = acc + xs[j] * float(A[i, j])
            phi.append(acc)
        return cls(phi, "linear")

    def linearization(self) -> np.ndarray:
        n = self.n
        A = np.zeros((n, n))
        for i, f in enumerate(self.phi):
            for j in range(n):
                e = [0] * n
                e[j] = 1
                A[i, j] = f.coeff(tuple(e))
        return A

    def __call__(self, X) -> np.ndarray:
        return self._fast(X)

    def vdot(self, v: Polynomial) -> Polynomial:
        acc = Polynomial.zero(self.n)
        for i, f in enumerate(self.phi):
            acc = acc + v.diff(i) * f
        return acc


def cubic_1d() -> PolySystem:
    """xdot = -x + x^3, region of attraction (-1, 1)."""
    return PolySystem.parse(["-x1 + x1^3"], "cubic_1d")


def van_der_pol() -> PolySystem:
    """Van der Pol oscillator in reversed time."""
    return PolySystem.parse(["-x2", "x1 + (x1^2 - 1)*x2"], "van_der_pol")


def random_cubic(n: int = 3, seed: int = 0) -> PolySystem:
    """Seeded stable system: Hurwitz linear part plus small cubic terms."""
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(n, n))
    S = rng.normal(size=(n, n))
    A = -(G @ G.T / n + 0.5 * np.eye(n)) + 0.5 * (S - S.T)
    xs = [Polynomial.var(n, j) for j in range(n)]
    phi = []
    for i in range(n):
        f = Polynomial.zero(n)
        for j in range(n):
            f = f + xs[j] * round(float(A[i, j]), 3)
        for _ in range(2):
            a, b, c = rng.integers(0, n, size=3)
            f = f + xs[a] * xs[b] * xs[c] * round(float(rng.normal(scale=0.3)), 3)
        phi.append(f)
    return PolySystem(phi, f"random_cubic_{n}_{seed}")


SYSTEMS = {
    "cubic_1d": cubic_1d,
    "van_der_pol": van_der_pol,
    "random_cubic": random_cubic,
}


def sum_squares(n: int) -> Polynomial:
    acc = Polynomial.zero(n)
    for i in range(n):
        acc = acc + Polynomial.var(n, i) ** 2
    return acc


def _quadratic_part(p: Polynomial) -> np.ndarray:
    n = p.nvars
    H = np.zeros((n, n))
    for m, c in p.items():
        if sum(m) == 2:
            idx = [i for i, a in enumerate(m) for _ in range(a)]
            i, j = idx
            if i == j:
                H[i, i] += c
            else:
                H[i, j] += c / 2
                H[j, i] += c / 2
    return H


def default_degrees(deg_v: int) -> tuple[int, int]:
    """Multiplier degrees ``(deg s1, deg s2)`` for a Lyapunov candidate of degree ``deg_v``."""
    return max(deg_v - 2, 0), deg_v


@dataclass
class RoaSpec:
    system: PolySystem
    deg_v: int = 2
    deg_s1: int | None = None
    deg_s2: int | None = None
    p: Polynomial | None = None
    iota: float = 1.0
    rho: Polynomial | None = None
    reduced_bases: bool = True

    def __post_init__(self):
        n = self.system.n
        d1, d2 = default_degrees(self.deg_v)
        self.deg_s1 = d1 if self.deg_s1 is None else self.deg_s1
        self.deg_s2 = d2 if self.deg_s2 is None else self.deg_s2
        if self.p is None:
            self.p = sum_squares(n)
        if self.rho is None:
            self.rho = sum_squares(n) * 1e-6
        if self.deg_v < 2 or self.deg_v % 2:
            raise ValueError(f"deg_v must be even and >= 2, got {self.deg_v}")
        for name, d in (("deg_s1", self.deg_s1), ("deg_s2", self.deg_s2)):
            if d < 0 or d % 2:
                raise ValueError(f"{name} must be even and nonnegative, got {d}")
        if not self.iota > 0:
            raise ValueError("iota must be positive")
        if self.p.nvars != n or self.rho.nvars != n:
            raise ValueError("p and rho must live in the state variables")
        self._check_posdef(self.p, "p")

    @property
    def n(self) -> int:
        return self.system.n

    @staticmethod
    def _check_posdef(p: Polynomial, name: str, samples: int = 2000):
        H = _quadratic_part(p)
        if np.linalg.eigvalsh(H)[0] <= 0:
            raise ValueError(f"{name} is not positive definite (quadratic part not PD)")
        if p.coeff((0,) * p.nvars) != 0 or any(sum(m) == 1 for m, _ in p.items()):
            raise ValueError(f"{name} must vanish to second order at the origin")
        rng = np.random.default_rng(12345)
        X = rng.uniform(-3, 3, size=(samples, p.nvars))
        if np.any(p.eval_many(X) <= 0):
            raise ValueError(f"{name} takes nonpositive values away from the origin")


def build(spec: RoaSpec) -> NlSosProblem:
    n = spec.n
    # v and s2 vanish to second order at the origin in every feasible point
    # (v(0) = 0 by normalization, then the constant coefficient of the first
    # constraint forces s2(0) = 0); excluding those monomials keeps the
    # subproblems strictly feasible
    low = 2 if spec.reduced_bases else 0
    vb = MonomialBasis(n, spec.deg_v, low)
    vars_ = [
        DecisionVar("v", vb),
        DecisionVar("b", MonomialBasis(n, 0)),
        DecisionVar("s1", MonomialBasis(n, spec.deg_s1), sos=True),
        DecisionVar("s2", MonomialBasis(n, spec.deg_s2, min(low, spec.deg_s2)), sos=True),
    ]
    one = Polynomial.constant(n, 1.0)
    c1 = [(one, (Factor("s2"), Factor("v"))), (one * -spec.iota, (Factor("s2"),))]
    c1 += [(-f, (Factor("v", i),)) for i, f in enumerate(spec.system.phi)]
    c1.append((-spec.rho, ()))
    c2 = [
        (spec.p, (Factor("s1"),)),
        (-one, (Factor("b"), Factor("s1"))),
        (-one, (Factor("v"),)),
        (one * spec.iota, ()),
    ]
    c3 = [(one, (Factor("v"),)), (-spec.rho, ())]
    cons = [ConstraintExpr("dissipation", c1), ConstraintExpr("inclusion", c2), ConstraintExpr("positivity", c3)]
    dim = sum(v.dim for v in vars_)
    cost = np.zeros(dim)
    cost[len(vb)] = -1.0  # b sits right after v
    return NlSosProblem(n, vars_, cost, cons)


def lyapunov_quadratic(system: PolySystem) -> tuple[np.ndarray, Polynomial]:
    A = system.linearization()
    eig = np.linalg.eigvals(A)
    if np.max(eig.real) >= 0:
        raise NotHurwitzError(
            f"linearization is not Hurwitz (max real eigenvalue {np.max(eig.real):.3g}); "
            "the origin is not locally exponentially stable"
        )
    P = scipy.linalg.solve_continuous_lyapunov(A.T, -np.eye(system.n))
    P = (P + P.T) / 2
    n = system.n
    xs = [Polynomial.var(n, i) for i in range(n)]
    v = Polynomial.zero(n)
    for i in range(n):
        for j in range(n):
            v = v + xs[i] * xs[j] * float(P[i, j])
    return P, v


def multiplier_guess(n: int, deg_v: int, deg_s1: int, deg_s2: int) -> tuple[Polynomial, Polynomial]:
    """Initial ``(s1, s2)``: tabulated for n = 2 and n = 4, clipped to the declared degrees."""
    q = sum_squares(n)
    one = Polynomial.constant(n, 1.0)
    if deg_v <= 2:
        s1, s2 = one, q
    elif n <= 3:
        s1, s2 = q, q
    else:
        s1, s2 = q, q * q

    def clip(s, d):
        while s.degree > d:
            s = q if s.degree > 2 else one
            if s.degree > d:
                s = one
        return s

    return clip(s1, deg_s1), clip(s2, deg_s2)


def init_guess(spec: RoaSpec, prob: NlSosProblem | None = None, rescale: bool = True,
               margin: float = 1e-3) -> Iterate:
    """Lyapunov quadratic for ``v``, ``b = 1`` and tabulated multipliers.

    With ``rescale``, ``v0`` is scaled up when ``iota`` exceeds its oracle
    level, so that ``{v0 <= iota}`` sits inside the region where ``v0``
    decreases.  Without that, the first subproblem can be infeasible.
    """
    prob = prob or build(spec)
    _, v0 = lyapunov_quadratic(spec.system)
    if rescale:
        level = level_oracle(spec.system, v0, points=_default_grid(spec.n))
        if spec.iota > level * (1 - margin):
            v0 = v0 * (spec.iota / (level * (1 - margin)))
    s1, s2 = multiplier_guess(spec.n, spec.deg_v, spec.deg_s1, spec.deg_s2)
    return Iterate.primal(prob, prob.join({"v": v0, "b": 1.0, "s1": s1, "s2": s2}))


@dataclass
class RoaSolution:
    v: Polynomial
    b: float
    s1: Polynomial
    s2: Polynomial

    @classmethod
    def from_xi(cls, prob: NlSosProblem, xi) -> "RoaSolution":
        vals = prob.split(xi)
        return cls(vals["v"], vals["b"].coeff((0,) * prob.nvars), vals["s1"], vals["s2"])


# ---------------------------------------------------------------------------
# verification oracles

@dataclass
class Witness:
    check: str
    point: list[float]
    value: float


@dataclass
class VerificationReport:
    gram_ok: bool
    gram_details: dict = field(default_factory=dict)
    sampling_ok: bool = True
    samples: int = 0
    trajectory_ok: bool | None = None
    witnesses: list[Witness] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.gram_ok and self.sampling_ok and self.trajectory_ok is not False

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "gram_ok": self.gram_ok,
            "gram": self.gram_details,
            "sampling_ok": self.sampling_ok,
            "samples": self.samples,
            "trajectory_ok": self.trajectory_ok,
            "witnesses": [w.__dict__ for w in self.witnesses[:5]],
        }


def _sublevel_box(f, level: float, n: int, max_radius: float = 64.0) -> float:
    """Half-width R with f > level on the boundary of [-R, R]^n (grid-checked)."""
    r = 0.5
    m = 41 if n <= 2 else 11
    while r <= max_radius:
        g = np.linspace(-r, r, m)
        pts = []
        for k in range(n):
            for side in (-r, r):
                grids = np.meshgrid(*[g] * (n - 1), indexing="ij") if n > 1 else []
                cols = [gr.ravel() for gr in grids]
                face = np.empty((cols[0].size if cols else 1, n))
                others = [j for j in range(n) if j != k]
                for j, col in zip(others, cols):
                    face[:, j] = col
                face[:, k] = side
                pts.append(face)
        if np.min(f(np.vstack(pts))) > level:
            return r
        r *= 2
    raise ValueError(f"sublevel set {{f <= {level:g}}} is not bounded within radius {max_radius:g}")


def _sample_sublevel(f, level, n, count, rng, exclude_origin=True, max_rounds=200):
    R = _sublevel_box(f, level, n)
    got, total = [], 0
    for _ in range(max_rounds):
        X = rng.uniform(-R, R, size=(max(4 * count, 1000), n))
        keep = f(X) <= level
        if exclude_origin:
            keep &= np.linalg.norm(X, axis=1) > 1e-9
        got.append(X[keep])
        total += int(keep.sum())
        if total >= count:
            break
    X = np.vstack(got)[:count]
    return X


def rk4_converges(system: PolySystem, X0: np.ndarray, step: float = 1e-3, horizon: float = 50.0,
                  tol: float = 1e-3) -> np.ndarray:
    """Boolean mask of initial states whose RK4 trajectory ends with norm <= tol."""
    X = np.array(X0, dtype=float)
    live = np.ones(len(X), dtype=bool)
    nsteps = int(round(horizon / step))
    for _ in range(nsteps):
        Y = X[live]
        k1 = system(Y)
        k2 = system(Y + 0.5 * step * k1)
        k3 = system(Y + 0.5 * step * k2)
        k4 = system(Y + step * k3)
        X[live] = Y + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        with np.errstate(invalid="ignore"):
            nrm = np.linalg.norm(X, axis=1)
        # escaped states are frozen at inf; settled ones stop being integrated
        blown = live & (~np.isfinite(nrm) | (nrm > 1e8))
        X[blown] = np.inf
        live &= ~blown & (nrm > tol * 1e-3)
        if not live.any():
            break
    with np.errstate(invalid="ignore"):
        return np.nan_to_num(np.linalg.norm(X, axis=1), nan=np.inf) <= tol


def verify_certificate(spec: RoaSpec, result: Iterate | RoaSolution, nsamples: int = 10_000,
                       seed: int = 0, trajectories: int = 100, slack: float = 1e-6,
                       prob: NlSosProblem | None = None, backend=None) -> VerificationReport:
    prob = prob or build(spec)
    sol = result if isinstance(result, RoaSolution) else RoaSolution.from_xi(prob, result.xi)
    xi = prob.join({"v": sol.v, "b": sol.b, "s1": sol.s1, "s2": sol.s2})

    details, gram_ok = {}, True
    named = list(zip([c.name for c in prob.constraints], eval_g(prob, xi)))
    named += [("s1", sol.s1), ("s2", sol.s2)]
    for name, poly in named:
        res = gram.check_sos(poly, backend)
        ok = isinstance(res, gram.SosCertificate)
        cert = res if ok else res.best
        details[name] = {
            "ok": ok,
            "min_eig": None if cert is None else cert.min_eig,
            "residual": None if cert is None else cert.residual,
        }
        gram_ok &= ok

    rng = np.random.default_rng(seed)
    n = spec.n
    vfast = _FastPoly([sol.v])
    vdfast = _FastPoly([spec.system.vdot(sol.v)])
    pfast = _FastPoly([spec.p])
    witnesses = []

    X = _sample_sublevel(lambda Z: vfast(Z)[:, 0], spec.iota, n, nsamples, rng)
    vd = vdfast(X)[:, 0]
    bad = np.flatnonzero(vd > slack)
    for k in bad[:5]:
        witnesses.append(Witness("vdot>=0 on {v<=iota}", X[k].tolist(), float(vd[k])))
    count = len(X)

    if sol.b > 0:
        Y = _sample_sublevel(lambda Z: pfast(Z)[:, 0], sol.b, n, nsamples, rng, exclude_origin=False)
        vy = vfast(Y)[:, 0]
        bad = np.flatnonzero(vy > spec.iota + slack)
        for k in bad[:5]:
            witnesses.append(Witness("v>iota on {p<=b}", Y[k].tolist(), float(vy[k])))
        count += len(Y)
    report = VerificationReport(gram_ok, details, not witnesses, count, None, witnesses)

    if trajectories and sol.b > 0:
        Z = _sample_sublevel(lambda Z: pfast(Z)[:, 0], sol.b, n, trajectories, rng, exclude_origin=False)
        ok = rk4_converges(spec.system, Z)
        report.trajectory_ok = bool(np.all(ok))
        for k in np.flatnonzero(~ok)[:5]:
            report.witnesses.append(Witness("trajectory did not converge", Z[k].tolist(), math.nan))
    return report


def _default_grid(n: int) -> int:
    return {1: 4001, 2: 400}.get(n, 60 if n == 3 else 16)


def level_oracle(system: PolySystem, v: Polynomial, box: float = 3.0, points: int = 400) -> float:
    """Largest level with vdot < 0 on {0 < v <= level}, from a dense grid.

    Returns the smallest ``v`` over grid points with ``vdot >= 0``, capped by the
    smallest ``v`` on the boundary of the box, beyond which nothing is known.
    """
    n = system.n
    g = np.linspace(-box, box, points)
    X = np.stack([a.ravel() for a in np.meshgrid(*[g] * n, indexing="ij")], axis=1)
    vv = _FastPoly([v])(X)[:, 0]
    vd = _FastPoly([system.vdot(v)])(X)[:, 0]
    nz = np.linalg.norm(X, axis=1) > 1e-12
    bad = nz & (vd >= 0)
    level = float(np.min(vv[bad])) if np.any(bad) else math.inf
    edge = np.any(np.isclose(np.abs(X), box), axis=1)
    return min(level, float(np.min(vv[edge])))

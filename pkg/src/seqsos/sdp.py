"""Block conic programs and a dense primal-dual interior-point solver.

Standard form::

    minimize    c'x
    subject to  A x = b,   x in R^f x R_+^l x S_+^{m_1} x ... x S_+^{m_k}

PSD blocks are stored as lower-triangle ``svec`` vectors with off-diagonal
entries scaled by sqrt(2), so that ``svec(X) . svec(Y) = trace(XY)``.

The dual is ``maximize b'y  s.t.  A'y + s = c,  s in K*`` with ``s`` zero on
the free coordinates.  The bundled solver works on the homogeneous
self-dual embedding, which gives infeasibility certificates without a
phase-one problem.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np
import scipy.linalg as sla

SQRT2 = math.sqrt(2.0)


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical-failure"


# ---------------------------------------------------------------------------
# svec helpers

def svec_dim(m: int) -> int:
    return m * (m + 1) // 2


@lru_cache(maxsize=None)
def _tril(m: int) -> tuple[np.ndarray, np.ndarray]:
    # column-major lower triangle: (0,0), (1,0), ..., (m-1,0), (1,1), ...
    rows, cols = [], []
    for j in range(m):
        for i in range(j, m):
            rows.append(i)
            cols.append(j)
    return np.array(rows), np.array(cols)


def svec_index(m: int, i: int, j: int) -> int:
    """Position of entry (i, j) of an ``m x m`` block in its svec."""
    if i < j:
        i, j = j, i
    return j * m - j * (j - 1) // 2 + (i - j)


def svec(X: np.ndarray) -> np.ndarray:
    m = X.shape[0]
    r, c = _tril(m)
    v = X[r, c].astype(float).copy()
    v[r != c] *= SQRT2
    return v


def smat(v: np.ndarray, m: int | None = None) -> np.ndarray:
    if m is None:
        m = int(round((math.sqrt(8 * len(v) + 1) - 1) / 2))
    r, c = _tril(m)
    vals = np.asarray(v, dtype=float).copy()
    vals[r != c] /= SQRT2
    X = np.zeros((m, m))
    X[r, c] = vals
    X[c, r] = vals
    return X


@lru_cache(maxsize=None)
def _svec_to_vec(m: int) -> np.ndarray:
    """Matrix V with vec(X) = V svec(X) for symmetric X (column-major vec)."""
    r, c = _tril(m)
    V = np.zeros((m * m, len(r)))
    for k, (i, j) in enumerate(zip(r, c)):
        if i == j:
            V[i + j * m, k] = 1.0
        else:
            V[i + j * m, k] = 1.0 / SQRT2
            V[j + i * m, k] = 1.0 / SQRT2
    return V


def skron(W: np.ndarray) -> np.ndarray:
    """Matrix of the map svec(X) -> svec(W X W) for symmetric W."""
    V = _svec_to_vec(W.shape[0])
    return V.T @ np.kron(W, W) @ V


# ---------------------------------------------------------------------------
# program container

@dataclass
class ConicProgram:
    n_free: int
    n_nonneg: int
    psd_blocks: list[int]
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float)
        N = self.N
        if self.c.shape != (N,):
            raise ValueError(f"objective has length {self.c.shape}, expected {N}")
        if self.A.shape != (len(self.b), N):
            raise ValueError(f"A has shape {self.A.shape}, expected ({len(self.b)}, {N})")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("equality rows must be finite")

    @property
    def N(self) -> int:
        return self.n_free + self.n_nonneg + sum(svec_dim(m) for m in self.psd_blocks)

    @property
    def M(self) -> int:
        return len(self.b)

    def block_offsets(self) -> list[int]:
        off = self.n_free + self.n_nonneg
        out = []
        for m in self.psd_blocks:
            out.append(off)
            off += svec_dim(m)
        return out

    def block(self, x: np.ndarray, k: int) -> np.ndarray:
        """PSD block ``k`` of a variable vector as a symmetric matrix."""
        off = self.block_offsets()[k]
        m = self.psd_blocks[k]
        return smat(x[off:off + svec_dim(m)], m)

    def cone_sizes(self) -> list[int]:
        # nonnegative scalars are handled as 1x1 PSD blocks
        return [1] * self.n_nonneg + list(self.psd_blocks)


@dataclass
class ConicSolution:
    status: Status
    primal: np.ndarray
    eq_duals: np.ndarray
    slack: np.ndarray
    obj_primal: float
    obj_dual: float
    iterations: int
    primal_residual: float = math.nan
    dual_residual: float = math.nan
    rel_gap: float = math.nan

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def cost_order(N: int, M: int) -> int:
    """Per-solve cost estimate N^3 M for a conic program."""
    if N < 1 or M < 1:
        raise ValueError("N and M must be positive")
    return int(N) ** 3 * int(M)


# ---------------------------------------------------------------------------
# incremental construction

@dataclass
class ProgramBuilder:
    """Allocate variables and add sparse equality rows, then ``build()``.

    Variables are allocated in any order; ``build`` lays them out as free,
    nonnegative, then PSD blocks.
    """

    _free: list[str] = field(default_factory=list)
    _nonneg: list[str] = field(default_factory=list)
    _blocks: list[int] = field(default_factory=list)
    _rows: list[dict] = field(default_factory=list)
    _rhs: list[float] = field(default_factory=list)
    _cost: dict = field(default_factory=dict)

    def add_free(self, count: int) -> list[tuple]:
        start = len(self._free)
        self._free.extend("f" for _ in range(count))
        return [("f", start + k) for k in range(count)]

    def add_nonneg(self, count: int) -> list[tuple]:
        start = len(self._nonneg)
        self._nonneg.extend("n" for _ in range(count))
        return [("n", start + k) for k in range(count)]

    def add_psd(self, m: int) -> int:
        self._blocks.append(m)
        return len(self._blocks) - 1

    @staticmethod
    def entry(block: int, i: int, j: int) -> tuple:
        """Handle of the svec coordinate holding Q_ij (scaled by sqrt 2 off-diagonal)."""
        return ("p", block, i, j)

    def add_row(self, coeffs: dict, rhs: float) -> int:
        self._rows.append(dict(coeffs))
        self._rhs.append(float(rhs))
        return len(self._rows) - 1

    def set_cost(self, var: tuple, value: float):
        self._cost[var] = self._cost.get(var, 0.0) + value

    def _layout(self):
        nf, nn = len(self._free), len(self._nonneg)
        offs = []
        off = nf + nn
        for m in self._blocks:
            offs.append(off)
            off += svec_dim(m)
        return nf, nn, offs, off

    def index(self, var: tuple) -> int:
        nf, nn, offs, _ = self._layout()
        return self._index(var, nf, offs)

    def _index(self, var, nf, offs):
        kind = var[0]
        if kind == "f":
            return var[1]
        if kind == "n":
            return nf + var[1]
        _, blk, i, j = var
        return offs[blk] + svec_index(self._blocks[blk], i, j)

    def build(self) -> ConicProgram:
        nf, nn, offs, N = self._layout()
        M = len(self._rows)
        A = np.zeros((M, N))
        for r, row in enumerate(self._rows):
            for var, val in row.items():
                A[r, self._index(var, nf, offs)] += val
        c = np.zeros(N)
        for var, val in self._cost.items():
            c[self._index(var, nf, offs)] += val
        return ConicProgram(nf, nn, list(self._blocks), c, A, np.array(self._rhs))


# ---------------------------------------------------------------------------
# text dump

def dump_program(prog: ConicProgram) -> str:
    """Sparse text form for cross-checking with external solvers.

    Line 1 is ``N M nblocks``.  Line 2 lists the block sizes: the free part,
    the nonnegative part, then each PSD block.  Every further line is
    ``row block i j value`` with 1-based indices.  Row 0 is the objective and
    rows 1..M are the equalities.  Block 0 carries right-hand sides, block 1
    free variables, block 2 nonnegative ones and blocks 3.. the PSD blocks,
    where ``value`` is the matrix coefficient of ``X_ij`` (lower triangle).
    """
    blocks = [prog.n_free, prog.n_nonneg] + list(prog.psd_blocks)
    lines = [f"{prog.N} {prog.M} {len(blocks)}", " ".join(str(b) for b in blocks)]

    def emit(row, vec):
        off = 0
        for k, v in enumerate(vec[:prog.n_free]):
            if v != 0.0:
                lines.append(f"{row} 1 {k + 1} {k + 1} {float(v)!r}")
        off = prog.n_free
        for k, v in enumerate(vec[off:off + prog.n_nonneg]):
            if v != 0.0:
                lines.append(f"{row} 2 {k + 1} {k + 1} {float(v)!r}")
        for blk, (boff, m) in enumerate(zip(prog.block_offsets(), prog.psd_blocks)):
            r, cidx = _tril(m)
            for k, (i, j) in enumerate(zip(r, cidx)):
                v = vec[boff + k]
                if v != 0.0:
                    # trace pairing: svec weight sqrt2 -> matrix coefficient per entry
                    coef = v if i == j else v / SQRT2
                    lines.append(f"{row} {blk + 3} {i + 1} {j + 1} {float(coef)!r}")

    emit(0, prog.c)
    for r in range(prog.M):
        emit(r + 1, prog.A[r])
    for r, v in enumerate(prog.b):
        if v != 0.0:
            lines.append(f"{r + 1} 0 0 0 {float(v)!r}")
    return "\n".join(lines) + "\n"


def load_program(text: str) -> ConicProgram:
    lines = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
    N, M, nb = (int(t) for t in lines[0])
    sizes = [int(t) for t in lines[1]]
    if len(sizes) != nb:
        raise ValueError("block size line does not match header")
    nf, nn, psd = sizes[0], sizes[1], sizes[2:]
    prog = ConicProgram(nf, nn, psd, np.zeros(N), np.zeros((M, N)), np.zeros(M))
    offs = prog.block_offsets()
    for ln in lines[2:]:
        row, blk, i, j = (int(t) for t in ln[:4])
        v = float(ln[4])
        if blk == 0:
            prog.b[row - 1] = v
            continue
        if blk == 1:
            idx = i - 1
        elif blk == 2:
            idx = nf + i - 1
        else:
            m = psd[blk - 3]
            idx = offs[blk - 3] + svec_index(m, i - 1, j - 1)
            if i != j:
                v *= SQRT2
        target = prog.c if row == 0 else prog.A[row - 1]
        target[idx] = v
    return prog


# ---------------------------------------------------------------------------
# solver

class Backend(Protocol):
    def solve(self, prog: ConicProgram) -> ConicSolution: ...


@dataclass
class _Block:
    off: int
    m: int
    R: np.ndarray = None
    Rinv: np.ndarray = None
    lam: np.ndarray = None
    F: np.ndarray = None


def _sqrtm_psd(X: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh((X + X.T) / 2)
    w = np.sqrt(np.maximum(w, 0.0))
    return (U * w) @ U.T


def _nt_scaling(X: np.ndarray, S: np.ndarray):
    """R with R^T S R = R^{-1} X R^{-T} = diag(lam)."""
    Mx = _sqrtm_psd(X)
    Ls = _sqrtm_psd(S)
    U, lam, Vt = np.linalg.svd(Ls.T @ Mx)
    if lam[-1] <= 0.0:
        raise np.linalg.LinAlgError("iterate left the cone interior")
    isq = 1.0 / np.sqrt(lam)
    R = (Mx @ Vt.T) * isq
    Rinv = (isq[:, None] * U.T) @ Ls.T
    return R, Rinv, lam


def _lam_solve(lam: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Solve (diag(lam) U + U diag(lam)) / 2 = r for U."""
    return 2.0 * r / (lam[:, None] + lam[None, :])


def _max_step(lam: np.ndarray, d: np.ndarray) -> float:
    isq = 1.0 / np.sqrt(lam)
    ev = np.linalg.eigvalsh(isq[:, None] * d * isq[None, :])
    lo = ev[0]
    return math.inf if lo >= 0 else -1.0 / lo


@dataclass
class InteriorPointSolver:
    """Dense homogeneous self-dual path-following solver.

    Nesterov-Todd scaling, Mehrotra predictor-corrector, infeasible start
    from identity-scaled blocks.
    """

    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iters: int = 200
    step_frac: float = 0.99
    regularization: float = 1e-15

    def solve(self, prog: ConicProgram) -> ConicSolution:
        if prog.N < 1 or prog.M < 1:
            raise ValueError("program needs at least one variable and one row")
        A, b, c = prog.A, prog.b, prog.c
        M, N = A.shape
        nf = prog.n_free
        blocks = []
        off = nf
        for m in prog.cone_sizes():
            blocks.append(_Block(off, m))
            off += svec_dim(m)
        nu = sum(bk.m for bk in blocks)
        Af, Ac = A[:, :nf], A[:, nf:]
        cf, cc = c[:nf], c[nf:]

        x = np.zeros(N)
        s = np.zeros(N)
        xscale = 1.0 + np.max(np.abs(b), initial=0.0)
        sscale = 1.0 + np.max(np.abs(c), initial=0.0)
        for bk in blocks:
            x[bk.off:bk.off + svec_dim(bk.m)] = svec(xscale * np.eye(bk.m))
            s[bk.off:bk.off + svec_dim(bk.m)] = svec(sscale * np.eye(bk.m))
        y = np.zeros(M)
        tau = kappa = 1.0

        bnorm = 1.0 + np.max(np.abs(b), initial=0.0)
        cnorm = 1.0 + np.max(np.abs(c), initial=0.0)
        status = Status.NUMERICAL_FAILURE
        it = 0
        pres = dres = gap = math.inf

        def finish(st, xx, yy, ss, scale_, iters):
            pobj = float(c @ xx) / scale_
            dobj = float(b @ yy) / scale_
            return ConicSolution(
                st, xx / scale_, yy / scale_, ss / scale_, pobj, dobj, iters,
                pres, dres, gap,
            )

        for it in range(self.max_iters + 1):
            rp = A @ x - b * tau
            rd = A.T @ y + s - c * tau
            rd[:nf] = A[:, :nf].T @ y - cf * tau
            rg = float(c @ x - b @ y + kappa)
            mu = (float(x[nf:] @ s[nf:]) + tau * kappa) / (nu + 1)

            pobj = float(c @ x) / tau
            dobj = float(b @ y) / tau
            pres = float(np.max(np.abs(rp), initial=0.0)) / tau / bnorm
            dres = float(np.max(np.abs(rd), initial=0.0)) / tau / cnorm
            gap = abs(pobj - dobj) / (1.0 + abs(pobj))
            if pres <= self.feas_tol and dres <= self.feas_tol and gap <= self.gap_tol:
                return finish(Status.OPTIMAL, x, y, s, tau, it)

            # infeasibility certificates (scale-free tests)
            by = float(b @ y)
            cx = float(c @ x)
            if by > 0:
                r_ray = A.T @ y + s
                r_ray[:nf] = Af.T @ y
                if np.max(np.abs(r_ray)) / by <= self.feas_tol * cnorm and tau < 1e-3 * kappa:
                    sol = finish(Status.INFEASIBLE, x, y, s, 1.0, it)
                    sol.eq_duals = y / by
                    return sol
            if cx < 0:
                if np.max(np.abs(A @ x)) / -cx <= self.feas_tol * bnorm and tau < 1e-3 * kappa:
                    sol = finish(Status.UNBOUNDED, x, y, s, 1.0, it)
                    sol.primal = x / -cx
                    return sol
            if it == self.max_iters:
                break

            try:
                step = self._newton_step(
                    A, Af, Ac, b, c, cf, cc, nf, blocks, x, y, s, tau, kappa,
                    rp, rd, rg, mu,
                )
            except (np.linalg.LinAlgError, FloatingPointError, ValueError):
                break
            if step is None:
                break
            x, y, s, tau, kappa = step

        sol = finish(status, x, y, s, tau, it)
        return sol

    # -- one Mehrotra predictor-corrector step --------------------------------

    def _newton_step(self, A, Af, Ac, b, c, cf, cc, nf, blocks, x, y, s, tau, kappa,
                     rp, rd, rg, mu):
        M = A.shape[0]
        nfree = nf
        Nc = A.shape[1] - nf
        Fdiag_blocks = []
        for bk in blocks:
            sl = slice(bk.off, bk.off + svec_dim(bk.m))
            X = smat(x[sl], bk.m)
            S = smat(s[sl], bk.m)
            bk.R, bk.Rinv, bk.lam = _nt_scaling(X, S)
            W = bk.R @ bk.R.T
            bk.F = skron(W)
            Fdiag_blocks.append(bk.F)
        F = sla.block_diag(*Fdiag_blocks) if Fdiag_blocks else np.zeros((0, 0))

        FAt = F @ Ac.T
        H = Ac @ FAt
        K = np.zeros((M + nfree, M + nfree))
        K[:M, :M] = H
        K[:M, M:] = Af
        K[M:, :M] = Af.T
        scale = 1.0 + np.max(np.abs(np.diag(H)), initial=0.0)
        reg = self.regularization
        while True:
            # tiny quasi-definite shift, raised only if the factorization breaks down
            Kreg = K.copy()
            Kreg[np.arange(M), np.arange(M)] += reg * scale
            Kreg[M + np.arange(nfree), M + np.arange(nfree)] -= reg * scale
            lu = sla.lu_factor(Kreg, check_finite=False)
            if np.all(np.isfinite(lu[0])) and np.min(np.abs(np.diag(lu[0]))) > 0:
                break
            if reg >= 1e-8:
                raise np.linalg.LinAlgError("reduced KKT matrix is singular")
            reg = max(reg * 100, 1e-15)

        def ksolve(rhs):
            sol = sla.lu_solve(lu, rhs, check_finite=False)
            for _ in range(5):
                res = rhs - K @ sol
                if np.max(np.abs(res)) <= 1e-15 * (1 + np.max(np.abs(rhs))):
                    break
                sol = sol + sla.lu_solve(lu, res, check_finite=False)
            return sol

        # coefficient of dtau
        sol2 = ksolve(np.concatenate([b + Ac @ (F @ cc), cf]))
        dy2, dxf2 = sol2[:M], sol2[M:]
        dxc2 = F @ (Ac.T @ dy2 - cc)
        denom_extra = float(c[:nf] @ dxf2 + cc @ dxc2 - b @ dy2)

        def to_orig(bk, tt):
            # scaled target dx~ + ds~ = tt  ->  original-space dx + F ds = R tt R^T
            return svec(bk.R @ tt @ bk.R.T)

        def solve_dir(rhs_p, rhs_d, rhs_g, t_scaled, rhs_tk):
            t = np.zeros(Nc)
            for bk, tt in zip(blocks, t_scaled):
                o = bk.off - nf
                t[o:o + svec_dim(bk.m)] = to_orig(bk, tt)
            qc = rhs_d[nf:]
            qf = rhs_d[:nf]
            rhs1 = np.concatenate([rhs_p - Ac @ t + Ac @ (F @ qc), qf])
            sol1 = ksolve(rhs1)
            dy1, dxf1 = sol1[:M], sol1[M:]
            dxc1 = t - F @ (qc - Ac.T @ dy1)
            num = rhs_g - float(cf @ dxf1 + cc @ dxc1 - b @ dy1) - rhs_tk / tau
            den = denom_extra - kappa / tau
            dtau = num / den
            dy = dy1 + dtau * dy2
            dxf = dxf1 + dtau * dxf2
            dxc = dxc1 + dtau * dxc2
            dsc = qc - Ac.T @ dy + cc * dtau
            dkap = (rhs_tk - kappa * dtau) / tau
            dx = np.concatenate([dxf, dxc])
            ds = np.concatenate([np.zeros(nf), dsc])
            return dx, dy, ds, dtau, dkap

        def scaled(bk, dx, ds):
            sl = slice(bk.off, bk.off + svec_dim(bk.m))
            dX = smat(dx[sl], bk.m)
            dS = smat(ds[sl], bk.m)
            return bk.Rinv @ dX @ bk.Rinv.T, bk.R.T @ dS @ bk.R

        def max_alpha(dx, ds, dtau, dkap):
            amax = math.inf
            for bk in blocks:
                dxs, dss = scaled(bk, dx, ds)
                amax = min(amax, _max_step(bk.lam, dxs), _max_step(bk.lam, dss))
            if dtau < 0:
                amax = min(amax, -tau / dtau)
            if dkap < 0:
                amax = min(amax, -kappa / dkap)
            return amax

        # predictor
        t_aff = [-np.diag(bk.lam) for bk in blocks]
        dx_a, dy_a, ds_a, dtau_a, dkap_a = solve_dir(-rp, -rd, -rg, t_aff, -tau * kappa)
        alpha_a = min(1.0, max_alpha(dx_a, ds_a, dtau_a, dkap_a))
        sigma = (1.0 - alpha_a) ** 3

        # corrector
        t_cor = []
        for bk in blocks:
            dxs, dss = scaled(bk, dx_a, ds_a)
            cross = (dxs @ dss + dss @ dxs) / 2
            r = sigma * mu * np.eye(bk.m) - np.diag(bk.lam ** 2) - cross
            t_cor.append(_lam_solve(bk.lam, r))
        g = 1.0 - sigma
        rhs_tk = sigma * mu - tau * kappa - dtau_a * dkap_a
        dx, dy, ds, dtau, dkap = solve_dir(-g * rp, -g * rd, -g * rg, t_cor, rhs_tk)
        alpha = min(1.0, self.step_frac * max_alpha(dx, ds, dtau, dkap))
        if not np.isfinite(alpha) or alpha <= 1e-14:
            return None
        return (x + alpha * dx, y + alpha * dy, s + alpha * ds,
                tau + alpha * dtau, kappa + alpha * dkap)


_DEFAULT = InteriorPointSolver()


def solve(prog: ConicProgram, backend: Backend | None = None) -> ConicSolution:
    """Solve ``prog`` with ``backend`` (the bundled interior-point solver by default)."""
    return (backend or _DEFAULT).solve(prog)

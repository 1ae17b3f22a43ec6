"""Gram-matrix reduction of SOS constraints (kernel form) and certificates.

A polynomial ``p`` of degree ``2d`` is SOS iff ``p = z' Q z`` for some PSD
``Q``, with ``z`` the monomials up to degree ``d``.  Coefficient matching
gives one linear row per monomial of degree ``<= 2d``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import sdp
from .poly import CoeffVector, DualFunctional, MonomialBasis, Polynomial, format_monomial

RES_TOL = 1e-6
EIG_TOL = 1e-8


class SolverError(RuntimeError):
    def __init__(self, msg: str, status: sdp.Status | None = None):
        super().__init__(msg)
        self.status = status


@lru_cache(maxsize=None)
def gram_pattern(nvars: int, halfdeg: int, lowhalf: int = 0) -> tuple[tuple[tuple[int, int, float], ...], ...]:
    """Per monomial of degree in [2*lowhalf, 2*halfdeg], the Gram entries that produce it.

    Entry ``(i, j, w)`` with ``i >= j`` means the matched coefficient gets
    ``w * svec_ij``; ``w`` is 1 on the diagonal and sqrt(2) off it (Q_ij and
    Q_ji both contribute).
    """
    zeta = MonomialBasis(nvars, halfdeg, lowhalf)
    big = MonomialBasis(nvars, 2 * halfdeg, 2 * lowhalf)
    rows: list[list] = [[] for _ in range(len(big))]
    for i, mi in enumerate(zeta):
        for j in range(i + 1):
            mu = tuple(a + b for a, b in zip(mi, zeta[j]))
            rows[big.index[mu]].append((i, j, 1.0 if i == j else sdp.SQRT2))
    return tuple(tuple(r) for r in rows)


def halfdeg_for(degree: int) -> int:
    return (degree + 1) // 2


@dataclass
class AffineExpr:
    """Polynomial-valued affine map ``xi -> J xi + offset`` in coefficient coordinates.

    Rows of ``J`` and ``offset`` are indexed by ``basis``; columns of ``J``
    by the caller's variable handles.
    """

    basis: MonomialBasis
    J: np.ndarray
    offset: np.ndarray

    @classmethod
    def constant(cls, p: Polynomial, basis: MonomialBasis) -> "AffineExpr":
        return cls(basis, np.zeros((len(basis), 0)), p.coeffs(basis))


@dataclass
class SosBlocks:
    """One PSD block plus the coefficient-matching rows for an SOS constraint.

    Row ``k`` reads ``J[k] . xi - sum(w * svec(Q)) = -offset[k]``.
    """

    zeta: MonomialBasis
    basis: MonomialBasis
    pattern: tuple
    J: np.ndarray
    rhs: np.ndarray

    @property
    def size(self) -> int:
        return len(self.zeta)


def sos_constraint_blocks(target, halfdeg: int, lowhalf: int = 0) -> SosBlocks:
    """Kernel-form reduction of ``target in SOS`` (target: Polynomial or AffineExpr).

    The Gram basis holds the monomials of degree ``lowhalf..halfdeg``; the
    target must then have no terms below degree ``2*lowhalf``.
    """
    if isinstance(target, Polynomial):
        if target.degree > 2 * halfdeg:
            raise ValueError(f"degree {target.degree} exceeds 2*halfdeg = {2 * halfdeg}")
        target = AffineExpr.constant(target, MonomialBasis(target.nvars, 2 * halfdeg))
    basis = target.basis
    if basis.maxdeg > 2 * halfdeg:
        raise ValueError(f"expression basis degree {basis.maxdeg} exceeds 2*halfdeg = {2 * halfdeg}")
    big = MonomialBasis(basis.nvars, 2 * halfdeg, 2 * lowhalf)
    J = np.zeros((len(big), target.J.shape[1]))
    off = np.zeros(len(big))
    if basis == big:
        J[:], off[:] = target.J, target.offset
    else:
        for k, m in enumerate(basis):
            if m in big.index:
                J[big.index[m]] = target.J[k]
                off[big.index[m]] = target.offset[k]
            elif np.any(target.J[k]) or target.offset[k]:
                raise ValueError(f"term {format_monomial(m)} lies below the Gram degree range")
    return SosBlocks(
        MonomialBasis(basis.nvars, halfdeg, lowhalf), big,
        gram_pattern(basis.nvars, halfdeg, lowhalf), J, -off,
    )


def emit(builder: sdp.ProgramBuilder, blocks: SosBlocks, var_handles, extra=None) -> tuple[int, list[int]]:
    """Add the block and its rows to ``builder``; returns (block id, row ids).

    ``extra[k]``, if given, holds additional ``{handle: coef}`` terms for row k.
    """
    blk = builder.add_psd(blocks.size)
    rows = []
    for k, entries in enumerate(blocks.pattern):
        coeffs = dict(extra[k]) if extra is not None else {}
        for col in np.flatnonzero(blocks.J[k]):
            coeffs[var_handles[col]] = blocks.J[k, col]
        for i, j, w in entries:
            coeffs[builder.entry(blk, i, j)] = -w
        rows.append(builder.add_row(coeffs, blocks.rhs[k]))
    return blk, rows


def gram_polynomial(zeta: MonomialBasis, Q: np.ndarray) -> Polynomial:
    """Rebuild z' Q z."""
    out: dict = {}
    for i, mi in enumerate(zeta):
        for j, mj in enumerate(zeta):
            if Q[i, j] != 0.0:
                mu = tuple(a + b for a, b in zip(mi, mj))
                out[mu] = out.get(mu, 0.0) + Q[i, j]
    return Polynomial(zeta.nvars, out)


@dataclass
class GramForm:
    basis: MonomialBasis
    Q: np.ndarray

    def polynomial(self) -> Polynomial:
        return gram_polynomial(self.basis, self.Q)


@dataclass
class SosCertificate:
    gram: GramForm
    min_eig: float
    residual: float
    margin: float = math.nan

    def accepted(self, res_tol: float = RES_TOL, eig_tol: float = EIG_TOL) -> bool:
        return self.min_eig >= -eig_tol and self.residual <= res_tol

    def to_json(self) -> str:
        return json.dumps(
            {
                "basis": [format_monomial(m) for m in self.gram.basis],
                "Q": [float(v) for v in self.gram.Q.ravel()],
                "min_eig": self.min_eig,
                "residual": self.residual,
            }
        )


@dataclass
class Refusal:
    """``p`` has no Gram certificate at the requested tolerances."""

    reason: str
    margin: float
    status: sdp.Status
    best: SosCertificate | None = field(default=None, repr=False)

    def accepted(self, *args, **kwargs) -> bool:
        return False


def check_sos(
    p: Polynomial,
    backend: sdp.Backend | None = None,
    res_tol: float = RES_TOL,
    eig_tol: float = EIG_TOL,
) -> SosCertificate | Refusal:
    """Search for a Gram certificate of ``p``.

    Solves ``min t  s.t.  p = z'(Q' - t I)z,  Q' PSD``, which is always
    strictly feasible; ``-t*`` is the largest attainable minimum eigenvalue.
    ``p`` is accepted when the symmetrized ``Q = Q' - t* I`` has
    ``min_eig >= -eig_tol`` and coefficient residual ``<= res_tol``.
    """
    if p.degree % 2:
        return Refusal("odd degree", math.inf, sdp.Status.INFEASIBLE)
    # Gram monomials below half the lowest degree must vanish anyway; dropping
    # them keeps the SDP strictly feasible
    h = p.degree // 2
    blocks = sos_constraint_blocks(p, h, p.lowdeg // 2)
    B = sdp.ProgramBuilder()
    t = B.add_free(1)[0]
    # -t on every diagonal entry
    extra = [{t: float(sum(1 for i, j, _ in e if i == j))} for e in blocks.pattern]
    emit(B, blocks, [], extra)
    B.set_cost(t, 1.0)
    prog = B.build()
    sol = sdp.solve(prog, backend)
    if sol.status is not sdp.Status.OPTIMAL:
        raise SolverError(f"Gram search ended with status {sol.status.value}", sol.status)
    tval = float(sol.primal[B.index(t)])
    Q = prog.block(sol.primal, 0) - tval * np.eye(blocks.size)
    Q = (Q + Q.T) / 2
    cert = SosCertificate(
        GramForm(blocks.zeta, Q),
        float(np.linalg.eigvalsh(Q)[0]) if Q.size else 0.0,
        (p - gram_polynomial(blocks.zeta, Q)).max_abs_coeff(),
        -tval,
    )
    if cert.accepted(res_tol, eig_tol):
        return cert
    return Refusal(
        f"best minimum eigenvalue {cert.min_eig:.3g}, residual {cert.residual:.3g}",
        -tval, sol.status, cert,
    )


def extract_dual(row_duals, basis: MonomialBasis) -> DualFunctional:
    """Dual functional of an SOS constraint from its matching-row multipliers.

    With rows written as ``J xi - G(Q) = rhs``, the multipliers ``y`` satisfy
    ``M(y) = sum_k y_k G_k >= 0``, so ``<y, sigma> >= 0`` for every SOS
    ``sigma``: ``y`` itself is the functional.
    """
    if row_duals is None:
        raise ValueError("missing dual values")
    y = np.asarray(row_duals, dtype=float)
    if y.shape != (len(basis),):
        raise ValueError(f"expected {len(basis)} row duals, got {y.shape}")
    return CoeffVector(basis, y.copy())


def moment_matrix(ell: DualFunctional, halfdeg: int, lowhalf: int = 0) -> np.ndarray:
    """Symmetric matrix with ``<ell, z_i z_j>`` entries."""
    zeta = MonomialBasis(ell.basis.nvars, halfdeg, lowhalf)
    big = MonomialBasis(ell.basis.nvars, 2 * halfdeg, 2 * lowhalf)
    data = np.zeros(len(big))
    for k, m in enumerate(ell.basis):
        if m in big.index:
            data[big.index[m]] = ell.data[k]
    Mm = np.zeros((len(zeta), len(zeta)))
    for i, mi in enumerate(zeta):
        for j, mj in enumerate(zeta):
            Mm[i, j] = data[big.index[tuple(a + b for a, b in zip(mi, mj))]]
    return Mm


def membership_violation(p: Polynomial, backend=None) -> float:
    """How far ``p`` is from a Gram certificate: max(-min_eig, residual), 0 if certified."""
    res = check_sos(p, backend)
    if isinstance(res, SosCertificate):
        return 0.0
    best = res.best
    if best is None:
        return math.inf
    return max(-best.min_eig, best.residual, 0.0)

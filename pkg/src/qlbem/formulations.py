"""Discrete transmission systems on the multi-trace skeleton.

The per-domain Calderon blocks A_i = [[K_i, -eta_i T_i], [T_i/eta_i, K_i]]
are composed into two single-trace systems:

* classic: R^T (-A_ff) R  w = R^T e_f   (the identity term drops exactly
  because R^T G_ff R = 0);
* quasi-local: Itilde^-1 S I^-1 (-G_ff/2 - A_ff) R w with the matching
  right-hand side, applied matrix-free with cached sparse Gram
  factorizations; S is the sparse screened regulariser on dual spaces.

Sign conventions are fixed so that for valid total-field Cauchy data u the
residual (-A_ff - G_ff/2) u - e_f vanishes in the continuous limit (the
equal-materials fixture has the incident-trace interpolant as its exact
solution).
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from . import geometry as geo
from . import spaces as sps
from .krylov import SparseSolver, factorize_sparse
from .operators import (KernelSpec, Material, OperatorError,
                        QuadratureConfig, assemble_double_layer_pv,
                        assemble_screened, assemble_single_layer)
from .spaces import MultiTraceSpace


class FormulationError(Exception):
    pass


# ---------------------------------------------------------------------------
# Block Calderon operator
# ---------------------------------------------------------------------------

@dataclass
class BlockCalderon:
    """Block-diagonal collection of per-domain Calderon operators.

    kt_blocks holds (K_i, T_i) per domain; the eta weights come from the
    materials.  gram is the block-diagonal twisted pairing G_ff on the
    same multi-trace space.
    """
    space: MultiTraceSpace
    materials: Tuple[Material, ...]
    kt_blocks: List[Tuple[np.ndarray, np.ndarray]]
    gram: sp.spmatrix

    @property
    def dim(self) -> int:
        return self.space.dim

    def domain_matrix(self, i: int) -> np.ndarray:
        k, t = self.kt_blocks[i]
        eta = self.materials[i].eta
        return np.block([[k, -eta * t], [t / eta, k]])

    def apply(self, vec: np.ndarray) -> np.ndarray:
        """A_ff @ vec."""
        out = np.zeros(self.dim, dtype=complex)
        for i in range(len(self.kt_blocks)):
            k, t = self.kt_blocks[i]
            eta = self.materials[i].eta
            e = vec[self.space.block(i, "electric")]
            m = vec[self.space.block(i, "magnetic")]
            out[self.space.block(i, "electric")] = k @ e - eta * (t @ m)
            out[self.space.block(i, "magnetic")] = (t @ e) / eta + k @ m
        return out

    def apply_shifted(self, vec: np.ndarray,
                      identity_term: bool = True) -> np.ndarray:
        """(-G_ff/2 - A_ff) @ vec, optionally without the identity."""
        out = -self.apply(vec)
        if identity_term:
            out -= 0.5 * (self.gram @ vec)
        return out

    def matrix(self) -> np.ndarray:
        """Dense A_ff (desk scale)."""
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for i in range(len(self.kt_blocks)):
            a = self.domain_matrix(i)
            n = self.space.spaces[i].ndofs
            lo = self.space.block(i, "electric").start
            out[lo:lo + 2 * n, lo:lo + 2 * n] = a
        return out


def assemble_block_calderon(space: MultiTraceSpace,
                            materials: Sequence[Material],
                            quad: QuadratureConfig = QuadratureConfig()
                            ) -> BlockCalderon:
    """Per-domain K/T blocks plus the pairing Gram on a multi-trace RWG
    space; materials[i] belongs to domain i."""
    if len(materials) != len(space.spaces):
        raise FormulationError(
            f"{len(materials)} materials for {len(space.spaces)} domains")
    kt = []
    for s, mat in zip(space.spaces, materials):
        if s.ndofs == 0:
            kt.append((np.zeros((0, 0)), np.zeros((0, 0))))
            continue
        t = assemble_single_layer(s, s, mat, quad).values
        k = assemble_double_layer_pv(s, s, mat, quad).values
        kt.append((k, t))
    gram = sps.gram_cross(space, space)
    return BlockCalderon(space, tuple(materials), kt, gram)


# ---------------------------------------------------------------------------
# Classic single-trace system
# ---------------------------------------------------------------------------

@dataclass
class LinearSystem:
    matrix: np.ndarray
    rhs: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return self.matrix @ vec


def classic_pmchwt(calderon: BlockCalderon, embedding,
                   e_f: np.ndarray) -> LinearSystem:
    """Single-trace system R^T (-A_ff) R w = R^T e_f (dense matrix).

    The electric/magnetic test rows are swapped after reduction, which
    makes the matrix complex symmetric (K and T are individually complex
    symmetric); the solution is unchanged by the row permutation."""
    r = embedding.matrix
    if r.shape[0] != calderon.dim:
        raise FormulationError(
            f"embedding rows {r.shape[0]} != operator dim {calderon.dim}")
    r = r.tocsr() if sp.issparse(r) else sp.csr_matrix(r)
    # reduce domain by domain: the full dense A_ff need never exist
    m = np.zeros((r.shape[1], r.shape[1]), dtype=complex)
    space = calderon.space
    for i in range(len(calderon.kt_blocks)):
        n = space.spaces[i].ndofs
        if n == 0:
            continue
        lo = space.block(i, "electric").start
        ri = r[lo:lo + 2 * n].toarray()
        m -= ri.T @ (calderon.domain_matrix(i) @ ri)
    rhs = np.asarray(r.T @ e_f)
    half = m.shape[0] // 2
    perm = np.r_[np.arange(half, 2 * half), np.arange(half)]
    return LinearSystem(m[perm], rhs[perm])


# ---------------------------------------------------------------------------
# Quasi-local system
# ---------------------------------------------------------------------------

@dataclass
class ComposedSystem:
    """Matrix-free composition Itilde^-1 S I^-1 (-G/2 - A) R.

    mixed_gram maps full dual-space coefficients to primal-tested
    functionals; its cached factorization converts tested residuals to
    dual-basis expansions.  s_matrix is sparse; A is the only dense
    factor.
    """
    calderon: BlockCalderon
    embedding: sp.spmatrix
    s_matrix: sp.spmatrix
    mixed_solver: SparseSolver = field(repr=False)
    reduced_solver: SparseSolver = field(repr=False)
    identity_term: bool = True
    dual_space: Optional[MultiTraceSpace] = field(repr=False, default=None)
    mixed_gram: Optional[sp.spmatrix] = field(repr=False, default=None)

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]

    def apply(self, w: np.ndarray) -> np.ndarray:
        v = self.embedding @ w
        v = self.calderon.apply_shifted(v, self.identity_term)
        v = self.mixed_solver.solve(v)
        v = self.s_matrix @ v
        return self.reduced_solver.solve(v)

    def project_rhs(self, e_f: np.ndarray) -> np.ndarray:
        v = self.mixed_solver.solve(e_f)
        return self.reduced_solver.solve(self.s_matrix @ v)

    def matrix(self) -> np.ndarray:
        """Densified composition (desk scale)."""
        cols = [self.apply(col) for col in np.eye(self.dim, dtype=complex).T]
        return np.column_stack(cols)

    def dual_expand(self, tested: np.ndarray) -> np.ndarray:
        """Dual-basis expansion of a primal-tested functional vector."""
        return self.mixed_solver.solve(tested)


def ql_pmchwt(calderon: BlockCalderon, embedding, mesh: geo.SkeletonMesh,
              delta: float, identity_term: bool = True, *,
              cutoff_factor: float = 3.5, screening: str = "gaussian",
              quad: QuadratureConfig = QuadratureConfig()) -> ComposedSystem:
    """Quasi-local single-trace system at regularisation range delta.

    Builds dual (full and reduced, boundary-adapted on open pieces)
    multi-trace spaces, the sparse screened form between them, and the
    cached mixed-Gram factorizations of the composition.
    """
    rg = geo.reduce_geometry(mesh)
    full_bc = sps.multi_trace(mesh, "BC")
    red_bc = sps.reduced_multi_trace(rg, "BC")
    red_rwg = sps.reduced_multi_trace(rg, "RWG")
    kernel = KernelSpec.screened(delta, cutoff_factor=cutoff_factor,
                                 screening=screening)
    s_mat = assemble_screened(red_bc, full_bc, kernel, quad).values
    mixed = sps.gram_cross(calderon.space, full_bc)
    reduced = sps.gram_cross(red_bc, red_rwg)
    r = embedding.matrix
    if r.shape != (calderon.dim, reduced.shape[0]):
        raise FormulationError(
            f"embedding shape {r.shape} inconsistent with operator dim "
            f"{calderon.dim} and reduced dim {reduced.shape[0]}")
    return ComposedSystem(calderon, sp.csr_matrix(r), s_mat,
                          factorize_sparse(mixed),
                          factorize_sparse(reduced), identity_term,
                          dual_space=full_bc, mixed_gram=mixed)


def preconditioned_classic(calderon: BlockCalderon, embedding,
                           system: ComposedSystem) -> np.ndarray:
    """Screened-regulariser-preconditioned classic matrix built from the
    single-domain factors of a quasi-local system; on junction-free
    geometries (one closed surface, one owner domain) the quasi-local
    matrix collapses to this exactly."""
    space = calderon.space
    owners = [i for i, s in enumerate(system.dual_space.spaces)
              if s.ndofs == space.spaces[i].ndofs and s.ndofs > 0]
    classic = classic_pmchwt(calderon, embedding,
                             np.zeros(calderon.dim)).matrix
    half = classic.shape[0] // 2
    perm = np.r_[np.arange(half, 2 * half), np.arange(half)]
    classic = classic[perm]        # undo the symmetrising row swap
    k = owners[0]
    idx = np.r_[np.arange(*system.dual_space.block(k, "electric").indices(
        system.dual_space.dim)),
        np.arange(*system.dual_space.block(k, "magnetic").indices(
            system.dual_space.dim))]
    rows = np.r_[np.arange(*space.block(k, "electric").indices(space.dim)),
                 np.arange(*space.block(k, "magnetic").indices(space.dim))]
    s_k = system.s_matrix[:, idx]
    i_k = factorize_sparse(system.mixed_gram[rows][:, idx])
    pre = system.reduced_solver.solve(
        np.asarray((s_k @ i_k.solve(classic))))
    return pre


def extinction_residual(system: ComposedSystem, w: np.ndarray,
                        e_f: np.ndarray):
    """Complementary-trace residual of a solved single-trace system.

    v_f = (-A_ff - G_ff/2) R w - e_f (primal-tested); v_g is its
    dual-basis expansion.  Returns (v_f, v_g)."""
    v_f = system.calderon.apply_shifted(system.embedding @ w) - e_f
    return v_f, system.dual_expand(v_f)

"""Assembly of the semi-discrete dG operator blocks.

Builds the weighted mass blocks, the interior-penalty stiffness blocks for
the elastic, divergence, and acoustic parts, the viscous/interface damping
block, and the skew interface-coupling pair, then stacks them into the
global second-order system

    A_mass d2X/dt2 + B_damp dX/dt + C_stiff X = F(t),   X = [U, W, Phi].

All local element/face contributions are accumulated as triplets in a
fixed traversal order and compressed once, so repeated assemblies are
bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .femspace import DgSpace
from .mesh import (
    A_BOUNDARY,
    A_INTERIOR,
    INTERFACE,
    NO_NEIGHBOR,
    P_BOUNDARY,
    P_INTERIOR,
    PORO,
)
from .physics import MaterialField, Materials, SourceSpec


class AssemblyError(Exception):
    """Inconsistent assembly request."""


# ----------------------------------------------------------------------
# penalties
# ----------------------------------------------------------------------
@dataclass
class PenaltyField:
    """Per-face stabilization values (NaN where a penalty is undefined).

    Interior faces carry c_i * max over the two neighbors of coef * p^2 / h;
    boundary faces (and, for gamma, interface faces) use the one-sided
    value c_i * coef * p^2 / h.  The constant multiplies boundary faces as
    well: one-sided fluxes are twice the interior averages, and without the
    constant the assembled forms are measurably indefinite already for
    structured quadrilateral meshes.
    """

    alpha: np.ndarray
    gamma: np.ndarray
    chi: np.ndarray
    constants: tuple[float, float, float]


def penalty_values(space: DgSpace, field: MaterialField,
                   constants: tuple[float, float, float] = (10.0, 10.0, 10.0)) -> PenaltyField:
    c1, c2, c3 = (float(c) for c in constants)
    if min(c1, c2, c3) <= 0:
        raise AssemblyError("penalty constants must be positive")
    mesh = space.mesh
    deg = space.degrees.astype(float)
    h = mesh.element_diameter
    cbar = np.array([
        field.elasticity_bound(k) if mesh.element_region[k] == PORO else 0.0
        for k in range(mesh.n_elements)
    ])

    alpha = np.full(mesh.n_faces, np.nan)
    gamma = np.full(mesh.n_faces, np.nan)
    chi = np.full(mesh.n_faces, np.nan)
    for fid, face in enumerate(mesh.faces):
        ko, kn = face.owner, face.neighbor
        if face.fclass == P_INTERIOR:
            alpha[fid] = c1 * max(cbar[k] * deg[k] ** 2 / h[k] for k in (ko, kn))
            gamma[fid] = c2 * max(field.m_biot[k] * deg[k] ** 2 / h[k] for k in (ko, kn))
        elif face.fclass == P_BOUNDARY:
            alpha[fid] = c1 * cbar[ko] * deg[ko] ** 2 / h[ko]
            gamma[fid] = c2 * field.m_biot[ko] * deg[ko] ** 2 / h[ko]
        elif face.fclass == INTERFACE:
            # one-sided value from the poroelastic owner; consumed by the
            # divergence form only in the sealed-pores regime
            gamma[fid] = c2 * field.m_biot[ko] * deg[ko] ** 2 / h[ko]
        elif face.fclass == A_INTERIOR:
            chi[fid] = c3 * max(field.rho_a[k] * deg[k] ** 2 / h[k] for k in (ko, kn))
        else:  # A_BOUNDARY
            chi[fid] = c3 * field.rho_a[ko] * deg[ko] ** 2 / h[ko]
    return PenaltyField(alpha, gamma, chi, (c1, c2, c3))


# ----------------------------------------------------------------------
# jump/average machinery on a face
# ----------------------------------------------------------------------
class FaceCoupling:
    """Trace tables and jump/average algebra on one face.

    Holds the quadrature rule and both-side basis traces; the jump and
    average helpers operate on point values of fields, with the one-sided
    boundary conventions applied automatically when there is no neighbor.
    """

    def __init__(self, space: DgSpace, fid: int, exactness: int | None = None):
        (self.points, self.weights, self.normal, self.face,
         self.phi_owner, self.grad_owner,
         self.phi_neighbor, self.grad_neighbor) = space.face_tables(fid, exactness)

    @property
    def two_sided(self) -> bool:
        return self.face.neighbor != NO_NEIGHBOR

    def scalar_jump(self, plus, minus=None) -> np.ndarray:
        """[[psi]] = psi+ n+ + psi- n- (psi n on boundary faces), shape (nq, 2)."""
        plus = np.asarray(plus, dtype=float)
        diff = plus if minus is None else plus - np.asarray(minus, dtype=float)
        return diff[:, None] * self.normal[None, :]

    def scalar_average(self, plus, minus=None) -> np.ndarray:
        plus = np.asarray(plus, dtype=float)
        return plus if minus is None else 0.5 * (plus + np.asarray(minus, dtype=float))

    def vector_jump(self, plus, minus=None) -> np.ndarray:
        """[[v]] = v+ (x) n+ + v- (x) n-, shape (nq, 2, 2)."""
        plus = np.asarray(plus, dtype=float)
        diff = plus if minus is None else plus - np.asarray(minus, dtype=float)
        return diff[:, :, None] * self.normal[None, None, :]

    def vector_normal_jump(self, plus, minus=None) -> np.ndarray:
        """[[v]]_n = v+ . n+ + v- . n-, shape (nq,)."""
        plus = np.asarray(plus, dtype=float)
        diff = plus if minus is None else plus - np.asarray(minus, dtype=float)
        return diff @ self.normal

    def average(self, plus, minus=None) -> np.ndarray:
        plus = np.asarray(plus, dtype=float)
        return plus if minus is None else 0.5 * (plus + np.asarray(minus, dtype=float))


def jump_average_tables(space: DgSpace, fid: int, exactness: int | None = None) -> FaceCoupling:
    return FaceCoupling(space, fid, exactness)


# ----------------------------------------------------------------------
# triplet accumulation
# ----------------------------------------------------------------------
class _Triplets:
    def __init__(self):
        self.rows = []
        self.cols = []
        self.vals = []

    def add(self, rows, cols, block):
        r, c = np.meshgrid(rows, cols, indexing="ij")
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.vals.append(np.asarray(block, dtype=float).ravel())

    def to_csr(self, shape) -> sps.csr_matrix:
        if not self.rows:
            return sps.csr_matrix(shape)
        mat = sps.coo_matrix(
            (np.concatenate(self.vals),
             (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=shape,
        ).tocsr()
        mat.sum_duplicates()
        mat.eliminate_zeros()
        return mat


def _u_rows(space: DgSpace, element: int) -> np.ndarray:
    """U-block-local indices of the element's vector modes (comp-major)."""
    dm = space.dofmap
    return np.concatenate([dm.u_indices(element, 0), dm.u_indices(element, 1)])


def _phi_rows(space: DgSpace, element: int) -> np.ndarray:
    dm = space.dofmap
    return dm.phi_indices(element) - dm.offset_phi


# ----------------------------------------------------------------------
# volume kernels
# ----------------------------------------------------------------------
def _mass_local(space, element) -> np.ndarray:
    _, w, phi, _ = space.volume_tables(element)
    return (phi * w) @ phi.T


def _grad_products(space, element):
    """K[a, i, b, j] = sum_q w_q d_a(phi_i) d_b(phi_j) on one element."""
    _, w, _, grad = space.volume_tables(element)
    return np.einsum("iqa,jqb,q->aibj", grad, grad, w)


def _elastic_volume_local(space, element, lam, mu) -> np.ndarray:
    K = _grad_products(space, element)
    nm = space.dofmap.n_modes_per_element[element]
    GG = K[0, :, 0, :] + K[1, :, 1, :]  # grad-dot-grad Gram
    L = np.empty((2, nm, 2, nm))
    for l in range(2):
        for k in range(2):
            blk = mu * K[l, :, k, :].T + lam * K[k, :, l, :].T
            if k == l:
                blk = blk + mu * GG.T
            L[l, :, k, :] = blk
    return L.reshape(2 * nm, 2 * nm)


def _div_volume_local(space, element, m_coef) -> np.ndarray:
    K = _grad_products(space, element)
    nm = space.dofmap.n_modes_per_element[element]
    L = np.empty((2, nm, 2, nm))
    for l in range(2):
        for k in range(2):
            L[l, :, k, :] = m_coef * K[k, :, l, :].T
    return L.reshape(2 * nm, 2 * nm)


def _scalar_stiff_local(space, element, coef) -> np.ndarray:
    K = _grad_products(space, element)
    return coef * (K[0, :, 0, :] + K[1, :, 1, :]).T


# ----------------------------------------------------------------------
# face kernels
# ----------------------------------------------------------------------
def _face_sides(space, fid, one_sided=False, exactness=None):
    pts, w, n, face, phi_o, grad_o, phi_n, grad_n = space.face_tables(fid, exactness)
    sides = [(face.owner, phi_o, grad_o, 1.0)]
    if face.neighbor != NO_NEIGHBOR and not one_sided:
        sides.append((face.neighbor, phi_n, grad_n, -1.0))
    avg = 0.5 if len(sides) == 2 else 1.0
    return pts, w, n, face, sides, avg


def _traction_table(grad, n, lam, mu):
    """T[k, i, q, l] = (sigma(phi_i e_k) n)_l for every mode i and point q."""
    nm, nq, _ = grad.shape
    gn = grad @ n  # (nm, nq)
    T = np.empty((2, nm, nq, 2))
    for k in range(2):
        for l in range(2):
            T[k, :, :, l] = mu * (grad[:, :, l] * n[k])
            if k == l:
                T[k, :, :, l] += mu * gn
            T[k, :, :, l] += lam * grad[:, :, k] * n[l]
    return T


def _elastic_face_blocks(space, field, fid, alpha, consistency=True, penalty=True,
                         exactness=None):
    """Local SIPG face blocks of the elastic form, keyed by (test, trial) element."""
    _, w, n, face, sides, avg = _face_sides(space, fid, exactness=exactness)
    tract = {}
    for (e, phi, grad, sg) in sides:
        tract[e] = _traction_table(grad, n, field.lam[e], field.mu[e])
    out = {}
    for (et, phit, gradt, sgt) in sides:
        nmt = phit.shape[0]
        for (es, phis, grads, sgs) in sides:
            nms = phis.shape[0]
            blk = np.zeros((2, nmt, 2, nms))
            if consistency:
                Ts = tract[es]
                Tt = tract[et]
                # -<{{sigma(u)}}, [[v]]> : trial s, test t
                blk -= avg * sgt * np.einsum("jq,kiql->ljki", phit * w, Ts)
                # -<[[u]], {{sigma(v)}}>
                blk -= avg * sgs * np.einsum("iq,ljqk->ljki", phis * w, Tt)
            if penalty:
                pen = sgs * sgt * alpha * ((phit * w) @ phis.T)
                for d in range(2):
                    blk[d, :, d, :] += pen
            out[(et, es)] = blk.reshape(2 * nmt, 2 * nms)
    return out


def _div_face_blocks(space, field, fid, gamma, one_sided=False, consistency=True,
                     penalty=True, exactness=None):
    _, w, n, face, sides, avg = _face_sides(space, fid, one_sided=one_sided,
                                            exactness=exactness)
    out = {}
    for (et, phit, gradt, sgt) in sides:
        nmt = phit.shape[0]
        mdiv_t = field.m_biot[et] * gradt  # (nm, nq, 2); component k is div of mode e_k
        for (es, phis, grads, sgs) in sides:
            nms = phis.shape[0]
            blk = np.zeros((2, nmt, 2, nms))
            if consistency:
                mdiv_s = field.m_biot[es] * grads
                c1 = avg * sgt * np.einsum("jq,kiq->jki", phit * w, np.moveaxis(mdiv_s, 2, 0))
                c2 = avg * sgs * np.einsum("iq,ljq->lji", phis * w, np.moveaxis(mdiv_t, 2, 0))
                for l in range(2):
                    blk[l] -= n[l] * c1
                    for k in range(2):
                        blk[l, :, k, :] -= n[k] * c2[l]
            if penalty:
                pen = sgs * sgt * gamma * ((phit * w) @ phis.T)
                for l in range(2):
                    for k in range(2):
                        blk[l, :, k, :] += n[k] * n[l] * pen
            out[(et, es)] = blk.reshape(2 * nmt, 2 * nms)
    return out


def _scalar_face_blocks(space, field, fid, chi, consistency=True, penalty=True,
                        exactness=None):
    _, w, n, face, sides, avg = _face_sides(space, fid, exactness=exactness)
    flux = {e: field.rho_a[e] * (grad @ n) for (e, phi, grad, sg) in sides}
    out = {}
    for (et, phit, gradt, sgt) in sides:
        for (es, phis, grads, sgs) in sides:
            blk = np.zeros((phit.shape[0], phis.shape[0]))
            if consistency:
                blk -= avg * sgt * (phit * w) @ flux[es].T
                blk -= avg * sgs * (flux[et] * w) @ phis.T
            if penalty:
                blk += sgs * sgt * chi * (phit * w) @ phis.T
            out[(et, es)] = blk
    return out


# ----------------------------------------------------------------------
# block assemblers
# ----------------------------------------------------------------------
def assemble_vector_mass(space: DgSpace, coef: np.ndarray) -> sps.csr_matrix:
    """Vector mass on the poroelastic region with a per-element coefficient."""
    dm = space.dofmap
    trip = _Triplets()
    for e in dm.poro_elements:
        M = coef[e] * _mass_local(space, e)
        nm = dm.n_modes_per_element[e]
        rows = _u_rows(space, e)
        blk = np.zeros((2 * nm, 2 * nm))
        blk[:nm, :nm] = M
        blk[nm:, nm:] = M
        trip.add(rows, rows, blk)
    return trip.to_csr((dm.block_u_size, dm.block_u_size))


def assemble_scalar_mass(space: DgSpace, coef: np.ndarray) -> sps.csr_matrix:
    dm = space.dofmap
    trip = _Triplets()
    for e in dm.acoustic_elements:
        rows = _phi_rows(space, e)
        trip.add(rows, rows, coef[e] * _mass_local(space, e))
    return trip.to_csr((dm.block_phi_size, dm.block_phi_size))


def assemble_elastic(space: DgSpace, field: MaterialField, penalties: PenaltyField,
                     include_volume: bool = True, include_interior: bool = True,
                     include_boundary: bool = True) -> sps.csr_matrix:
    """SIPG elasticity block A^e over the poroelastic faces.

    The debug flags switch off the volume or face parts for kernel-level
    verification; production assembly uses all of them.
    """
    dm = space.dofmap
    trip = _Triplets()
    if include_volume:
        for e in dm.poro_elements:
            if field.mu[e] <= 0:
                raise AssemblyError(f"element {e}: non-positive shear modulus")
            rows = _u_rows(space, e)
            trip.add(rows, rows, _elastic_volume_local(space, e, field.lam[e], field.mu[e]))
    wanted = []
    if include_interior:
        wanted.append(P_INTERIOR)
    if include_boundary:
        wanted.append(P_BOUNDARY)
    for fid in space.mesh.faces_of_class(*wanted) if wanted else []:
        blocks = _elastic_face_blocks(space, field, fid, penalties.alpha[fid])
        for (et, es), blk in blocks.items():
            trip.add(_u_rows(space, et), _u_rows(space, es), blk)
    return trip.to_csr((dm.block_u_size, dm.block_u_size))


def assemble_poro_div(space: DgSpace, field: MaterialField, penalties: PenaltyField,
                      tau: float, include_volume: bool = True,
                      include_faces: bool = True) -> sps.csr_matrix:
    """Divergence block A^p; interface faces participate only when tau = 0.

    Interface faces are treated one-sidedly from the poroelastic trace
    (boundary-type normal jump), weakly enforcing the sealed-pores
    condition on the combined field beta*u + w.
    """
    dm = space.dofmap
    trip = _Triplets()
    if include_volume:
        for e in dm.poro_elements:
            rows = _u_rows(space, e)
            trip.add(rows, rows, _div_volume_local(space, e, field.m_biot[e]))
    if include_faces:
        face_ids = list(space.mesh.faces_of_class(P_INTERIOR, P_BOUNDARY))
        if tau == 0.0:
            face_ids.extend(space.mesh.faces_of_class(INTERFACE))
        for fid in sorted(face_ids):
            one_sided = space.mesh.faces[fid].fclass == INTERFACE
            blocks = _div_face_blocks(space, field, fid, penalties.gamma[fid],
                                      one_sided=one_sided)
            for (et, es), blk in blocks.items():
                trip.add(_u_rows(space, et), _u_rows(space, es), blk)
    return trip.to_csr((dm.block_u_size, dm.block_u_size))


def assemble_acoustic(space: DgSpace, field: MaterialField, penalties: PenaltyField,
                      include_volume: bool = True, include_interior: bool = True,
                      include_boundary: bool = True) -> sps.csr_matrix:
    """Scalar SIPG block A^a with coefficient rho_a over the acoustic faces."""
    dm = space.dofmap
    trip = _Triplets()
    if include_volume:
        for e in dm.acoustic_elements:
            rows = _phi_rows(space, e)
            trip.add(rows, rows, _scalar_stiff_local(space, e, field.rho_a[e]))
    wanted = []
    if include_interior:
        wanted.append(A_INTERIOR)
    if include_boundary:
        wanted.append(A_BOUNDARY)
    for fid in space.mesh.faces_of_class(*wanted) if wanted else []:
        blocks = _scalar_face_blocks(space, field, fid, penalties.chi[fid])
        for (et, es), blk in blocks.items():
            trip.add(_phi_rows(space, et), _phi_rows(space, es), blk)
    return trip.to_csr((dm.block_phi_size, dm.block_phi_size))


def assemble_damping(space: DgSpace, field: MaterialField, tau: float) -> sps.csr_matrix:
    """Viscous drag (eta/k) mass plus the zeta(tau) interface normal term."""
    if (field.k_perm[space.dofmap.poro_elements] <= 0).any():
        raise AssemblyError("permeability must be positive")
    dm = space.dofmap
    coef = np.zeros(space.mesh.n_elements)
    poro = space.mesh.element_region == PORO
    coef[poro] = field.eta[poro] / field.k_perm[poro]
    B = assemble_vector_mass(space, coef)
    z = field.materials.with_tau(tau).zeta
    if z != 0.0:
        trip = _Triplets()
        for fid in space.mesh.faces_of_class(INTERFACE):
            _, w, n, face, phi_o, grad_o, _, _ = space.face_tables(fid)
            e = face.owner
            nm = phi_o.shape[0]
            gram = (phi_o * w) @ phi_o.T
            blk = np.empty((2, nm, 2, nm))
            for l in range(2):
                for k in range(2):
                    blk[l, :, k, :] = z * n[k] * n[l] * gram
            trip.add(_u_rows(space, e), _u_rows(space, e), blk.reshape(2 * nm, 2 * nm))
        B = B + trip.to_csr(B.shape)
    return B.tocsr()


def assemble_coupling(space: DgSpace, field: MaterialField):
    """Interface pairing C^p (and C^a = -(C^p)^T from the same triplets)."""
    dm = space.dofmap
    rows = []
    cols = []
    vals = []
    for fid in space.mesh.faces_of_class(INTERFACE):
        _, w, n, face, phi_p, _, phi_a, _ = space.face_tables(fid)
        rho_a = field.rho_a[face.neighbor]
        pair = rho_a * (phi_p * w) @ phi_a.T  # (nm_p, nm_a)
        urows = _u_rows(space, face.owner)
        acols = _phi_rows(space, face.neighbor)
        nmp = phi_p.shape[0]
        blk = np.concatenate([n[0] * pair, n[1] * pair], axis=0)
        r, c = np.meshgrid(urows, acols, indexing="ij")
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(blk.ravel())
    shape = (dm.block_u_size, dm.block_phi_size)
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        Cp = sps.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
        Ca = sps.coo_matrix((-vals, (cols, rows)), shape=shape[::-1]).tocsr()
    else:
        Cp = sps.csr_matrix(shape)
        Ca = sps.csr_matrix(shape[::-1])
    Cp.sum_duplicates()
    Ca.sum_duplicates()
    return Cp, Ca


# ----------------------------------------------------------------------
# dG-norm matrices (volume + penalty parts only, per the energy norm)
# ----------------------------------------------------------------------
def assemble_norm_matrices(space: DgSpace, field: MaterialField,
                           penalties: PenaltyField, tau: float):
    """Gram matrices of the broken norms used by the energy functional.

    Unlike the stiffness blocks these contain no consistency terms: the
    elastic norm is ||C^(1/2) eps(v)||^2 + ||alpha^(1/2) [[v]]||^2 and
    analogously for the divergence seminorm and the acoustic norm.
    """
    dm = space.dofmap
    trip_e = _Triplets()
    trip_p = _Triplets()
    for e in dm.poro_elements:
        rows = _u_rows(space, e)
        trip_e.add(rows, rows, _elastic_volume_local(space, e, field.lam[e], field.mu[e]))
        trip_p.add(rows, rows, _div_volume_local(space, e, field.m_biot[e]))
    for fid in space.mesh.faces_of_class(P_INTERIOR, P_BOUNDARY):
        blocks = _elastic_face_blocks(space, field, fid, penalties.alpha[fid],
                                      consistency=False)
        for (et, es), blk in blocks.items():
            trip_e.add(_u_rows(space, et), _u_rows(space, es), blk)
    face_ids = list(space.mesh.faces_of_class(P_INTERIOR, P_BOUNDARY))
    if tau == 0.0:
        face_ids.extend(space.mesh.faces_of_class(INTERFACE))
    for fid in sorted(face_ids):
        one_sided = space.mesh.faces[fid].fclass == INTERFACE
        blocks = _div_face_blocks(space, field, fid, penalties.gamma[fid],
                                  one_sided=one_sided, consistency=False)
        for (et, es), blk in blocks.items():
            trip_p.add(_u_rows(space, et), _u_rows(space, es), blk)
    trip_a = _Triplets()
    for e in dm.acoustic_elements:
        rows = _phi_rows(space, e)
        trip_a.add(rows, rows, _scalar_stiff_local(space, e, field.rho_a[e]))
    for fid in space.mesh.faces_of_class(A_INTERIOR, A_BOUNDARY):
        blocks = _scalar_face_blocks(space, field, fid, penalties.chi[fid],
                                     consistency=False)
        for (et, es), blk in blocks.items():
            trip_a.add(_phi_rows(space, et), _phi_rows(space, es), blk)
    N_e = trip_e.to_csr((dm.block_u_size, dm.block_u_size))
    N_p = trip_p.to_csr((dm.block_u_size, dm.block_u_size))
    N_a = trip_a.to_csr((dm.block_phi_size, dm.block_phi_size))
    return N_e, N_p, N_a


def assemble_trace_probe_matrices(space: DgSpace, field: MaterialField,
                                  penalties: PenaltyField, tau: float):
    """Face-average Gram matrices for the trace-inverse probes.

    Returns quadratic forms G such that v^T G v equals the squared
    penalty-weighted norm of the face averages of the stress, the scaled
    divergence, and the scaled gradient; paired with the corresponding
    volume forms they give the generalized Rayleigh quotients whose
    uniform boundedness the stabilization analysis relies on.
    """
    dm = space.dofmap
    ge = _Triplets()
    for fid in space.mesh.faces_of_class(P_INTERIOR, P_BOUNDARY):
        _, w, n, face, sides, avg = _face_sides(space, fid)
        tract = {e: _traction_table(grad, n, field.lam[e], field.mu[e])
                 for (e, phi, grad, sg) in sides}
        wi = w / penalties.alpha[fid]
        for (et, *_ ) in sides:
            for (es, *_ ) in sides:
                # {{sigma}} : {{sigma}} pairing, full Frobenius product
                blk = avg * avg * np.einsum("ljqd,q,kiqd->ljki", tract[et], wi, tract[es])
                nmt = blk.shape[1]
                nms = blk.shape[3]
                ge.add(_u_rows(space, et), _u_rows(space, es),
                       blk.reshape(2 * nmt, 2 * nms))
    gp = _Triplets()
    face_ids = list(space.mesh.faces_of_class(P_INTERIOR, P_BOUNDARY))
    if tau == 0.0:
        face_ids.extend(space.mesh.faces_of_class(INTERFACE))
    for fid in sorted(face_ids):
        one_sided = space.mesh.faces[fid].fclass == INTERFACE
        _, w, n, face, sides, avg = _face_sides(space, fid, one_sided=one_sided)
        wi = w / penalties.gamma[fid]
        for (et, phit, gradt, sgt) in sides:
            mdiv_t = field.m_biot[et] * gradt
            for (es, phis, grads, sgs) in sides:
                mdiv_s = field.m_biot[es] * grads
                blk = avg * avg * np.einsum("jql,q,iqk->ljki", mdiv_t, wi, mdiv_s)
                nmt = blk.shape[1]
                nms = blk.shape[3]
                gp.add(_u_rows(space, et), _u_rows(space, es),
                       blk.reshape(2 * nmt, 2 * nms))
    ga = _Triplets()
    for fid in space.mesh.faces_of_class(A_INTERIOR, A_BOUNDARY):
        _, w, n, face, sides, avg = _face_sides(space, fid)
        wi = w / penalties.chi[fid]
        for (et, phit, gradt, sgt) in sides:
            for (es, phis, grads, sgs) in sides:
                blk = avg * avg * np.einsum(
                    "jqd,q,iqd->ji",
                    field.rho_a[et] * gradt, wi, field.rho_a[es] * grads,
                )
                ga.add(_phi_rows(space, et), _phi_rows(space, es), blk)
    usz = dm.block_u_size
    psz = dm.block_phi_size
    return {
        "elastic": ge.to_csr((usz, usz)),
        "div": gp.to_csr((usz, usz)),
        "acoustic": ga.to_csr((psz, psz)),
    }


# ----------------------------------------------------------------------
# block system
# ----------------------------------------------------------------------
@dataclass
class BlockSystem:
    """Assembled operator blocks plus the stacked global matrices."""

    space: DgSpace
    field: MaterialField
    penalties: PenaltyField
    tau: float
    M_rho: sps.csr_matrix
    M_rhof: sps.csr_matrix
    M_rhow: sps.csr_matrix
    M_ac: sps.csr_matrix
    A_e: sps.csr_matrix
    A_p: sps.csr_matrix
    A_a: sps.csr_matrix
    B: sps.csr_matrix
    Cp: sps.csr_matrix
    Ca: sps.csr_matrix
    A_mass: sps.csr_matrix
    B_damp: sps.csr_matrix
    C_stiff: sps.csr_matrix
    N_e: sps.csr_matrix
    N_p: sps.csr_matrix
    N_a: sps.csr_matrix
    M_u_unit: sps.csr_matrix
    M_phi_unit: sps.csr_matrix
    beta_diag: sps.csr_matrix

    @property
    def n_dofs(self) -> int:
        return self.space.dofmap.total_size

    def split(self, x):
        su, sw, sphi = self.space.dofmap.block_slices()
        x = np.asarray(x)
        return x[su], x[sw], x[sphi]

    def join(self, u, w, phi) -> np.ndarray:
        return np.concatenate([u, w, phi])


def _offset_coo(mat, roff, coff, scale=1.0):
    coo = mat.tocoo()
    return coo.row + roff, coo.col + coff, scale * coo.data


def _stack(blocks, shape) -> sps.csr_matrix:
    rows = []
    cols = []
    vals = []
    for mat, roff, coff, scale in blocks:
        if mat.nnz == 0:
            continue
        r, c, v = _offset_coo(mat, roff, coff, scale)
        rows.append(r)
        cols.append(c)
        vals.append(v)
    if not rows:
        return sps.csr_matrix(shape)
    out = sps.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=shape,
    ).tocsr()
    out.sum_duplicates()
    return out


def assemble_block_system(space: DgSpace, materials: Materials,
                          constants: tuple[float, float, float] = (10.0, 10.0, 10.0),
                          ) -> BlockSystem:
    """Assemble every block of the coupled second-order system."""
    field = materials.field(space.mesh)
    tau = materials.tau
    penalties = penalty_values(space, field, constants)
    dm = space.dofmap

    M_rho = assemble_vector_mass(space, field.rho)
    M_rhof = assemble_vector_mass(space, field.rho_f)
    M_rhow = assemble_vector_mass(space, field.rho_w)
    with np.errstate(divide="ignore", invalid="ignore"):
        ac_coef = np.where(field.c > 0, field.rho_a / field.c ** 2, 0.0)
    M_ac = assemble_scalar_mass(space, ac_coef)

    A_e = assemble_elastic(space, field, penalties)
    A_p = assemble_poro_div(space, field, penalties, tau)
    A_a = assemble_acoustic(space, field, penalties)
    B = assemble_damping(space, field, tau)
    Cp, Ca = assemble_coupling(space, field)
    N_e, N_p, N_a = assemble_norm_matrices(space, field, penalties, tau)
    M_u_unit = assemble_vector_mass(space, np.ones(space.mesh.n_elements))
    M_phi_unit = assemble_scalar_mass(space, np.ones(space.mesh.n_elements))

    beta_per_dof = np.empty(dm.block_u_size)
    for e in dm.poro_elements:
        beta_per_dof[_u_rows(space, e)] = field.beta[e]
    Dbeta = sps.diags(beta_per_dof).tocsr()

    n = dm.total_size
    ou, ow, ophi = dm.offset_u, dm.offset_w, dm.offset_phi
    A_mass = _stack([
        (M_rho, ou, ou, 1.0), (M_rhof, ou, ow, 1.0),
        (M_rhof, ow, ou, 1.0), (M_rhow, ow, ow, 1.0),
        (M_ac, ophi, ophi, 1.0),
    ], (n, n))
    B_damp = _stack([
        (Cp, ou, ophi, 1.0), (B, ow, ow, 1.0), (Cp, ow, ophi, 1.0),
        (Ca, ophi, ou, 1.0), (Ca, ophi, ow, 1.0),
    ], (n, n))
    Ap_bb = (Dbeta @ A_p @ Dbeta).tocsr()
    Ap_b = (Dbeta @ A_p).tocsr()
    C_stiff = _stack([
        (A_e, ou, ou, 1.0), (Ap_bb, ou, ou, 1.0), (Ap_b, ou, ow, 1.0),
        (Ap_b.T.tocsr(), ow, ou, 1.0), (A_p, ow, ow, 1.0),
        (A_a, ophi, ophi, 1.0),
    ], (n, n))

    return BlockSystem(
        space=space, field=field, penalties=penalties, tau=tau,
        M_rho=M_rho, M_rhof=M_rhof, M_rhow=M_rhow, M_ac=M_ac,
        A_e=A_e, A_p=A_p, A_a=A_a, B=B, Cp=Cp, Ca=Ca,
        A_mass=A_mass, B_damp=B_damp, C_stiff=C_stiff,
        N_e=N_e, N_p=N_p, N_a=N_a,
        M_u_unit=M_u_unit, M_phi_unit=M_phi_unit, beta_diag=Dbeta,
    )


# ----------------------------------------------------------------------
# loads
# ----------------------------------------------------------------------
@dataclass
class DirichletData:
    """Weak Dirichlet traces on the exterior boundary (None means zero)."""

    u: object | None = None
    w: object | None = None
    phi: object | None = None

    @property
    def is_zero(self) -> bool:
        return self.u is None and self.w is None and self.phi is None


class LoadAssembler:
    """Time-dependent load vector F(t) = [F^p, G^p, F^a].

    Volume sources are integrated with the space's default quadrature;
    separable acoustic bursts reuse a precomputed spatial vector.  Weak
    Dirichlet data contributes the usual Nitsche consistency and penalty
    terms on boundary faces.
    """

    def __init__(self, system: BlockSystem, sources: SourceSpec | None,
                 dirichlet: DirichletData | None = None):
        self.system = system
        self.sources = sources or SourceSpec.none()
        self.dirichlet = dirichlet if dirichlet is not None and not dirichlet.is_zero else None
        space = system.space
        dm = space.dofmap
        self._n = dm.total_size

        self._fa_spatial_vec = None
        if self.sources.f_a_spatial is not None and self.sources.f_a_time is not None:
            vec = np.zeros(dm.block_phi_size)
            for e in dm.acoustic_elements:
                pts, w, phi, _ = space.volume_tables(e)
                vals = self.sources.f_a_spatial(pts[:, 0], pts[:, 1])
                vec[_phi_rows(space, e)] = phi @ (w * system.field.rho_a[e] * vals)
            self._fa_spatial_vec = vec

        if self.dirichlet is not None:
            self._prep_dirichlet()

    def _prep_dirichlet(self):
        space = self.system.space
        field = self.system.field
        pen = self.system.penalties
        self._bdry_p = []
        for fid in space.mesh.faces_of_class(P_BOUNDARY):
            pts, w, n, face, phi_o, grad_o, _, _ = space.face_tables(fid)
            e = face.owner
            T = _traction_table(grad_o, n, field.lam[e], field.mu[e])
            mdiv = field.m_biot[e] * grad_o
            self._bdry_p.append((fid, e, pts, w, n, phi_o, T, mdiv,
                                 pen.alpha[fid], pen.gamma[fid], field.beta[e]))
        self._bdry_a = []
        for fid in space.mesh.faces_of_class(A_BOUNDARY):
            pts, w, n, face, phi_o, grad_o, _, _ = space.face_tables(fid)
            e = face.owner
            flux = field.rho_a[e] * (grad_o @ n)
            self._bdry_a.append((fid, e, pts, w, phi_o, flux, pen.chi[fid]))

    def __call__(self, t: float) -> np.ndarray:
        system = self.system
        space = system.space
        dm = space.dofmap
        F = np.zeros(self._n)
        src = self.sources

        if src.f_p is not None or src.g_p is not None:
            for e in dm.poro_elements:
                pts, w, phi, _ = space.volume_tables(e)
                rows = _u_rows(space, e)
                if src.f_p is not None:
                    vals = src.f_p(pts[:, 0], pts[:, 1], t)
                    F[dm.offset_u + rows] += np.concatenate(
                        [phi @ (w * vals[:, 0]), phi @ (w * vals[:, 1])]
                    )
                if src.g_p is not None:
                    vals = src.g_p(pts[:, 0], pts[:, 1], t)
                    F[dm.offset_w + rows] += np.concatenate(
                        [phi @ (w * vals[:, 0]), phi @ (w * vals[:, 1])]
                    )
        if self._fa_spatial_vec is not None:
            F[dm.offset_phi:] += float(src.f_a_time(t)) * self._fa_spatial_vec
        elif src.f_a is not None:
            for e in dm.acoustic_elements:
                pts, w, phi, _ = space.volume_tables(e)
                vals = src.f_a(pts[:, 0], pts[:, 1], t)
                F[dm.offset_phi + _phi_rows(space, e)] += phi @ (
                    w * system.field.rho_a[e] * vals
                )

        if self.dirichlet is not None:
            self._add_dirichlet(F, t)
        return F

    def _add_dirichlet(self, F, t):
        dm = self.system.space.dofmap
        g_u = self.dirichlet.u
        g_w = self.dirichlet.w
        g_phi = self.dirichlet.phi
        for (fid, e, pts, w, n, phi_o, T, mdiv, alpha, gamma, beta) in self._bdry_p:
            rows = _u_rows(self.system.space, e)
            gu = g_u(pts[:, 0], pts[:, 1], t) if g_u is not None else np.zeros((len(w), 2))
            gw = g_w(pts[:, 0], pts[:, 1], t) if g_w is not None else np.zeros((len(w), 2))
            if g_u is not None:
                # elastic Nitsche data: <alpha g, v> - <g, sigma(v) n>
                pen = np.concatenate([phi_o @ (w * alpha * gu[:, 0]),
                                      phi_o @ (w * alpha * gu[:, 1])])
                cons = np.einsum("ljqd,qd->lj", T, w[:, None] * gu).reshape(-1)
                F[dm.offset_u + rows] += pen - cons
            gn = beta * gu @ n + gw @ n
            if np.any(gn):
                # divergence Nitsche data on the combined field beta*u + w
                pen_v = np.concatenate([phi_o @ (w * gamma * gn) * n[0],
                                        phi_o @ (w * gamma * gn) * n[1]])
                cons_v = np.einsum("iqk,q->ki", mdiv, w * gn).reshape(-1)
                F[dm.offset_u + rows] += beta * (pen_v - cons_v)
                F[dm.offset_w + rows] += pen_v - cons_v
        if g_phi is not None:
            for (fid, e, pts, w, phi_o, flux, chi) in self._bdry_a:
                rows = _phi_rows(self.system.space, e)
                g = g_phi(pts[:, 0], pts[:, 1], t)
                F[dm.offset_phi + rows] += phi_o @ (w * chi * g) - flux @ (w * g)


def assemble_load(system: BlockSystem, sources: SourceSpec | None, t: float,
                  dirichlet: DirichletData | None = None) -> np.ndarray:
    """One-shot load assembly (prefer LoadAssembler inside time loops)."""
    return LoadAssembler(system, sources, dirichlet)(t)


def dump_triplets(matrix, path) -> None:
    """Write a sparse matrix as text triplets ``row col value``."""
    coo = sps.coo_matrix(matrix)
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v!r}\n")

"""Modal polynomial bases, quadrature, and degree-of-freedom bookkeeping.

Each element carries a total-degree-graded basis of Legendre products
scaled to the element's bounding box.  The basis is orthogonal on the box
(not on the polygon itself); conditioning of the polygon mass Gram matrix
is monitored rather than eliminated.  Volume quadrature maps a collapsed
Gauss-Legendre x Gauss-Jacobi rule of any requested exactness onto the
centroid-fan triangles; face quadrature is Gauss-Legendre on the segment.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from . import mesh as meshmod
from .mesh import ACOUSTIC, PORO, PolyMesh


class SpaceError(Exception):
    """Invalid discretization request."""


# ----------------------------------------------------------------------
# Legendre evaluation on [-1, 1]
# ----------------------------------------------------------------------
def _legendre_table(x: np.ndarray, degree: int):
    """Values and derivatives of P_0..P_degree at points x, shape (deg+1, n)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    vals = np.empty((degree + 1, n))
    ders = np.empty((degree + 1, n))
    vals[0] = 1.0
    ders[0] = 0.0
    if degree >= 1:
        vals[1] = x
        ders[1] = 1.0
    for i in range(1, degree):
        vals[i + 1] = ((2 * i + 1) * x * vals[i] - i * vals[i - 1]) / (i + 1)
        ders[i + 1] = ders[i - 1] + (2 * i + 1) * vals[i]
    return vals, ders


@dataclass(frozen=True)
class ModalBasis:
    """Total-degree-graded Legendre product basis on a bounding box."""

    element: int
    degree: int
    bbox: tuple[float, float, float, float]  # x0, x1, y0, y1
    exponents: np.ndarray  # (n_modes, 2) Legendre orders per direction

    @property
    def n_modes(self) -> int:
        return self.exponents.shape[0]

    def _reference_coords(self, points):
        x0, x1, y0, y1 = self.bbox
        pts = np.atleast_2d(points)
        xi = (2.0 * pts[:, 0] - (x0 + x1)) / (x1 - x0)
        eta = (2.0 * pts[:, 1] - (y0 + y1)) / (y1 - y0)
        return xi, eta

    def eval(self, points, check_bounds: bool = False) -> np.ndarray:
        """Basis values at points, shape (n_modes, n_points)."""
        xi, eta = self._reference_coords(points)
        if check_bounds and ((np.abs(xi) > 1 + 1e-12).any() or (np.abs(eta) > 1 + 1e-12).any()):
            warnings.warn(
                f"evaluating element {self.element} basis outside its bounding box",
                stacklevel=2,
            )
        vx, _ = _legendre_table(xi, self.degree)
        vy, _ = _legendre_table(eta, self.degree)
        i, j = self.exponents[:, 0], self.exponents[:, 1]
        return vx[i] * vy[j]

    def eval_grad(self, points, check_bounds: bool = False) -> np.ndarray:
        """Basis gradients at points, shape (n_modes, n_points, 2)."""
        xi, eta = self._reference_coords(points)
        if check_bounds and ((np.abs(xi) > 1 + 1e-12).any() or (np.abs(eta) > 1 + 1e-12).any()):
            warnings.warn(
                f"evaluating element {self.element} basis outside its bounding box",
                stacklevel=2,
            )
        x0, x1, y0, y1 = self.bbox
        vx, dx = _legendre_table(xi, self.degree)
        vy, dy = _legendre_table(eta, self.degree)
        i, j = self.exponents[:, 0], self.exponents[:, 1]
        out = np.empty((self.exponents.shape[0], xi.size, 2))
        out[:, :, 0] = dx[i] * vy[j] * (2.0 / (x1 - x0))
        out[:, :, 1] = vx[i] * dy[j] * (2.0 / (y1 - y0))
        return out


def _graded_exponents(degree: int) -> np.ndarray:
    pairs = [(g - j, j) for g in range(degree + 1) for j in range(g + 1)]
    return np.array(pairs, dtype=int)


def n_modes(degree: int) -> int:
    """Dimension of total-degree-<=degree polynomials in 2d."""
    return (degree + 1) * (degree + 2) // 2


# ----------------------------------------------------------------------
# quadrature
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (n, 2) or (n,) mapped coordinates
    weights: np.ndarray
    exactness: int


@lru_cache(maxsize=None)
def _reference_triangle_rule(exactness: int):
    """Collapsed rule on the unit triangle {x,y>=0, x+y<=1}, exact to `exactness`.

    Gauss-Legendre in the collapsed direction, Gauss-Jacobi(1,0) absorbing
    the Duffy Jacobian; all weights positive, any polynomial degree.
    """
    n = max(1, (exactness + 2) // 2)
    gl_x, gl_w = np.polynomial.legendre.leggauss(n)
    gj_x, gj_w = roots_jacobi(n, 1.0, 0.0)
    # map both to [0, 1]; the Jacobi weight (1-eta) is built into gj_w
    u = 0.5 * (gl_x + 1.0)
    wu = 0.5 * gl_w
    v = 0.5 * (gj_x + 1.0)
    wv = 0.25 * gj_w  # (1/2) interval scaling x (1/2) weight-function scaling
    U, V = np.meshgrid(u, v, indexing="ij")
    X = (U * (1.0 - V)).ravel()
    Y = V.ravel()
    W = np.outer(wu, wv).ravel()
    return np.column_stack([X, Y]), W


def triangle_quadrature(tri_vertices, exactness: int) -> QuadratureRule:
    """Rule on the physical triangle with the given (3, 2) vertex array."""
    ref_pts, ref_w = _reference_triangle_rule(exactness)
    a, b, c = np.asarray(tri_vertices, dtype=float)
    jac = np.column_stack([b - a, c - a])
    area2 = abs(np.linalg.det(jac))
    pts = a + ref_pts @ jac.T
    return QuadratureRule(pts, ref_w * area2, exactness)


def volume_quadrature(mesh: PolyMesh, element: int, exactness: int) -> QuadratureRule:
    """Quadrature over a polygonal element, assembled fan-triangle-wise."""
    if exactness < 0:
        raise SpaceError("exactness must be non-negative")
    pts = []
    wts = []
    for tri in mesh.fan_points[element]:
        rule = triangle_quadrature(tri, exactness)
        pts.append(rule.points)
        wts.append(rule.weights)
    return QuadratureRule(np.vstack(pts), np.concatenate(wts), exactness)


def face_quadrature(a, b, exactness: int) -> QuadratureRule:
    """Gauss-Legendre rule on the segment from a to b."""
    n = max(1, (exactness + 1 + 1) // 2)  # ceil((exactness+1)/2)
    x, w = np.polynomial.legendre.leggauss(n)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = 0.5 * (x + 1.0)
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    wts = 0.5 * w * np.linalg.norm(b - a)
    return QuadratureRule(pts, wts, exactness)


# ----------------------------------------------------------------------
# degrees of freedom
# ----------------------------------------------------------------------
class DofMap:
    """Block layout [U | W | Phi] of the global coefficient vector.

    U and W hold the d=2 vector fields on the poroelastic elements
    (component-major within each element), Phi the scalar field on the
    acoustic elements.
    """

    def __init__(self, mesh: PolyMesh, degrees: np.ndarray):
        self.degrees = np.asarray(degrees, dtype=int)
        self.poro_elements = mesh.elements_of_region(PORO)
        self.acoustic_elements = mesh.elements_of_region(ACOUSTIC)

        nm = np.array([n_modes(p) for p in self.degrees])
        self.n_modes_per_element = nm

        poro_sizes = nm[self.poro_elements]
        ac_sizes = nm[self.acoustic_elements]
        self.block_u_size = int(2 * poro_sizes.sum())
        self.block_w_size = self.block_u_size
        self.block_phi_size = int(ac_sizes.sum())
        self.offset_u = 0
        self.offset_w = self.block_u_size
        self.offset_phi = self.block_u_size + self.block_w_size
        self.total_size = self.offset_phi + self.block_phi_size

        # element -> offset of its scalar-mode block inside U (resp. Phi)
        self._poro_local = {}
        off = 0
        for k, sz in zip(self.poro_elements, poro_sizes):
            self._poro_local[int(k)] = off
            off += 2 * int(sz)
        self._ac_local = {}
        off = 0
        for k, sz in zip(self.acoustic_elements, ac_sizes):
            self._ac_local[int(k)] = off
            off += int(sz)

    def u_indices(self, element: int, component: int) -> np.ndarray:
        """Global U-block indices of one displacement component's modes."""
        nm = self.n_modes_per_element[element]
        start = self.offset_u + self._poro_local[int(element)] + component * nm
        return np.arange(start, start + nm)

    def w_indices(self, element: int, component: int) -> np.ndarray:
        nm = self.n_modes_per_element[element]
        start = self.offset_w + self._poro_local[int(element)] + component * nm
        return np.arange(start, start + nm)

    def phi_indices(self, element: int) -> np.ndarray:
        nm = self.n_modes_per_element[element]
        start = self.offset_phi + self._ac_local[int(element)]
        return np.arange(start, start + nm)

    def block_slices(self):
        return (
            slice(self.offset_u, self.offset_u + self.block_u_size),
            slice(self.offset_w, self.offset_w + self.block_w_size),
            slice(self.offset_phi, self.offset_phi + self.block_phi_size),
        )


class DgSpace:
    """Mesh + per-element modal basis + cached quadrature tables."""

    def __init__(self, mesh: PolyMesh, degree_p: int = 1, degree_a: int = 1,
                 degrees=None, quad_exactness: int | None = None):
        if degrees is None:
            if degree_p < 1 or degree_a < 1:
                raise SpaceError("polynomial degrees must be at least 1")
            degrees = np.where(mesh.element_region == PORO, degree_p, degree_a)
        degrees = np.asarray(degrees, dtype=int)
        if (degrees < 1).any():
            raise SpaceError("polynomial degrees must be at least 1")
        self.mesh = mesh
        self.degrees = degrees
        self.bases = [
            ModalBasis(k, int(degrees[k]), tuple(mesh.element_bbox[k]),
                       _graded_exponents(int(degrees[k])))
            for k in range(mesh.n_elements)
        ]
        self.dofmap = DofMap(mesh, degrees)
        self.quad_exactness = (
            int(quad_exactness) if quad_exactness is not None
            else int(2 * degrees.max() + 2)
        )
        self._volume_cache: dict[tuple[int, int], tuple] = {}
        self._face_cache: dict[tuple[int, int], tuple] = {}

    # -- cached tables -------------------------------------------------
    def volume_tables(self, element: int, exactness: int | None = None):
        """(points, weights, values, gradients) on one element."""
        ex = self.quad_exactness if exactness is None else int(exactness)
        key = (element, ex)
        if key not in self._volume_cache:
            rule = volume_quadrature(self.mesh, element, ex)
            basis = self.bases[element]
            self._volume_cache[key] = (
                rule.points, rule.weights,
                basis.eval(rule.points), basis.eval_grad(rule.points),
            )
        return self._volume_cache[key]

    def face_tables(self, fid: int, exactness: int | None = None):
        """Quadrature and both-sides basis traces on one face.

        Returns (points, weights, normal, face, phi_owner, grad_owner,
        phi_neighbor, grad_neighbor); the neighbor entries are None on
        boundary faces.
        """
        ex = self.quad_exactness if exactness is None else int(exactness)
        key = (fid, ex)
        if key not in self._face_cache:
            face = self.mesh.faces[fid]
            a = self.mesh.vertices[face.vertices[0]]
            b = self.mesh.vertices[face.vertices[1]]
            rule = face_quadrature(a, b, ex)
            bo = self.bases[face.owner]
            phi_o = bo.eval(rule.points)
            grad_o = bo.eval_grad(rule.points)
            if face.neighbor == meshmod.NO_NEIGHBOR:
                phi_n = grad_n = None
            else:
                bn = self.bases[face.neighbor]
                phi_n = bn.eval(rule.points)
                grad_n = bn.eval_grad(rule.points)
            self._face_cache[key] = (
                rule.points, rule.weights, face.normal, face,
                phi_o, grad_o, phi_n, grad_n,
            )
        return self._face_cache[key]

    # -- conditioning monitor -------------------------------------------
    def mass_gram(self, element: int) -> np.ndarray:
        _, w, phi, _ = self.volume_tables(element)
        return (phi * w) @ phi.T

    def gram_condition_numbers(self) -> np.ndarray:
        """Condition number of the polygon mass Gram matrix per element."""
        out = np.empty(self.mesh.n_elements)
        for k in range(self.mesh.n_elements):
            out[k] = np.linalg.cond(self.mass_gram(k))
        return out


def build_space(mesh: PolyMesh, degree_p: int, degree_a: int, **kwargs) -> DgSpace:
    """Uniform-per-region discrete space (degree_p on poroelastic elements)."""
    return DgSpace(mesh, degree_p=degree_p, degree_a=degree_a, **kwargs)

"""Material models, sources, manufactured solutions, and test-case setups.

Physical coefficients are piecewise constant per region (the data model
carries per-element arrays, so within-region heterogeneity is supported
but not exercised by the shipped test cases).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import sympy as sp

from .femspace import DgSpace
from .mesh import ACOUSTIC, PORO, PolyMesh


class MaterialError(ValueError):
    """Physical coefficients outside their admissible ranges."""


PHI_MIN = 1e-6
PHI_MAX = 1.0 - 1e-6


# ----------------------------------------------------------------------
# materials
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class PoroMaterial:
    """Poroelastic coefficients plus derived quantities.

    Densities in kg/m^3, viscosities in Pa*s, permeability in m^2, moduli
    in Pa.  ``rho`` and ``rho_w`` are derived from porosity and tortuosity.
    """

    rho_s: float
    rho_f: float
    phi_por: float
    tortuosity: float
    eta: float
    k_perm: float
    lam: float
    mu: float
    beta: float
    m_biot: float

    def __post_init__(self):
        if self.rho_s <= 0 or self.rho_f <= 0:
            raise MaterialError("densities must be positive")
        if not (PHI_MIN <= self.phi_por <= PHI_MAX):
            raise MaterialError(f"porosity must lie in [{PHI_MIN:g}, {PHI_MAX:g}]")
        if self.tortuosity < 1.0:
            raise MaterialError("tortuosity must be at least 1")
        if self.eta < 0:
            raise MaterialError("viscosity must be non-negative")
        if self.k_perm <= 0:
            raise MaterialError("permeability must be positive")
        if self.lam < 0 or self.mu <= 0:
            raise MaterialError("Lame coefficients require lam >= 0, mu > 0")
        if not (self.phi_por < self.beta <= 1.0):
            raise MaterialError("Biot-Willis coefficient must satisfy phi < beta <= 1")
        if self.m_biot <= 0:
            raise MaterialError("Biot modulus must be positive")
        if self.rho * self.rho_w - self.rho_f ** 2 <= 0:
            raise MaterialError("rho * rho_w - rho_f^2 must be positive")

    @property
    def rho(self) -> float:
        """Average density phi*rho_f + (1 - phi)*rho_s."""
        return self.phi_por * self.rho_f + (1.0 - self.phi_por) * self.rho_s

    @property
    def rho_w(self) -> float:
        """Effective fluid density (tortuosity / porosity) * rho_f."""
        return self.tortuosity / self.phi_por * self.rho_f

    @property
    def lam_f(self) -> float:
        """Dilatation coefficient of the saturated matrix, lam + beta^2 m."""
        return self.lam + self.beta ** 2 * self.m_biot

    @property
    def critical_frequency(self) -> float | None:
        """Upper bound of the validity range of the low-frequency model."""
        if self.eta == 0:
            return None
        return self.eta * self.phi_por / (
            2.0 * math.pi * self.tortuosity * self.k_perm * self.rho_f
        )


@dataclass(frozen=True)
class AcousticMaterial:
    c: float
    rho_a: float

    def __post_init__(self):
        if self.c <= 0 or self.rho_a <= 0:
            raise MaterialError("acoustic speed and density must be positive")


def zeta(tau: float) -> float:
    """Interface-permeability weight (1 - tau)/tau, with zeta(0) = 0."""
    if not 0.0 <= tau <= 1.0:
        raise MaterialError("interface permeability tau must lie in [0, 1]")
    if tau == 0.0:
        return 0.0
    return (1.0 - tau) / tau


@dataclass(frozen=True)
class Materials:
    """Region-wise constant coefficients plus the interface permeability."""

    poro: PoroMaterial
    acoustic: AcousticMaterial
    tau: float = 1.0

    def __post_init__(self):
        zeta(self.tau)  # validates the range

    @property
    def zeta(self) -> float:
        return zeta(self.tau)

    def with_tau(self, tau: float) -> "Materials":
        return replace(self, tau=tau)

    def field(self, mesh: PolyMesh) -> "MaterialField":
        return MaterialField(self, mesh)


class MaterialField:
    """Per-element coefficient arrays over a mesh (region-wise constant)."""

    _PORO_ATTRS = {
        "rho": "rho", "rho_f": "rho_f", "rho_w": "rho_w", "eta": "eta",
        "k_perm": "k_perm", "lam": "lam", "mu": "mu", "beta": "beta",
        "m_biot": "m_biot",
    }

    def __init__(self, materials: Materials, mesh: PolyMesh):
        self.materials = materials
        self.mesh = mesh
        ne = mesh.n_elements
        poro = mesh.element_region == PORO
        for name, attr in self._PORO_ATTRS.items():
            arr = np.zeros(ne)
            arr[poro] = getattr(materials.poro, attr)
            setattr(self, name, arr)
        ac = ~poro
        self.c = np.zeros(ne)
        self.c[ac] = materials.acoustic.c
        self.rho_a = np.zeros(ne)
        self.rho_a[ac] = materials.acoustic.rho_a

    @property
    def tau(self) -> float:
        return self.materials.tau

    @property
    def zeta(self) -> float:
        return self.materials.zeta

    def elasticity_bound(self, element: int) -> float:
        """Largest eigenvalue of the elasticity tensor on symmetric tensors.

        Computed from the isometric matrix representation (off-diagonal
        strains weighted by sqrt(2)), for which the spectral norm of C^(1/2)
        squared is exactly the largest eigenvalue of the matrix.
        """
        return float(np.linalg.eigvalsh(
            elasticity_voigt_matrix(self.lam[element], self.mu[element])
        ).max())


def elasticity_voigt_matrix(lam: float, mu: float) -> np.ndarray:
    """Isometric matrix representation of C on 2d symmetric tensors (n=3)."""
    return np.array([
        [2.0 * mu + lam, lam, 0.0],
        [lam, 2.0 * mu + lam, 0.0],
        [0.0, 0.0, 2.0 * mu],
    ])


# ----------------------------------------------------------------------
# sources
# ----------------------------------------------------------------------
_PULSE_ALPHAS = (1.0, -21.0 / 32.0, 63.0 / 768.0, -1.0 / 512.0)


def source_time_profile(t, f0: float):
    """Time modulation of the acoustic load: a four-harmonic burst.

    h(t) = sum_k alpha_k sin(2^(k-1) * 2*pi*f0 * t) for 0 < t < 1/f0 and 0
    otherwise; the burst vanishes identically once t reaches 1/f0.
    """
    if f0 <= 0:
        raise ValueError("f0 must be positive")
    t = np.asarray(t, dtype=float)
    omega0 = 2.0 * math.pi * f0
    out = np.zeros_like(t)
    active = (t > 0) & (t < 1.0 / f0)
    ta = t[active]
    acc = np.zeros_like(ta)
    for k, alpha in enumerate(_PULSE_ALPHAS):
        acc += alpha * np.sin(2 ** k * omega0 * ta)
    out[active] = acc
    return out if out.ndim else float(out)


def ball_support(x, y, centers, radius: float, value: float = 1.0):
    """Indicator of a union of balls, scaled by ``value``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    for cx, cy in centers:
        inside |= (x - cx) ** 2 + (y - cy) ** 2 <= radius ** 2
    return np.where(inside, value, 0.0)


@dataclass
class SourceSpec:
    """Volume sources of the coupled system.

    ``f_p``/``g_p`` map (x, y, t) to (n, 2) arrays, ``f_a`` to (n,).  When
    the acoustic source is a separable burst, ``f_a_spatial``/``f_a_time``
    provide the split used by the fast load-assembly path.
    """

    f_p: object | None = None
    g_p: object | None = None
    f_a: object | None = None
    kind: str = "analytic"
    f_a_spatial: object | None = None
    f_a_time: object | None = None

    @staticmethod
    def none() -> "SourceSpec":
        return SourceSpec()

    @staticmethod
    def acoustic_burst(centers, radius: float, f0: float, value: float = 1.0) -> "SourceSpec":
        spatial = lambda x, y: ball_support(x, y, centers, radius, value)
        time = lambda t: source_time_profile(t, f0)
        return SourceSpec(
            f_a=lambda x, y, t: spatial(x, y) * time(t),
            kind="ricker_like", f_a_spatial=spatial, f_a_time=time,
        )


# ----------------------------------------------------------------------
# manufactured solutions
# ----------------------------------------------------------------------
_X, _Y, _T = sp.symbols("x y t", real=True)


def _lambdify(expr):
    fn = sp.lambdify((_X, _Y, _T), expr, modules="numpy")

    def wrapped(x, y, t):
        x = np.asarray(x, dtype=float)
        val = fn(x, y, t)
        return np.broadcast_to(np.asarray(val, dtype=float), x.shape).copy()

    return wrapped


def _lambdify_vec(exprs):
    fns = [_lambdify(e) for e in exprs]

    def wrapped(x, y, t):
        return np.stack([f(x, y, t) for f in fns], axis=-1)

    return wrapped


class ManufacturedSolution:
    """Closed-form solution fields plus the sources they induce.

    Built symbolically from expressions for the solid displacement, the
    filtration displacement, and the acoustic potential; the sources are
    obtained by substituting the fields into the strong form of the
    coupled system with the supplied material constants.
    """

    def __init__(self, u_exprs, w_exprs, phi_expr, materials: Materials):
        self.materials = materials
        p = materials.poro
        a = materials.acoustic
        u1, u2 = u_exprs
        w1, w2 = w_exprs
        phi = phi_expr

        div_u = sp.diff(u1, _X) + sp.diff(u2, _Y)
        div_w = sp.diff(w1, _X) + sp.diff(w2, _Y)
        pressure = -p.m_biot * (p.beta * div_u + div_w)

        # elastic stress of the skeleton (without the pressure part)
        e11, e22 = sp.diff(u1, _X), sp.diff(u2, _Y)
        e12 = sp.Rational(1, 2) * (sp.diff(u1, _Y) + sp.diff(u2, _X))
        s11 = 2 * p.mu * e11 + p.lam * (e11 + e22)
        s22 = 2 * p.mu * e22 + p.lam * (e11 + e22)
        s12 = 2 * p.mu * e12
        div_sigma = (
            sp.diff(s11, _X) + sp.diff(s12, _Y),
            sp.diff(s12, _X) + sp.diff(s22, _Y),
        )
        grad_m_div = (
            sp.diff(p.m_biot * (p.beta * div_u + div_w), _X),
            sp.diff(p.m_biot * (p.beta * div_u + div_w), _Y),
        )

        f_p = [
            p.rho * sp.diff(u1, _T, 2) + p.rho_f * sp.diff(w1, _T, 2)
            - div_sigma[0] - p.beta * grad_m_div[0],
            p.rho * sp.diff(u2, _T, 2) + p.rho_f * sp.diff(w2, _T, 2)
            - div_sigma[1] - p.beta * grad_m_div[1],
        ]
        g_p = [
            p.rho_f * sp.diff(u1, _T, 2) + p.rho_w * sp.diff(w1, _T, 2)
            + p.eta / p.k_perm * sp.diff(w1, _T) - grad_m_div[0],
            p.rho_f * sp.diff(u2, _T, 2) + p.rho_w * sp.diff(w2, _T, 2)
            + p.eta / p.k_perm * sp.diff(w2, _T) - grad_m_div[1],
        ]
        f_a = sp.diff(phi, _T, 2) / a.c ** 2 - (sp.diff(phi, _X, 2) + sp.diff(phi, _Y, 2))

        self.u = _lambdify_vec((u1, u2))
        self.w = _lambdify_vec((w1, w2))
        self.phi = _lambdify(phi)
        self.du_dt = _lambdify_vec((sp.diff(u1, _T), sp.diff(u2, _T)))
        self.dw_dt = _lambdify_vec((sp.diff(w1, _T), sp.diff(w2, _T)))
        self.dphi_dt = _lambdify(sp.diff(phi, _T))
        # grad[u][i, j] = du_i/dx_j
        self.grad_u = _lambdify_vec((
            sp.diff(u1, _X), sp.diff(u1, _Y), sp.diff(u2, _X), sp.diff(u2, _Y),
        ))
        self.grad_w = _lambdify_vec((
            sp.diff(w1, _X), sp.diff(w1, _Y), sp.diff(w2, _X), sp.diff(w2, _Y),
        ))
        self.div_u = _lambdify(div_u)
        self.div_w = _lambdify(div_w)
        self.grad_phi = _lambdify_vec((sp.diff(phi, _X), sp.diff(phi, _Y)))
        self.pressure_poro = _lambdify(pressure)
        self.dpressure_poro_dt = _lambdify(sp.diff(pressure, _T))
        self.pressure_acoustic = _lambdify(a.rho_a * sp.diff(phi, _T))

        self.sources = SourceSpec(
            f_p=_lambdify_vec(f_p), g_p=_lambdify_vec(g_p), f_a=_lambdify(f_a),
            kind="analytic",
        )

    def grad_u_tensor(self, x, y, t):
        return self.grad_u(x, y, t).reshape(np.asarray(x).shape + (2, 2))

    def grad_w_tensor(self, x, y, t):
        return self.grad_w(x, y, t).reshape(np.asarray(x).shape + (2, 2))


def table1_materials(tau: float = 1.0) -> Materials:
    """Unit-coefficient materials of the manufactured-solution test case."""
    poro = PoroMaterial(
        rho_s=1.0, rho_f=1.0, phi_por=0.5, tortuosity=1.0, eta=0.0,
        k_perm=1.0, lam=1.0, mu=1.0, beta=1.0, m_biot=1.0,
    )
    return Materials(poro=poro, acoustic=AcousticMaterial(c=1.0, rho_a=1.0), tau=tau)


def table2_materials(tau: float = 1.0, eta: float = 0.0) -> Materials:
    """Water-saturated sandstone-like coefficients of the wave test cases."""
    poro = PoroMaterial(
        rho_s=2690.0, rho_f=1000.0, phi_por=0.38, tortuosity=1.8, eta=eta,
        k_perm=2.79e-11, lam=1.2e8, mu=1.86e9, beta=0.95, m_biot=5.34e9,
    )
    return Materials(poro=poro, acoustic=AcousticMaterial(c=1500.0, rho_a=1000.0), tau=tau)


def testcase1_solution(tau: float = 1.0) -> ManufacturedSolution:
    """Manufactured fields with identically null poroelastic pressure.

    The filtration displacement is the negative of the solid displacement
    and the Biot-Willis coefficient is 1, so the constitutive pressure
    vanishes; the fields and their first derivatives are zero on the
    x = 0 interface, making all coupling terms null for every tau.
    """
    g = _X ** 2 * sp.cos(sp.pi * _X / 2) * sp.sin(sp.pi * _X)
    time = sp.cos(sp.sqrt(2) * sp.pi * _T)
    u = (g * time, g * time)
    w = (-g * time, -g * time)
    phi = _X ** 2 * sp.sin(sp.pi * _X) * sp.sin(sp.pi * _Y) * sp.sin(sp.sqrt(2) * sp.pi * _T)
    return ManufacturedSolution(u, w, phi, table1_materials(tau))


# ----------------------------------------------------------------------
# pressure recovery
# ----------------------------------------------------------------------
class PressureField:
    """Discrete pressure recovered from a simulation state.

    On the poroelastic region the constitutive law gives
    p_h = -m (beta div u_h + div w_h); on the acoustic region
    p_h = rho_a * dphi_h/dt, which requires the velocity vector Z.
    """

    def __init__(self, space: DgSpace, field: MaterialField, X, Z):
        self.space = space
        self.field = field
        self.X = np.asarray(X, dtype=float)
        self.Z = np.asarray(Z, dtype=float)

    def eval_element(self, element: int, points) -> np.ndarray:
        space = self.space
        dm = space.dofmap
        basis = space.bases[element]
        pts = np.atleast_2d(points)
        if space.mesh.element_region[element] == PORO:
            grad = basis.eval_grad(pts)  # (n_modes, n_pts, 2)
            m = self.field.m_biot[element]
            beta = self.field.beta[element]
            div_u = (
                self.X[dm.u_indices(element, 0)] @ grad[:, :, 0]
                + self.X[dm.u_indices(element, 1)] @ grad[:, :, 1]
            )
            div_w = (
                self.X[dm.w_indices(element, 0)] @ grad[:, :, 0]
                + self.X[dm.w_indices(element, 1)] @ grad[:, :, 1]
            )
            return -m * (beta * div_u + div_w)
        vals = basis.eval(pts)
        return self.field.rho_a[element] * (self.Z[dm.phi_indices(element)] @ vals)


def recover_pressure(space: DgSpace, field: MaterialField, X, Z) -> PressureField:
    return PressureField(space, field, X, Z)


# ----------------------------------------------------------------------
# test-case catalogue
# ----------------------------------------------------------------------
@dataclass
class CaseConfig:
    """Complete run configuration for one of the shipped test cases."""

    case: int
    domain: tuple[float, float, float, float]
    region_fn: object
    materials: Materials
    dt: float
    final_time: float
    degree_p: int
    degree_a: int
    newmark_gamma: float = 0.5
    newmark_beta: float = 0.25
    penalties: tuple[float, float, float] = (10.0, 10.0, 10.0)
    source: SourceSpec = field(default_factory=SourceSpec.none)
    manufactured: ManufacturedSolution | None = None
    snapshot_times: tuple[float, ...] = ()
    source_cutoff: float | None = None


def _case2_region(x, y):
    # straight interface through the domain center with slope tan(60 deg);
    # the source balls at x = 250 lie in the acoustic region
    return PORO if y - 200.0 > math.tan(math.radians(60.0)) * (x - 200.0) else ACOUSTIC


def _case3_region(x, y):
    return PORO if y < 40.0 * math.sin(math.pi * x / 100.0) else ACOUSTIC


def testcase_geometry(case: int, tau: float = 1.0, eta: float | None = None) -> CaseConfig:
    """Domain, materials, sources, and run parameters of test cases 1-3."""
    if case == 1:
        sol = testcase1_solution(tau)
        return CaseConfig(
            case=1, domain=(-1.0, 1.0, 0.0, 1.0),
            region_fn=lambda x, y: PORO if x < 0 else ACOUSTIC,
            materials=sol.materials, dt=1e-4, final_time=0.25,
            degree_p=3, degree_a=3, source=sol.sources, manufactured=sol,
        )
    if case == 2:
        mats = table2_materials(tau=tau, eta=0.0 if eta is None else eta)
        centers = [(250.0, 100.0), (250.0, 150.0), (250.0, 200.0), (250.0, 250.0)]
        f0 = 20.0
        return CaseConfig(
            case=2, domain=(0.0, 400.0, 0.0, 400.0), region_fn=_case2_region,
            materials=mats, dt=1e-3, final_time=0.15, degree_p=4, degree_a=4,
            source=SourceSpec.acoustic_burst(centers, radius=10.0, f0=f0),
            snapshot_times=(0.04, 0.08, 0.12), source_cutoff=1.0 / f0,
        )
    if case == 3:
        mats = table2_materials(tau=tau, eta=0.0 if eta is None else eta)
        f0 = 20.0
        return CaseConfig(
            case=3, domain=(-1500.0, 1500.0, -1500.0, 1500.0), region_fn=_case3_region,
            materials=mats, dt=1e-3, final_time=0.6, degree_p=4, degree_a=4,
            source=SourceSpec.acoustic_burst(
                [(0.0, 150.0)], radius=50.0, f0=f0,
                value=1.0 / mats.acoustic.rho_a,
            ),
            snapshot_times=(0.2, 0.4, 0.6), source_cutoff=1.0 / f0,
        )
    raise ValueError(f"unknown test case {case!r}")

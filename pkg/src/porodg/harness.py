"""Error norms, convergence studies, energy monitoring, and probes.

Errors against manufactured solutions are integrated element by element
with a boosted quadrature rule (the integrands are not polynomials), with
face jumps formed from the discrete traces and the exact solution's
traces; on interior faces the exact jumps vanish.  Energy traces sample
the mechanical energy 1/2 (Z' A Z + X' C X) whose exact conservation and
dissipation properties the Newmark scheme inherits, with the damping-form
value B(w, w) reported alongside as the norm-completion term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import timeint
from .femspace import DgSpace, build_space
from .forms import (
    BlockSystem,
    DirichletData,
    FaceCoupling,
    LoadAssembler,
    assemble_block_system,
)
from .mesh import (
    A_BOUNDARY,
    A_INTERIOR,
    INTERFACE,
    P_BOUNDARY,
    P_INTERIOR,
    PORO,
    PolyMesh,
    build_cartesian_mesh,
)
from .physics import CaseConfig, ManufacturedSolution, recover_pressure
from .timeint import NewmarkParams, SimState, integrate, project_initial_conditions

NORM_KINDS = ("energy_E", "dG_e", "dG_p_semi", "dG_a", "L2_field", "L2_pressure")


@dataclass(frozen=True)
class NormSpec:
    which: str = "energy_E"
    quadrature_boost: int = 4

    def __post_init__(self):
        if self.which not in NORM_KINDS:
            raise ValueError(f"unknown norm {self.which!r}")


# ----------------------------------------------------------------------
# discrete field evaluation
# ----------------------------------------------------------------------
class DiscreteFields:
    """Point evaluation of the discrete triple (u_h, w_h, phi_h) and rates."""

    def __init__(self, space: DgSpace, X, Z=None):
        self.space = space
        self.X = np.asarray(X, dtype=float)
        self.Z = np.asarray(Z, dtype=float) if Z is not None else None

    def _vec(self, coeffs, element, phi):
        dm = self.space.dofmap
        cx = coeffs[dm.u_indices(element, 0)]
        cy = coeffs[dm.u_indices(element, 1)]
        return np.stack([cx @ phi, cy @ phi], axis=-1)

    def u_values(self, element, phi):
        return self._vec(self.X, element, phi)

    def w_values(self, element, phi):
        dm = self.space.dofmap
        off = dm.offset_w - dm.offset_u
        cx = self.X[off + dm.u_indices(element, 0)]
        cy = self.X[off + dm.u_indices(element, 1)]
        return np.stack([cx @ phi, cy @ phi], axis=-1)

    def u_grad(self, element, grad):
        """(n, 2, 2) tensor with entries du_i/dx_j from basis gradients."""
        dm = self.space.dofmap
        cx = self.X[dm.u_indices(element, 0)]
        cy = self.X[dm.u_indices(element, 1)]
        gx = np.einsum("m,mqd->qd", cx, grad)
        gy = np.einsum("m,mqd->qd", cy, grad)
        return np.stack([gx, gy], axis=1)

    def w_grad(self, element, grad):
        dm = self.space.dofmap
        off = dm.offset_w - dm.offset_u
        cx = self.X[off + dm.u_indices(element, 0)]
        cy = self.X[off + dm.u_indices(element, 1)]
        gx = np.einsum("m,mqd->qd", cx, grad)
        gy = np.einsum("m,mqd->qd", cy, grad)
        return np.stack([gx, gy], axis=1)

    def phi_values(self, element, phi):
        return self.X[self.space.dofmap.phi_indices(element)] @ phi

    def phi_grad(self, element, grad):
        c = self.X[self.space.dofmap.phi_indices(element)]
        return np.einsum("m,mqd->qd", c, grad)

    def velocity(self, block, element, phi):
        assert self.Z is not None
        dm = self.space.dofmap
        if block == "phi":
            return self.Z[dm.phi_indices(element)] @ phi
        off = 0 if block == "u" else dm.offset_w - dm.offset_u
        cx = self.Z[off + dm.u_indices(element, 0)]
        cy = self.Z[off + dm.u_indices(element, 1)]
        return np.stack([cx @ phi, cy @ phi], axis=-1)


# ----------------------------------------------------------------------
# error computation
# ----------------------------------------------------------------------
def _elastic_energy_density(field, element, grad_err):
    """(C : eps(e)) : eps(e) pointwise from the displacement-gradient error."""
    lam = field.lam[element]
    mu = field.mu[element]
    eps = 0.5 * (grad_err + np.swapaxes(grad_err, 1, 2))
    tr = eps[:, 0, 0] + eps[:, 1, 1]
    return 2.0 * mu * np.einsum("qij,qij->q", eps, eps) + lam * tr ** 2


def compute_error(system: BlockSystem, state: SimState,
                  exact: ManufacturedSolution, norm: NormSpec = NormSpec()) -> float:
    """Broken-norm error of the state against the exact solution at state.t."""
    space = system.space
    mesh = space.mesh
    fieldc = system.field
    t = state.t
    boost = norm.quadrature_boost
    ex = space.quad_exactness + boost
    disc = DiscreteFields(space, state.X, state.Z)
    dm = space.dofmap

    vol = 0.0
    if norm.which == "L2_pressure":
        pres = recover_pressure(space, fieldc, state.X, state.Z)
        for e in range(mesh.n_elements):
            pts, w, phi, grad = space.volume_tables(e, ex)
            x, y = pts[:, 0], pts[:, 1]
            if mesh.element_region[e] == PORO:
                p_ex = exact.pressure_poro(x, y, t)
            else:
                p_ex = exact.pressure_acoustic(x, y, t)
            diff = p_ex - pres.eval_element(e, pts)
            vol += float(w @ diff ** 2)
        return math.sqrt(vol)

    if norm.which == "L2_field":
        for e in dm.poro_elements:
            pts, w, phi, _ = space.volume_tables(e, ex)
            x, y = pts[:, 0], pts[:, 1]
            du = exact.u(x, y, t) - disc.u_values(e, phi)
            dw = exact.w(x, y, t) - disc.w_values(e, phi)
            vol += float(w @ (du ** 2).sum(axis=1)) + float(w @ (dw ** 2).sum(axis=1))
        for e in dm.acoustic_elements:
            pts, w, phi, _ = space.volume_tables(e, ex)
            dphi = exact.phi(pts[:, 0], pts[:, 1], t) - disc.phi_values(e, phi)
            vol += float(w @ dphi ** 2)
        return math.sqrt(vol)

    want_e = norm.which in ("energy_E", "dG_e")
    want_p = norm.which in ("energy_E", "dG_p_semi")
    want_a = norm.which in ("energy_E", "dG_a")
    want_mass = norm.which == "energy_E"
    beta_el = fieldc.beta

    for e in dm.poro_elements:
        pts, w, phi, grad = space.volume_tables(e, ex)
        x, y = pts[:, 0], pts[:, 1]
        if want_e or want_p:
            gu_err = exact.grad_u_tensor(x, y, t) - disc.u_grad(e, grad)
        if want_e:
            vol += float(w @ _elastic_energy_density(fieldc, e, gu_err))
        if want_p:
            gw_err = exact.grad_w_tensor(x, y, t) - disc.w_grad(e, grad)
            div_err = (beta_el[e] * (gu_err[:, 0, 0] + gu_err[:, 1, 1])
                       + gw_err[:, 0, 0] + gw_err[:, 1, 1])
            vol += float(fieldc.m_biot[e] * (w @ div_err ** 2))
        if want_mass:
            du = exact.du_dt(x, y, t) - disc.velocity("u", e, phi)
            dw = exact.dw_dt(x, y, t) - disc.velocity("w", e, phi)
            vol += float(fieldc.rho[e] * (w @ (du ** 2).sum(axis=1)))
            vol += 2.0 * float(fieldc.rho_f[e] * (w @ (du * dw).sum(axis=1)))
            vol += float(fieldc.rho_w[e] * (w @ (dw ** 2).sum(axis=1)))
            if fieldc.eta[e] > 0:
                we = exact.w(x, y, t) - disc.w_values(e, phi)
                vol += float(fieldc.eta[e] / fieldc.k_perm[e] * (w @ (we ** 2).sum(axis=1)))
    for e in dm.acoustic_elements:
        pts, w, phi, grad = space.volume_tables(e, ex)
        x, y = pts[:, 0], pts[:, 1]
        if want_a:
            gphi_err = exact.grad_phi(x, y, t) - disc.phi_grad(e, grad)
            vol += float(fieldc.rho_a[e] * (w @ (gphi_err ** 2).sum(axis=1)))
        if want_mass:
            dphi = exact.dphi_dt(x, y, t) - disc.velocity("phi", e, phi)
            vol += float(fieldc.rho_a[e] / fieldc.c[e] ** 2 * (w @ dphi ** 2))

    pen = system.penalties
    face = 0.0
    if want_e:
        for fid in mesh.faces_of_class(P_INTERIOR, P_BOUNDARY):
            fc = FaceCoupling(space, fid, ex)
            x, y = fc.points[:, 0], fc.points[:, 1]
            up = disc.u_values(fc.face.owner, fc.phi_owner)
            if fc.two_sided:
                um = disc.u_values(fc.face.neighbor, fc.phi_neighbor)
                jump = fc.vector_jump(up, um)  # exact solution is continuous
            else:
                jump = fc.vector_jump(up - exact.u(x, y, t))
                jump = -jump  # jump of the error e = exact - discrete
            face += pen.alpha[fid] * float(fc.weights @ (jump ** 2).sum(axis=(1, 2)))
    if want_p:
        fids = list(mesh.faces_of_class(P_INTERIOR, P_BOUNDARY))
        if system.tau == 0.0:
            fids.extend(mesh.faces_of_class(INTERFACE))
        for fid in sorted(fids):
            fc = FaceCoupling(space, fid, ex)
            one_sided = fc.face.fclass == INTERFACE or not fc.two_sided
            x, y = fc.points[:, 0], fc.points[:, 1]
            e = fc.face.owner
            comb_p = (beta_el[e] * disc.u_values(e, fc.phi_owner)
                      + disc.w_values(e, fc.phi_owner))
            if one_sided:
                comb_ex = (beta_el[e] * exact.u(x, y, t) + exact.w(x, y, t))
                njump = fc.vector_normal_jump(comb_ex - comb_p)
            else:
                en = fc.face.neighbor
                comb_m = (beta_el[en] * disc.u_values(en, fc.phi_neighbor)
                          + disc.w_values(en, fc.phi_neighbor))
                njump = fc.vector_normal_jump(comb_p, comb_m)
            face += pen.gamma[fid] * float(fc.weights @ njump ** 2)
    if want_a:
        for fid in mesh.faces_of_class(A_INTERIOR, A_BOUNDARY):
            fc = FaceCoupling(space, fid, ex)
            x, y = fc.points[:, 0], fc.points[:, 1]
            pp = disc.phi_values(fc.face.owner, fc.phi_owner)
            if fc.two_sided:
                pm = disc.phi_values(fc.face.neighbor, fc.phi_neighbor)
                jump = fc.scalar_jump(pp, pm)
            else:
                jump = fc.scalar_jump(exact.phi(x, y, t) - pp)
            face += pen.chi[fid] * float(fc.weights @ (jump ** 2).sum(axis=1))
    if want_mass and system.tau not in (0.0, 1.0):
        z = fieldc.materials.with_tau(system.tau).zeta
        for fid in mesh.faces_of_class(INTERFACE):
            fc = FaceCoupling(space, fid, ex)
            x, y = fc.points[:, 0], fc.points[:, 1]
            e = fc.face.owner
            we = exact.w(x, y, t) - disc.w_values(e, fc.phi_owner)
            face += z * float(fc.weights @ (we @ fc.normal) ** 2)

    return math.sqrt(vol + face)


def exact_solution_norm(system: BlockSystem, exact: ManufacturedSolution, t: float,
                        norm: NormSpec = NormSpec()) -> float:
    """Norm of the exact solution itself (zero discrete fields)."""
    n = system.space.dofmap.total_size
    return compute_error(system, SimState(t, np.zeros(n), np.zeros(n)), exact, norm)


# ----------------------------------------------------------------------
# discrete energies
# ----------------------------------------------------------------------
def energy_parts(system: BlockSystem, state: SimState) -> dict:
    """Mechanical energy split; E = (M_part + A_part) / 2.

    B_part is the damping-form value B(w, w) that completes the energy
    norm; it is reported but excluded from E because only the mechanical
    part is conserved (eta = 0) or monotone (eta > 0) along the dynamics.
    """
    X, Z = state.X, state.Z
    m_part = float(Z @ (system.A_mass @ Z))
    a_part = float(X @ (system.C_stiff @ X))
    w = system.split(X)[1]
    b_part = float(w @ (system.B @ w))
    return {
        "t": state.t, "E": 0.5 * (m_part + a_part),
        "M_part": m_part, "A_part": a_part, "B_part": b_part,
    }


def energy_norm_squared(system: BlockSystem, state: SimState) -> float:
    """Energy functional of a discrete triple via the dG-norm matrices."""
    u, w, phi = system.split(state.X)
    comb = system.beta_diag @ u + w
    val = float(state.Z @ (system.A_mass @ state.Z))
    val += float(w @ (system.B @ w))
    val += float(u @ (system.N_e @ u))
    val += float(comb @ (system.N_p @ comb))
    val += float(phi @ (system.N_a @ phi))
    return val


def stiffness_energy_quadrature(system: BlockSystem, state: SimState) -> float:
    """X' C_stiff X recomputed by element/face quadrature, matrix free."""
    space = system.space
    mesh = space.mesh
    fieldc = system.field
    disc = DiscreteFields(space, state.X)
    dm = space.dofmap
    beta_el = fieldc.beta
    total = 0.0
    for e in dm.poro_elements:
        pts, w, phi, grad = space.volume_tables(e)
        gu = disc.u_grad(e, grad)
        total += float(w @ _elastic_energy_density(fieldc, e, gu))
        gw = disc.w_grad(e, grad)
        div = beta_el[e] * (gu[:, 0, 0] + gu[:, 1, 1]) + gw[:, 0, 0] + gw[:, 1, 1]
        total += float(fieldc.m_biot[e] * (w @ div ** 2))
    for e in dm.acoustic_elements:
        pts, w, phi, grad = space.volume_tables(e)
        g = disc.phi_grad(e, grad)
        total += float(fieldc.rho_a[e] * (w @ (g ** 2).sum(axis=1)))

    pen = system.penalties

    def stress(e, fc, phi, grad):
        lam, mu = fieldc.lam[e], fieldc.mu[e]
        g = disc.u_grad(e, grad)
        eps = 0.5 * (g + np.swapaxes(g, 1, 2))
        tr = eps[:, 0, 0] + eps[:, 1, 1]
        return 2.0 * mu * eps + lam * tr[:, None, None] * np.eye(2)[None]

    for fid in mesh.faces_of_class(P_INTERIOR, P_BOUNDARY):
        fc = FaceCoupling(space, fid)
        e = fc.face.owner
        up = disc.u_values(e, fc.phi_owner)
        sp_ = stress(e, fc, fc.phi_owner, fc.grad_owner)
        if fc.two_sided:
            en = fc.face.neighbor
            um = disc.u_values(en, fc.phi_neighbor)
            sm = stress(en, fc, fc.phi_neighbor, fc.grad_neighbor)
            jump = fc.vector_jump(up, um)
            avg = fc.average(sp_, sm)
        else:
            jump = fc.vector_jump(up)
            avg = sp_
        total -= 2.0 * float(fc.weights @ np.einsum("qij,qij->q", avg, jump))
        total += pen.alpha[fid] * float(fc.weights @ (jump ** 2).sum(axis=(1, 2)))

    fids = list(mesh.faces_of_class(P_INTERIOR, P_BOUNDARY))
    if system.tau == 0.0:
        fids.extend(mesh.faces_of_class(INTERFACE))
    for fid in sorted(fids):
        fc = FaceCoupling(space, fid)
        one_sided = fc.face.fclass == INTERFACE or not fc.two_sided
        e = fc.face.owner
        gu = disc.u_grad(e, fc.grad_owner)
        gw = disc.w_grad(e, fc.grad_owner)
        div_p = fieldc.m_biot[e] * (
            beta_el[e] * (gu[:, 0, 0] + gu[:, 1, 1]) + gw[:, 0, 0] + gw[:, 1, 1]
        )
        comb_p = beta_el[e] * disc.u_values(e, fc.phi_owner) + disc.w_values(e, fc.phi_owner)
        if one_sided:
            njump = fc.vector_normal_jump(comb_p)
            avg = div_p
        else:
            en = fc.face.neighbor
            gu_m = disc.u_grad(en, fc.grad_neighbor)
            gw_m = disc.w_grad(en, fc.grad_neighbor)
            div_m = fieldc.m_biot[en] * (
                beta_el[en] * (gu_m[:, 0, 0] + gu_m[:, 1, 1]) + gw_m[:, 0, 0] + gw_m[:, 1, 1]
            )
            comb_m = (beta_el[en] * disc.u_values(en, fc.phi_neighbor)
                      + disc.w_values(en, fc.phi_neighbor))
            njump = fc.vector_normal_jump(comb_p, comb_m)
            avg = fc.average(div_p, div_m)
        total -= 2.0 * float(fc.weights @ (avg * njump))
        total += pen.gamma[fid] * float(fc.weights @ njump ** 2)

    for fid in mesh.faces_of_class(A_INTERIOR, A_BOUNDARY):
        fc = FaceCoupling(space, fid)
        e = fc.face.owner
        pp = disc.phi_values(e, fc.phi_owner)
        fp = fieldc.rho_a[e] * disc.phi_grad(e, fc.grad_owner)
        if fc.two_sided:
            en = fc.face.neighbor
            pm = disc.phi_values(en, fc.phi_neighbor)
            fm = fieldc.rho_a[en] * disc.phi_grad(en, fc.grad_neighbor)
            jump = fc.scalar_jump(pp, pm)
            avg = fc.average(fp, fm)
        else:
            jump = fc.scalar_jump(pp)
            avg = fp
        total -= 2.0 * float(fc.weights @ np.einsum("qd,qd->q", avg, jump))
        total += pen.chi[fid] * float(fc.weights @ (jump ** 2).sum(axis=1))
    return total


# ----------------------------------------------------------------------
# energy trace and probes
# ----------------------------------------------------------------------
@dataclass
class EnergyTrace:
    """Sampled energy history; usable as an ``integrate`` callback."""

    system: BlockSystem
    stride: int = 1
    rows: list = field(default_factory=list)

    def __call__(self, k: int, state: SimState):
        if k % self.stride == 0:
            self.rows.append(energy_parts(self.system, state))

    @property
    def times(self):
        return np.array([r["t"] for r in self.rows])

    @property
    def energies(self):
        return np.array([r["E"] for r in self.rows])


def dissipativity_check(times, energies, cutoff: float | None = None,
                        tol_rel: float = 1e-8):
    """PASS iff the energy never rises by more than tol_rel * reference.

    With a source cutoff, only samples at t >= cutoff are examined and the
    first post-cutoff sample provides the reference.
    """
    times = np.asarray(times, dtype=float)
    energies = np.asarray(energies, dtype=float)
    if cutoff is not None:
        keep = times >= cutoff
        times, energies = times[keep], energies[keep]
    if energies.size < 2:
        return True, 0.0
    ref = energies[0] if energies[0] > 0 else max(energies.max(), 1.0)
    increases = np.diff(energies)
    max_rise = float(increases.max(initial=0.0))
    return max_rise <= tol_rel * ref, max_rise


def interface_continuity_probe(system: BlockSystem, state: SimState) -> float:
    """Interface-condition residual in L2(Gamma_I).

    Open/imperfect pores (tau > 0): pressure mismatch between the
    poroelastic constitutive pressure and the acoustic pressure rho_a *
    dphi/dt.  Sealed pores (tau = 0): the normal filtration velocity
    dw/dt . n_p, which the scheme drives to zero.
    """
    space = system.space
    fieldc = system.field
    disc = DiscreteFields(space, state.X, state.Z)
    total = 0.0
    for fid in space.mesh.faces_of_class(INTERFACE):
        fc = FaceCoupling(space, fid)
        ep, ea = fc.face.owner, fc.face.neighbor
        if system.tau == 0.0:
            wdot = disc.velocity("w", ep, fc.phi_owner)
            total += float(fc.weights @ (wdot @ fc.normal) ** 2)
        else:
            gu = disc.u_grad(ep, fc.grad_owner)
            gw = disc.w_grad(ep, fc.grad_owner)
            p_poro = -fieldc.m_biot[ep] * (
                fieldc.beta[ep] * (gu[:, 0, 0] + gu[:, 1, 1])
                + gw[:, 0, 0] + gw[:, 1, 1]
            )
            p_ac = fieldc.rho_a[ea] * disc.velocity("phi", ea, fc.phi_neighbor)
            total += float(fc.weights @ (p_poro - p_ac) ** 2)
    return math.sqrt(total)


# ----------------------------------------------------------------------
# manufactured-solution runs (test case 1)
# ----------------------------------------------------------------------
@dataclass
class Case1Run:
    mesh: PolyMesh
    space: DgSpace
    system: BlockSystem
    exact: ManufacturedSolution
    state: SimState


def run_case1(mesh: PolyMesh, degree: int, dt: float, final_time: float,
              tau: float = 1.0, scheme: str = "newmark",
              penalties=(10.0, 10.0, 10.0),
              newmark: NewmarkParams | None = None,
              callback=None) -> Case1Run:
    """Integrate the manufactured-solution case on a given mesh."""
    from .physics import testcase1_solution

    exact = testcase1_solution(tau)
    space = build_space(mesh, degree, degree)
    system = assemble_block_system(space, exact.materials, penalties)
    dirichlet = DirichletData(
        u=exact.u, w=exact.w, phi=exact.phi,
    )
    loads = LoadAssembler(system, exact.sources, dirichlet)
    X0, Z0 = project_initial_conditions(
        space,
        lambda x, y: exact.u(x, y, 0.0), lambda x, y: exact.w(x, y, 0.0),
        lambda x, y: exact.phi(x, y, 0.0),
        lambda x, y: exact.du_dt(x, y, 0.0), lambda x, y: exact.dw_dt(x, y, 0.0),
        lambda x, y: exact.dphi_dt(x, y, 0.0),
    )
    nsteps = int(round(final_time / dt))
    state = integrate(
        system.A_mass, system.B_damp, system.C_stiff, loads, X0, Z0, dt, nsteps,
        scheme=scheme, params=newmark, callback=callback,
    )
    return Case1Run(mesh, space, system, exact, state)


# ----------------------------------------------------------------------
# convergence studies
# ----------------------------------------------------------------------
@dataclass
class ConvergenceReport:
    parameter: str  # "h" or "p"
    values: list  # h or p per row
    dofs: list
    errors: dict  # norm name -> list of errors

    def rates(self) -> dict:
        """log(e_i / e_{i+1}) / log(h_i / h_{i+1}) between consecutive rows."""
        out = {}
        for name, errs in self.errors.items():
            rr = [float("nan")]
            for i in range(1, len(errs)):
                num = math.log(errs[i - 1] / errs[i])
                den = math.log(self.values[i - 1] / self.values[i])
                rr.append(num / den)
            out[name] = rr
        return out

    def to_csv(self, path):
        rates = self.rates()
        names = sorted(self.errors)
        with open(path, "w") as fh:
            cols = [self.parameter, "dofs"]
            for n in names:
                cols += [f"err_{n}", f"rate_{n}"]
            fh.write(",".join(cols) + "\n")
            for i, v in enumerate(self.values):
                row = [repr(float(v)), str(self.dofs[i])]
                for n in names:
                    row.append(repr(float(self.errors[n][i])))
                    r = rates[n][i]
                    row.append("" if math.isnan(r) else repr(float(r)))
                fh.write(",".join(row) + "\n")


def h_convergence_study(levels: int, degree: int, dt: float, final_time: float,
                        tau: float = 1.0, base=(8, 4),
                        norms=("energy_E", "L2_pressure", "L2_field"),
                        penalties=(10.0, 10.0, 10.0), progress=None) -> ConvergenceReport:
    """Uniform refinement sweep of the manufactured case on Cartesian meshes."""
    hs = []
    dofs = []
    errors = {n: [] for n in norms}
    for lvl in range(levels):
        mesh = build_cartesian_mesh(
            (-1.0, 1.0, 0.0, 1.0), base[0] * 2 ** lvl, base[1] * 2 ** lvl,
            lambda x, y: "p" if x < 0 else "a",
        )
        run = run_case1(mesh, degree, dt, final_time, tau, penalties=penalties)
        hs.append(float(mesh.element_diameter.max()))
        dofs.append(run.space.dofmap.total_size)
        for n in norms:
            errors[n].append(compute_error(run.system, run.state, run.exact, NormSpec(n)))
        if progress is not None:
            progress(lvl, hs[-1], {n: errors[n][-1] for n in norms})
    return ConvergenceReport("h", hs, dofs, errors)


def p_convergence_study(mesh: PolyMesh, degrees, dt: float, final_time: float,
                        tau: float = 1.0, norms=("L2_field",),
                        penalties=(10.0, 10.0, 10.0), progress=None) -> ConvergenceReport:
    """Degree sweep on a fixed mesh; errors should decay exponentially."""
    ps = []
    dofs = []
    errors = {n: [] for n in norms}
    for p in degrees:
        run = run_case1(mesh, int(p), dt, final_time, tau, penalties=penalties)
        ps.append(int(p))
        dofs.append(run.space.dofmap.total_size)
        for n in norms:
            errors[n].append(compute_error(run.system, run.state, run.exact, NormSpec(n)))
        if progress is not None:
            progress(p, {n: errors[n][-1] for n in norms})
    return ConvergenceReport("p", ps, dofs, errors)


def semilog_fit(ps, errors):
    """Least-squares slope and R^2 of log(error) against the degree."""
    ps = np.asarray(ps, dtype=float)
    ys = np.log(np.asarray(errors, dtype=float))
    A = np.column_stack([ps, np.ones_like(ps)])
    coef, res, *_ = np.linalg.lstsq(A, ys, rcond=None)
    fitted = A @ coef
    ss_res = float(((ys - fitted) ** 2).sum())
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), r2


# ----------------------------------------------------------------------
# CSV artifacts
# ----------------------------------------------------------------------
def write_energy_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("t,E,M_part,A_part,B_part\n")
        for r in rows:
            fh.write(",".join(repr(float(r[k])) for k in
                              ("t", "E", "M_part", "A_part", "B_part")) + "\n")


def write_probe_csv(path, times, values, kind: str):
    with open(path, "w") as fh:
        fh.write(f"t,probe_{kind}\n")
        for t, v in zip(times, values):
            fh.write(f"{float(t)!r},{float(v)!r}\n")


def write_snapshot_csv(path, system: BlockSystem, state: SimState,
                       raster=(120, 120)):
    """Point-sampled fields on a raster: x, y, region, p_h, |u_h|, |w_h|, phi_h."""
    mesh = system.space.mesh
    x0 = mesh.vertices[:, 0].min()
    x1 = mesh.vertices[:, 0].max()
    y0 = mesh.vertices[:, 1].min()
    y1 = mesh.vertices[:, 1].max()
    nx, ny = raster
    xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    XX, YY = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([XX.ravel(), YY.ravel()])
    elems = mesh.find_elements(pts)
    pres = recover_pressure(system.space, system.field, state.X, state.Z)
    disc = DiscreteFields(system.space, state.X, state.Z)
    with open(path, "w") as fh:
        fh.write("x,y,region,p_h,abs_u,abs_w,phi_h\n")
        for (px, py), e in zip(pts, elems):
            if e < 0:
                continue
            pt = np.array([[px, py]])
            region = int(mesh.element_region[e])
            p_h = float(pres.eval_element(e, pt)[0])
            if region == PORO:
                phi_tab = system.space.bases[e].eval(pt)
                au = float(np.linalg.norm(disc.u_values(e, phi_tab)[0]))
                aw = float(np.linalg.norm(disc.w_values(e, phi_tab)[0]))
                ph_val = 0.0
            else:
                phi_tab = system.space.bases[e].eval(pt)
                au = aw = 0.0
                ph_val = float(disc.phi_values(e, phi_tab)[0])
            fh.write(f"{px!r},{py!r},{region},{p_h!r},{au!r},{aw!r},{ph_val!r}\n")

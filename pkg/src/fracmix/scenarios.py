"""Benchmark scenario definitions and the loading-step driver.

Four configurations: a pressurized interior crack on (-10,10)^2 (sneddon), the
same crack inside a compressible layer on (-20,20)^2 (sneddon_layered), a slit
block hanging from its clamped top edge under gravity-like load
(hanging_block), and a single-edge notched tension test (sent).
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .assembly import Assembler
from .fem import ConstraintSet, DofMap, hanging_constraints
from .krylov import KrylovSettings, LinearSolver, NonconvergenceError
from .mesh import Mesh, build_rectangle, refine_uniform
from .model import (MaterialParams, State, extrapolate_phase, lame_from_E_nu,
                    lame_from_mu_nu)
from .newton import NewtonSettings, solve_timestep
from . import qoi

__all__ = ["ScenarioConfig", "QoiReport", "Problem", "build_problem",
           "run_scenario", "SCENARIOS"]

_DEFAULTS = {
    "sneddon": dict(refines=2, nu=0.2, kappa=1e-8, eps="fixed:1.414", steps=6),
    "sneddon_layered": dict(refines=4, nu=0.2, kappa=1e-8, eps="xh:1", steps=6),
    "hanging_block": dict(refines=1, nu=0.2, kappa=1e-2, eps="fixed:0.707", steps=6),
    "sent": dict(refines=5, nu=0.3, kappa=1e-8, eps="xh:4", steps=170),
}
SCENARIOS = tuple(_DEFAULTS)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    refines: int | None = None
    nu: float | None = None
    kappa: float | None = None
    eps: str | None = None          # "fixed:<value>" or "xh:<factor>"
    steps: int | None = None
    schur: str = "amg"              # amg | cg | exact
    gmres_rtol: float = 1e-5
    gmres_max_iter: int = 300
    newton_tol: float = 1e-7
    newton_max_iter: int = 50
    inner_rtol: float = 1e-6
    inner_max_iter: int = 200

    def resolved(self) -> "ScenarioConfig":
        if self.scenario not in _DEFAULTS:
            raise ValueError(f"unknown scenario {self.scenario!r}; "
                             f"choose from {', '.join(SCENARIOS)}")
        d = _DEFAULTS[self.scenario]
        fills = {k: d[k] for k in ("refines", "nu", "kappa", "eps", "steps")
                 if getattr(self, k) is None}
        return replace(self, **fills) if fills else self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        data = json.loads(text)
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


def resolve_eps(rule: str, h: float) -> float:
    """"fixed:v" keeps v; "xh:k" scales the smallest cell diameter."""
    kind, _, value = rule.partition(":")
    if kind == "fixed":
        return float(value)
    if kind == "xh":
        return float(value) * h
    raise ValueError(f"bad eps rule {rule!r}; use fixed:<value> or xh:<factor>")


@dataclass
class Problem:
    """Everything run_scenario needs for one configuration."""
    config: ScenarioConfig
    mesh: Mesh
    dof_map: DofMap
    assembler: Assembler
    params: MaterialParams
    phi0: np.ndarray
    times: list           # loading times, times[0] is the initial instant
    h: float              # smallest active-cell diameter
    columns: list         # stats table column names beyond the common prefix
    crack_l0: float | None = None      # crack half-length for COD sampling
    eval_point: tuple | None = None    # displacement probe


@dataclass
class QoiReport:
    scenario: str
    columns: list
    rows: list = field(default_factory=list)
    profile: tuple | None = None       # (x, COD, COD_ref) at the final state


def _crack_strip_phi(dof_map: DofMap, inside) -> np.ndarray:
    """phi = 1 except 0 on the corner nodes of cells selected by center."""
    phi = np.ones(dof_map.n_phi)
    centers = dof_map.cell_origin + 0.5 * dof_map.cell_size
    cells = np.flatnonzero(inside(centers, dof_map.cell_size))
    if cells.size:
        phi[dof_map.cell_dofs("phi")[cells]] = 0.0
    return phi


def _clamp(cs: ConstraintSet, dof_map: DofMap, where, comps=(0, 1), value=0.0) -> None:
    nodes = dof_map.nodes_on("u", where)
    for comp in comps:
        for d in dof_map.global_dofs("u", nodes, comp):
            if d not in cs:
                cs.add_dirichlet(d, value)


def build_problem(config: ScenarioConfig) -> Problem:
    cfg = config.resolved()
    builder = {
        "sneddon": _build_sneddon,
        "sneddon_layered": _build_layered,
        "hanging_block": _build_hanging_block,
        "sent": _build_sent,
    }[cfg.scenario]
    return builder(cfg)


def _build_sneddon(cfg: ScenarioConfig) -> Problem:
    mesh = refine_uniform(build_rectangle((-10.0, -10.0), (10.0, 10.0), (10, 10)),
                          cfg.refines)
    dof_map = DofMap(mesh)
    h = float(mesh.cell_diameters().min())
    mu, inv_lam = lame_from_mu_nu(0.42, cfg.nu)
    params = MaterialParams(mu=mu, inv_lambda=inv_lam, gc=1.0, kappa=cfg.kappa,
                            eps=resolve_eps(cfg.eps, h), rho=1e-3, E=1.0, nu=cfg.nu)
    phi0 = _crack_strip_phi(
        dof_map, lambda c, s: (np.abs(c[:, 0]) < 1.0) & (np.abs(c[:, 1]) < s[:, 1]))
    assembler = Assembler(dof_map)
    return Problem(cfg, mesh, dof_map, assembler, params, phi0,
                   times=[0.0] + [float(k) for k in range(1, cfg.steps + 1)],
                   h=h, columns=["cod_max", "tcv"], crack_l0=1.0)


def _build_layered(cfg: ScenarioConfig) -> Problem:
    mesh = refine_uniform(build_rectangle((-20.0, -20.0), (20.0, 20.0), (10, 10)),
                          cfg.refines)
    dof_map = DofMap(mesh)
    h = float(mesh.cell_diameters().min())
    # both regions share E = 1; only the Poisson ratio changes across the
    # layer, so mu and lambda vary per cell
    mu_inner, inv_inner = lame_from_E_nu(1.0, cfg.nu)
    mu_layer, inv_layer = lame_from_E_nu(1.0, 0.2)
    centers = dof_map.cell_origin + 0.5 * dof_map.cell_size
    sizes = dof_map.cell_size
    in_strip = (np.abs(centers[:, 0]) < 1.0) & (np.abs(centers[:, 1]) < sizes[:, 1])
    inner = (np.abs(centers[:, 0]) < 10.0) & (np.abs(centers[:, 1]) < 10.0)
    cell_inv = np.where(inner & ~in_strip, inv_inner, inv_layer)
    cell_mu = np.where(inner & ~in_strip, mu_inner, mu_layer)
    params = MaterialParams(mu=mu_inner, inv_lambda=inv_inner, gc=1.0, kappa=cfg.kappa,
                            eps=resolve_eps(cfg.eps, h), rho=1e-3, E=1.0, nu=cfg.nu)
    phi0 = _crack_strip_phi(
        dof_map, lambda c, s: (np.abs(c[:, 0]) < 1.0) & (np.abs(c[:, 1]) < s[:, 1]))
    assembler = Assembler(dof_map, cell_inv_lambda=cell_inv, cell_mu=cell_mu)
    return Problem(cfg, mesh, dof_map, assembler, params, phi0,
                   times=[0.0] + [float(k) for k in range(1, cfg.steps + 1)],
                   h=h, columns=["cod_max", "tcv"], crack_l0=1.0)


def _build_hanging_block(cfg: ScenarioConfig) -> Problem:
    mesh = refine_uniform(
        build_rectangle((0.0, 0.0), (4.0, 4.0), (8, 8), slit=(0.0, 2.0, 2.0)),
        cfg.refines)
    dof_map = DofMap(mesh)
    h = float(mesh.cell_diameters().min())
    mu, inv_lam = lame_from_mu_nu(0.42, cfg.nu)
    params = MaterialParams(mu=mu, inv_lambda=inv_lam, gc=1.0, kappa=cfg.kappa,
                            eps=resolve_eps(cfg.eps, h), rho=0.0,
                            E=2.0 * mu * (1.0 + cfg.nu), nu=cfg.nu)
    # phi = 0 interpolated on both lips of the slit (tip included)
    phi0 = np.ones(dof_map.n_phi)
    coords = dof_map.node_coords("phi")
    on_slit = (np.abs(coords[:, 1] - 2.0) < 1e-9) & (coords[:, 0] <= 2.0 + 1e-9)
    phi0[on_slit] = 0.0
    assembler = Assembler(dof_map, body_force=(0.0, -8.0e-7))
    return Problem(cfg, mesh, dof_map, assembler, params, phi0,
                   times=[0.0] + [float(k) for k in range(1, cfg.steps + 1)],
                   h=h, columns=["u_y"], eval_point=(0.0, 1.99))


def _sent_load(step: int) -> float:
    """Top-edge displacement: 1e-4 per step for 58 steps, then 1e-5."""
    if step <= 58:
        return 1e-4 * step
    return 1e-4 * 58 + 1e-5 * (step - 58)


def _build_sent(cfg: ScenarioConfig) -> Problem:
    mesh = refine_uniform(build_rectangle((0.0, 0.0), (1.0, 1.0), (1, 1)), cfg.refines)
    dof_map = DofMap(mesh)
    h = float(mesh.cell_diameters().min())
    mu, inv_lam = lame_from_mu_nu(80.77e3, cfg.nu)
    params = MaterialParams(mu=mu, inv_lambda=inv_lam, gc=2.7, kappa=cfg.kappa,
                            eps=resolve_eps(cfg.eps, h), rho=0.0,
                            E=2.0 * mu * (1.0 + cfg.nu), nu=cfg.nu)
    phi0 = _crack_strip_phi(
        dof_map, lambda c, s: (c[:, 0] < 0.5) & (np.abs(c[:, 1] - 0.5) < s[:, 1]))
    assembler = Assembler(dof_map)
    return Problem(cfg, mesh, dof_map, assembler, params, phi0,
                   times=[0.0] + [_sent_load(k) for k in range(1, cfg.steps + 1)],
                   h=h, columns=["bulk_energy", "crack_energy"])


def step_constraints(problem: Problem, t: float) -> ConstraintSet:
    """Hanging-node couplings plus the scenario's Dirichlet data at load t."""
    dof_map = problem.dof_map
    cs = hanging_constraints(problem.mesh, dof_map)
    box = problem.mesh.bounding_box()
    tol = 1e-9 * max(box.xmax - box.xmin, box.ymax - box.ymin)
    name = problem.config.scenario
    if name in ("sneddon", "sneddon_layered"):
        _clamp(cs, dof_map, lambda xy: (np.abs(xy[:, 0] - box.xmin) < tol)
               | (np.abs(xy[:, 0] - box.xmax) < tol)
               | (np.abs(xy[:, 1] - box.ymin) < tol)
               | (np.abs(xy[:, 1] - box.ymax) < tol))
    elif name == "hanging_block":
        _clamp(cs, dof_map, lambda xy: np.abs(xy[:, 1] - 4.0) < tol)
    elif name == "sent":
        _clamp(cs, dof_map, lambda xy: np.abs(xy[:, 1]) < tol)
        _clamp(cs, dof_map, lambda xy: np.abs(xy[:, 1] - 1.0) < tol, comps=(0,))
        top = dof_map.nodes_on("u", lambda xy: np.abs(xy[:, 1] - 1.0) < tol)
        for d in dof_map.global_dofs("u", top, 1):
            if d not in cs:
                cs.add_dirichlet(d, t)
    return cs


def _qoi_row(problem: Problem, state: State, phi_tilde: np.ndarray) -> list:
    out = []
    for col in problem.columns:
        if col == "cod_max":
            out.append(qoi.cod_max(state, problem.dof_map, problem.crack_l0,
                                   problem.h / 2.0))
        elif col == "tcv":
            out.append(qoi.compute_tcv(problem.assembler, state))
        elif col == "u_y":
            out.append(float(qoi.point_displacement(
                problem.dof_map, state.u, problem.eval_point)[1]))
        elif col == "bulk_energy":
            out.append(qoi.bulk_energy(problem.assembler, state, phi_tilde,
                                       problem.params))
        elif col == "crack_energy":
            out.append(qoi.crack_energy(problem.assembler, state, problem.params))
    return out


def run_scenario(config: ScenarioConfig, out_dir=None) -> QoiReport:
    """Run the loading loop; a nonconverged step yields a "-" row and stops."""
    problem = build_problem(config)
    cfg = problem.config
    dof_map = problem.dof_map
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    report = QoiReport(scenario=cfg.scenario,
                       columns=["step", "t", "dofs", "avg_lin", "avg_cg", "n_as"]
                       + problem.columns)

    solver = LinearSolver(
        dof_map,
        krylov=KrylovSettings(rtol=cfg.gmres_rtol, max_iter=cfg.gmres_max_iter),
        schur_policy=cfg.schur, inner_rtol=cfg.inner_rtol,
        inner_max_iter=cfg.inner_max_iter)
    newton = NewtonSettings(abs_tol=cfg.newton_tol, max_iterations=cfg.newton_max_iter)

    state = State.zero(dof_map.n_u, dof_map.n_p, dof_map.n_phi, problem.phi0)
    times = problem.times
    t_prev = t_prev2 = times[0]
    final_state = None
    multi_step = len(times) > 2

    for n, t in enumerate(times[1:], start=1):
        phi_tilde = extrapolate_phase(state.phi_prev, state.phi_prev2,
                                      t, t_prev, t_prev2)
        constraints = step_constraints(problem, t)
        try:
            new_state, stats = solve_timestep(
                state, phi_tilde, problem.params, constraints, problem.assembler,
                solver, newton, step_index=n)
        except NonconvergenceError:
            report.rows.append([n, t, dof_map.n_dofs] + ["-"] * (3 + len(problem.columns)))
            break
        row = [n, t, dof_map.n_dofs, stats.avg_lin, stats.avg_cg, stats.n_as]
        report.rows.append(row + _qoi_row(problem, new_state, phi_tilde))
        state = State(u=new_state.u, p=new_state.p, phi=new_state.phi,
                      phi_prev=new_state.phi.copy(), phi_prev2=state.phi_prev.copy())
        t_prev2, t_prev = t_prev, t
        final_state = new_state
        if out_dir is not None and multi_step:
            from .output import write_vtk
            write_vtk(f"{out_dir}/fields_{n:04d}.vtk", dof_map, new_state)
        if stats.n_as == 0:
            break           # stationary under constant load; further steps repeat

    if problem.crack_l0 is not None and final_state is not None:
        xs, vals = qoi.cod_profile(final_state, dof_map, problem.crack_l0,
                                   problem.h / 2.0)
        refs = np.array([qoi.cod_ref(float(x), problem.params, problem.crack_l0)
                         for x in xs])
        report.profile = (xs, vals, refs)

    if out_dir is not None:
        from .output import write_outputs
        write_outputs(report, final_state, dof_map, out_dir)
    return report

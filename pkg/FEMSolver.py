from dataclasses import dataclass, field, replace, asdict
import os
import time

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg, bicgstab, spsolve

from WSExceptions import ConfigException, SolverException, SimulationException, WSException
from WoundGeometry import WoundGeometry, polygon_area, distance_to_polyline, points_inside
from BioModel import (KineticParams, VariableParams, PointState, reaction_split, elastic_modulus,
                      traction_magnitude, growth_rate)
from FEMMesh import (Mesh, BoundaryTag, generate_mesh, triangulate_domain, mesh_quality, needs_remesh,
                     interpolate, mesh_edges)
from FCTLimiter import LimiterMode, transport_step
from CustomLogger import logger

FIELD_NAMES = ('N', 'M', 'c', 'rho')
SNAPSHOT_HEADER = 'x,y,u1,u2,N,M,c,rho'

@dataclass(frozen=True)
class SimConfig:
    """
    Numerical settings of one simulation. `h` and `transition_width` default
    to values derived from the wound cuts (see `element_size`, `transition`).
    """

    dt: float = 0.1
    t_end: float = 100.0
    h: float | None = None
    remesh_threshold: float = 0.5
    fct_mode: str = 'fct'
    solver: str = 'iterative'
    tol: float = 1e-8
    max_iterations: int = 10000
    record_interval: float = 1.0
    record_times: tuple | None = None
    transition_width: float | None = None
    quasi_static: bool = False
    wounded: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigException(argument=f"dt={self.dt}", message="time step must be positive")
        if self.t_end < self.dt:
            raise ConfigException(argument=f"t_end={self.t_end}", message="t_end must be at least one time step")
        if not 0.0 < self.remesh_threshold <= 1.0:
            raise ConfigException(argument=f"remesh_threshold={self.remesh_threshold}", message="remesh threshold must lie in (0, 1]")
        if self.h is not None and not self.h > 0:
            raise ConfigException(argument=f"h={self.h}", message="element size must be positive")
        if self.solver not in ('iterative', 'direct'):
            raise ConfigException(argument=self.solver, message="solver must be 'iterative' or 'direct'")
        if not self.tol > 0:
            raise ConfigException(argument=f"tol={self.tol}", message="solver tolerance must be positive")
        if not self.record_interval > 0:
            raise ConfigException(argument=f"record_interval={self.record_interval}", message="record interval must be positive")
        if self.transition_width is not None and not self.transition_width > 0:
            raise ConfigException(argument=f"transition_width={self.transition_width}", message="transition width must be positive")
        try:
            LimiterMode(self.fct_mode)
        except ValueError:
            raise ConfigException(argument=self.fct_mode, message="fct_mode must be 'fct' or 'clip'")
        if self.record_times is not None:
            object.__setattr__(self, 'record_times', tuple(float(t) for t in self.record_times))
            if any(t < 0 or t > self.t_end for t in self.record_times):
                raise ConfigException(argument=self.record_times, message="record times must lie in [0, t_end]")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def element_size(self, geometry: WoundGeometry) -> float:
        if self.h is not None:
            return self.h
        return min(geometry.x_cut, geometry.y_cut) / 3.0

    def transition(self, geometry: WoundGeometry) -> float:
        if self.transition_width is not None:
            return self.transition_width
        return min(0.2 * min(geometry.x_cut, geometry.y_cut), 0.5)

    def recorded_steps(self) -> list[int]:
        if self.record_times is not None:
            times = self.record_times
        else:
            times = np.arange(0.0, self.t_end + 0.5 * self.record_interval, self.record_interval)
            times = [t for t in times if t <= self.t_end + 1e-9]
        return sorted({int(round(t / self.dt)) for t in times} | {0})

    def with_overrides(self, **overrides) -> 'SimConfig':
        return replace(self, **overrides)

@dataclass
class SimState:
    """
    Nodal state on the current (deformed) mesh. `reference` holds each
    node's undeformed coordinate, `eps` the strain as (e11, e12, e22).
    """

    mesh: Mesh
    t: float
    N: np.ndarray
    M: np.ndarray
    c: np.ndarray
    rho: np.ndarray
    v: np.ndarray
    eps: np.ndarray
    u: np.ndarray
    reference: np.ndarray

    def point_state(self) -> PointState:
        return PointState(N=self.N, M=self.M, c=self.c, rho=self.rho, v=self.v, eps=self.eps)

    def nodal_arrays(self) -> dict:
        return {'N': self.N, 'M': self.M, 'c': self.c, 'rho': self.rho, 'v': self.v,
                'eps': self.eps, 'u': self.u, 'reference': self.reference}

@dataclass
class Snapshot:
    t: float
    nodes: np.ndarray
    reference: np.ndarray
    u: np.ndarray
    fields: dict
    rim: np.ndarray
    rsaw: float
    triangles: np.ndarray | None = None

    @classmethod
    def of(cls, state: SimState, rsaw: float) -> 'Snapshot':
        return cls(t=state.t, nodes=state.mesh.nodes.copy(), reference=state.reference.copy(), u=state.u.copy(),
                   fields={name: getattr(state, name).copy() for name in FIELD_NAMES},
                   rim=state.mesh.rim.copy(), rsaw=rsaw, triangles=state.mesh.triangles.copy())

    def rim_positions(self) -> np.ndarray:
        return self.nodes[self.rim]

    def reference_mesh(self) -> Mesh:
        return Mesh(nodes=self.reference, triangles=self.triangles, tags=np.zeros(len(self.reference), dtype=int),
                    rim=self.rim, extent=(0.0, 0.0), h=0.0)

    def displacement_at(self, points: np.ndarray) -> np.ndarray:
        """u at undeformed coordinates by P1 interpolation on the undeformed mesh."""
        if self.triangles is None:
            raise SimulationException(argument=self.t, message="snapshot has no connectivity")
        return interpolate(self.reference_mesh(), self.u, points)

@dataclass
class SimResult:
    geometry: WoundGeometry
    params: KineticParams
    var_params: VariableParams
    config: SimConfig
    snapshots: list = field(default_factory=list)
    wall_clock: float = 0.0
    remesh_count: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def rsaw_series(self) -> np.ndarray:
        return np.array([s.rsaw for s in self.snapshots])

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        meta = {'version': 1, 'geometry': self.geometry.describe(), 'wall_clock': self.wall_clock,
                'remesh_count': self.remesh_count, 'h': self.config.element_size(self.geometry)}
        meta.update({f"params.{k}": v for k, v in asdict(self.params).items()})
        meta.update({f"var.{k}": v for k, v in asdict(self.var_params).items()})
        meta.update({f"config.{k}": v for k, v in asdict(self.config).items()})
        with open(os.path.join(directory, 'meta'), mode='w') as file:
            for name, value in meta.items():
                file.write(f"{name} = {float(value)!r}\n" if isinstance(value, float) else f"{name} = {value}\n")
        for snap in self.snapshots:
            table = np.column_stack([snap.nodes, snap.u] + [snap.fields[name] for name in FIELD_NAMES])
            np.savetxt(os.path.join(directory, f"t_{snap.t:g}.csv"), table, delimiter=',',
                       header=SNAPSHOT_HEADER, comments='', fmt='%.17g')
        with open(os.path.join(directory, 'rsaw.csv'), mode='w') as file:
            file.write('t,rsaw\n')
            for snap in self.snapshots:
                file.write(f"{snap.t:g},{float(snap.rsaw)!r}\n")

    @classmethod
    def load(cls, directory) -> 'SimResult':
        """Reload a saved result; snapshots come back without connectivity and rim indices."""
        meta = {}
        with open(os.path.join(directory, 'meta'), mode='r') as file:
            for line in file:
                name, value = (part.strip() for part in line.split('=', 1))
                meta[name] = value
        geometry = WoundGeometry.parse(meta['geometry'])
        params = KineticParams(**{k[len('params.'):]: float(v) for k, v in meta.items() if k.startswith('params.')})
        var = VariableParams(**{k[len('var.'):]: float(v) for k, v in meta.items() if k.startswith('var.')})
        config = SimConfig(**{k[len('config.'):]: _parse_meta_value(v) for k, v in meta.items() if k.startswith('config.')})
        rsaw_table = np.loadtxt(os.path.join(directory, 'rsaw.csv'), delimiter=',', skiprows=1, ndmin=2)
        snapshots = []
        for t, value in rsaw_table:
            table = np.loadtxt(os.path.join(directory, f"t_{t:g}.csv"), delimiter=',', skiprows=1, ndmin=2)
            snapshots.append(Snapshot(t=float(t), nodes=table[:, 0:2], reference=table[:, 0:2] - table[:, 2:4],
                                      u=table[:, 2:4], fields=dict(zip(FIELD_NAMES, table[:, 4:8].T)),
                                      rim=np.zeros(0, dtype=int), rsaw=float(value)))
        return cls(geometry=geometry, params=params, var_params=var, config=config, snapshots=snapshots,
                   wall_clock=float(meta.get('wall_clock', 0.0)), remesh_count=int(meta.get('remesh_count', 0)))

def _parse_meta_value(text: str):
    if text == 'None':
        return None
    if text in ('True', 'False'):
        return text == 'True'
    if text.startswith('('):
        return tuple(float(t) for t in text.strip('(),').split(',') if t.strip())
    try:
        number = float(text)
    except ValueError:
        return text
    return int(number) if text.lstrip('-').isdigit() else number

@dataclass
class BoundaryTrace:
    times: np.ndarray
    rsaw: np.ndarray
    rims: list
    argmin_time: float
    min_value: float
    final_value: float

def solve_linear(A: sparse.csr_matrix, b: np.ndarray, x0: np.ndarray, config: SimConfig, symmetric: bool, t: float) -> np.ndarray:
    """
    Krylov solve unless `config.solver` is 'direct'. A Krylov result whose true
    residual misses `config.tol` is replaced by a sparse direct solve.
    """
    if not np.any(b):
        return np.zeros_like(b)
    if config.solver == 'direct':
        x = spsolve(A.tocsc(), b)
    else:
        diagonal = A.diagonal()
        preconditioner = sparse.diags(np.where(diagonal != 0.0, 1.0 / np.where(diagonal != 0.0, diagonal, 1.0), 1.0))
        krylov = cg if symmetric else bicgstab
        x, info = krylov(A, b, x0=x0, rtol=config.tol, atol=0.0, maxiter=config.max_iterations, M=preconditioner)
        if info != 0:
            residual = np.linalg.norm(b - A @ x)
            if not (np.isfinite(residual) and residual <= config.tol * np.linalg.norm(b)):
                logger.warning(f"{krylov.__name__} stopped with info={info} at t={t:g}, falling back to a direct solve")
                x = spsolve(A.tocsc(), b)
    if not np.all(np.isfinite(x)):
        raise SolverException(argument=f"t={t:g}", message="non-finite solution")
    return x

def _assemble(triangles: np.ndarray, local: np.ndarray, n: int) -> sparse.csr_matrix:
    k = triangles.shape[1]
    rows = np.repeat(triangles[:, :, None], k, axis=2)
    cols = np.repeat(triangles[:, None, :], k, axis=1)
    return sparse.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()

def initial_conditions(mesh: Mesh, geometry: WoundGeometry, params: KineticParams, transition_width: float,
                       wounded: bool = True) -> dict:
    """
    Unwounded values outside the wound, a half sine period over the first
    `transition_width` cm inside the rim towards the wound values.
    """
    n = mesh.n_nodes
    N = np.full(n, params.N_bar)
    c = np.full(n, params.c_bar)
    rho = np.full(n, params.rho_bar)
    if wounded:
        rim = mesh.rim_polyline()
        d = distance_to_polyline(mesh.nodes, rim)
        inside = points_inside(mesh.nodes, rim)
        profile = np.sin(np.pi * np.minimum(d, transition_width) / (2.0 * transition_width))
        for values, bar, tilde in ((N, params.N_bar, params.N_tilde), (c, params.c_bar, params.c_tilde),
                                   (rho, params.rho_bar, params.rho_tilde)):
            values[inside] = bar + (tilde - bar) * profile[inside]
    return {'N': N, 'M': np.full(n, params.M_bar), 'c': c, 'rho': rho,
            'v': np.zeros((n, 2)), 'eps': np.zeros((n, 3)), 'u': np.zeros((n, 2))}

def initial_state(mesh: Mesh, geometry: WoundGeometry, params: KineticParams, config: SimConfig) -> SimState:
    values = initial_conditions(mesh, geometry, params, config.transition(geometry), config.wounded)
    return SimState(mesh=mesh, t=0.0, reference=mesh.nodes.copy(), **values)

def _fixed_velocity_dofs(tags: np.ndarray) -> np.ndarray:
    fixed = np.zeros((len(tags), 2), dtype=bool)
    fixed[tags == BoundaryTag.Outer] = True
    fixed[tags == BoundaryTag.Origin] = True
    fixed[tags == BoundaryTag.Vertical, 0] = True
    fixed[tags == BoundaryTag.Horizontal, 1] = True
    return fixed.ravel()

def _chemistry(state: SimState, areas, grads, mass, edges, dt, var: VariableParams, params: KineticParams,
               config: SimConfig) -> dict:
    mesh = state.mesh
    tri, n = mesh.triangles, mesh.n_nodes
    cells = (state.N + state.M)[tri].mean(axis=1)
    grad_c = np.einsum('ea,eak->ek', state.c[tri], grads)
    laplace = np.einsum('eak,ebk->eab', grads, grads) * areas[:, None, None]
    # chemotaxis couples row a to every column b with the same weight
    chemotaxis = (areas / 3.0)[:, None] * np.einsum('ek,eak->ea', grad_c, grads)
    K_cells = _assemble(tri, -var.D_F * cells[:, None, None] * laplace + var.chi_F * chemotaxis[:, :, None], n)
    K_signal = _assemble(tri, -var.D_c * laplace, n)

    split = reaction_split(state.point_state(), var, params)
    fixed = mesh.tags == BoundaryTag.Outer
    mode = LimiterMode(config.fct_mode)
    solve = lambda A, b, x0: solve_linear(A, b, x0, config, symmetric=False, t=state.t)
    updated = {}
    for name, K, bar in (('N', K_cells, params.N_bar), ('M', K_cells, params.M_bar), ('c', K_signal, params.c_bar)):
        production, loss = split[name]
        updated[name] = transport_step(K, edges, mass, getattr(state, name), production, loss, dt, fixed,
                                       np.full(n, bar), mode, solve, name=name, time=state.t)
    production, loss = split['rho']
    updated['rho'] = (state.rho / dt + production) / (1.0 / dt + loss)
    return updated

def _momentum(state: SimState, areas, grads, mass, dt, M, rho, params: KineticParams, config: SimConfig) -> np.ndarray:
    mesh = state.mesh
    tri, n = mesh.triangles, mesh.n_nodes
    eps = state.eps[tri].mean(axis=1)
    rho_e = rho[tri].mean(axis=1)
    modulus, volumetric = elastic_modulus(rho_e, params)
    trace = eps[:, 0] + eps[:, 2]
    # elastic response to this step's strain increment, linearised into the viscosities
    beta = dt * modulus * np.maximum(1.0 - trace, 0.0)
    mu_1 = params.mu_1 + beta
    mu_2 = params.mu_2 + beta * volumetric

    m = len(tri)
    B = np.zeros((m, 3, 6))
    B[:, 0, 0::2] = grads[:, :, 0]
    B[:, 1, 1::2] = grads[:, :, 1]
    B[:, 2, 0::2] = grads[:, :, 1]
    B[:, 2, 1::2] = grads[:, :, 0]
    C = np.zeros((m, 3, 3))
    C[:, 0, 0] = C[:, 1, 1] = mu_1 + mu_2
    C[:, 0, 1] = C[:, 1, 0] = mu_2
    C[:, 2, 2] = mu_1 / 2.0
    local = np.einsum('eia,eij,ejb->eab', B, C, B) * areas[:, None, None]

    psi = traction_magnitude(M[tri].mean(axis=1), rho_e, params)
    stress = np.column_stack([modulus * (eps[:, 0] + trace * volumetric) + psi,
                              modulus * (eps[:, 2] + trace * volumetric) + psi,
                              modulus * eps[:, 1]])
    local_load = -np.einsum('eia,ei->ea', B, stress) * areas[:, None]

    dofs = np.stack([2 * tri, 2 * tri + 1], axis=2).reshape(m, 6)
    A = _assemble(dofs, local, 2 * n)
    b = np.zeros(2 * n)
    np.add.at(b, dofs.ravel(), local_load.ravel())
    if not config.quasi_static:
        inertia = np.repeat(params.rho_t * mass / dt, 2)
        A = A + sparse.diags(inertia)
        b += inertia * state.v.ravel()

    free = ~_fixed_velocity_dofs(mesh.tags)
    A_free = A[free][:, free].tocsr()
    v = np.zeros(2 * n)
    v[free] = solve_linear(A_free, b[free], state.v.ravel()[free], config, symmetric=True, t=state.t)
    return v.reshape(n, 2)

def _strain(state: SimState, areas, grads, mass_old, mass_new, dt, v, N, M, c, params: KineticParams) -> np.ndarray:
    tri, n = state.mesh.triangles, state.mesh.n_nodes
    L = np.einsum('eai,eaj->eij', v[tri], grads)
    spin = 0.5 * (L[:, 0, 1] - L[:, 1, 0])
    per_element = np.column_stack([spin, L[:, 0, 0], L[:, 1, 1], 0.5 * (L[:, 0, 1] + L[:, 1, 0]),
                                   L[:, 0, 0] + L[:, 1, 1]]) * (areas / 3.0)[:, None]
    S = np.zeros((n, 5))
    for a in range(3):
        np.add.at(S, tri[:, a], per_element)
    w, d11, d22, d12, div = S.T
    e11, e12, e22 = state.eps.T
    stretch = e11 + e22 - 1.0
    r11 = 2.0 * e12 * w - stretch * d11 + e11 * div
    r22 = -2.0 * e12 * w - stretch * d22 + e22 * div
    r12 = -(e11 - e22) * w - stretch * d12 + e12 * div
    gamma = growth_rate(N, M, c, params)
    denominator = mass_new * (1.0 + dt * gamma)
    return np.column_stack([mass_old * e11 + dt * r11, mass_old * e12 + dt * r12,
                            mass_old * e22 + dt * r22]) / denominator[:, None]

def step(state: SimState, dt: float, var: VariableParams, params: KineticParams, config: SimConfig) -> SimState:
    """
    One semi-implicit Euler step: chemistry (limited transport with lumped
    mass), momentum, strain, then the Lagrangian mesh update.
    """
    mesh = state.mesh
    areas, grads = mesh.shape_gradients()
    mass = mesh.lumped_mass(areas)
    edges = mesh_edges(mesh.triangles)

    species = _chemistry(state, areas, grads, mass, edges, dt, var, params, config)
    v = _momentum(state, areas, grads, mass, dt, species['M'], species['rho'], params, config)

    moved = mesh.with_nodes(mesh.nodes + dt * v)
    mass_new = moved.lumped_mass()
    eps = _strain(state, areas, grads, mass, mass_new, dt, v, species['N'], species['M'], species['c'], params)

    outer = mesh.tags == BoundaryTag.Outer
    ratio = mass / mass_new
    for name, bar in (('N', params.N_bar), ('M', params.M_bar), ('c', params.c_bar)):
        species[name] = species[name] * ratio
        species[name][outer] = bar
    species['rho'] = species['rho'] * ratio

    return SimState(mesh=moved, t=state.t + dt, v=v, eps=eps, u=state.u + dt * v,
                    reference=state.reference, **species)

def remesh(state: SimState) -> SimState:
    """
    Fresh triangulation on the current outer boundary and rim nodes; nodal
    values and reference coordinates transferred by P1 interpolation.
    """
    old = state.mesh
    keep = old.tags != BoundaryTag.Interior
    keep[old.rim] = False
    mesh = triangulate_domain(old.extent, old.nodes[keep], old.nodes[old.rim], old.h)
    moved = {name: interpolate(old, values, mesh.nodes) for name, values in state.nodal_arrays().items()}
    for name in FIELD_NAMES:
        moved[name] = np.maximum(moved[name], 0.0)
    return SimState(mesh=mesh, t=state.t, **moved)

def _rim_area(rim: np.ndarray) -> float:
    return polygon_area(np.vstack([[0.0, 0.0], rim]))

def run_simulation(config: SimConfig, geometry: WoundGeometry, var_params: VariableParams,
                   params: KineticParams | None = None) -> SimResult:
    params = params or KineticParams()
    started = time.perf_counter()
    h = config.element_size(geometry)
    mesh = generate_mesh(geometry, h)
    baseline = mesh_quality(mesh)
    state = initial_state(mesh, geometry, params, config)
    initial_area = _rim_area(mesh.rim_polyline())
    result = SimResult(geometry=geometry, params=params, var_params=var_params, config=config)
    recorded = set(config.recorded_steps())
    result.snapshots.append(Snapshot.of(state, 1.0))
    logger.debug(f"simulating {geometry.describe()} with h={h:.4g}, {mesh.n_nodes} nodes, {config.n_steps} steps")

    for k in range(1, config.n_steps + 1):
        try:
            state = step(state, config.dt, var_params, params, config)
            state.t = k * config.dt
            if needs_remesh(state.mesh, config.remesh_threshold, baseline):
                before = mesh_quality(state.mesh)
                state = remesh(state)
                baseline = mesh_quality(state.mesh)
                result.remesh_count += 1
                logger.debug(f"remeshed at t={state.t:g}: quality {before:.3f} -> {baseline:.3f}")
        except SimulationException:
            raise
        except WSException as e:
            raise SimulationException(argument=f"t={k * config.dt:g}", message=f"{type(e).__name__}: {e}") from e
        if k in recorded:
            result.snapshots.append(Snapshot.of(state, _rim_area(state.mesh.rim_polyline()) / initial_area))

    result.wall_clock = time.perf_counter() - started
    logger.info(f"simulation {geometry.describe()} done in {result.wall_clock:.1f}s, "
                f"{result.remesh_count} remeshes, final RSAW {result.snapshots[-1].rsaw:.4f}")
    return result

def wound_boundary_trace(result: SimResult) -> BoundaryTrace:
    rims = [snap.rim_positions() for snap in result.snapshots]
    reference = _rim_area(rims[0])
    values = np.array([_rim_area(rim) / reference for rim in rims])
    times = result.times
    first_min = int(np.argmin(values))
    return BoundaryTrace(times=times, rsaw=values, rims=rims, argmin_time=float(times[first_min]),
                         min_value=float(values[first_min]), final_value=float(values[-1]))

def save_simulation_inputs(directory, params: KineticParams, var: VariableParams):
    params.to_file(os.path.join(directory, 'kinetics.params'))
    var.to_file(os.path.join(directory, 'variable.params'))

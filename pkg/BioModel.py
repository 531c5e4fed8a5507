from dataclasses import dataclass, fields, replace, asdict
import math

import numpy as np

from WSExceptions import ParameterException
from CustomLogger import logger

# admissible ranges of the patient-specific parameters (branch inputs)
VARIABLE_RANGES = {
    'D_F': (7.6167e-7, 1.2e-6),
    'chi_F': (2e-3, 3e-3),
    'D_c': (2.22e-3, 3.2e-3),
    'k_F': (8e6, 1.08e7),
    'a_c_I': (0.9e-8, 1.1e-8),
}

# constants allowed to be negative or that are not rates/densities
_SIGNED = ('q',)

@dataclass(frozen=True)
class KineticParams:
    """
    Fixed constants of the dermal wound model in the cm-g-day-cells unit
    system. Defaults are the reference values of the model; the `NC` values
    (r_F, k_rho, ...) are tuned so the unwounded dermis sits at equilibrium.
    """

    k_c: float = 4e-13             # g/(cells day)
    r_F: float = 9.24e-1           # (cm^3/cells)^q / day
    r_F_max: float = 2.0
    k_rho: float = 7.6e-8          # g/(cells day)
    k_rho_max: float = 10.0
    a_c_II: float = 1e-8           # g/cm^3
    a_c_III: float = 2e8           # cm^3/g
    a_c_IV: float = 1e-9           # g/cm^3
    eta_I: float = 2.0
    eta_II: float = 0.5
    kappa_F: float = 1e-6          # cm^3/cells
    q: float = -4.151e-1
    delta_N: float = 2e-2          # 1/day
    delta_M: float = 6e-2          # 1/day
    delta_c: float = 5e-4          # cm^6/(cells g day)
    delta_rho: float = 6e-6        # cm^6/(cells g day)
    N_bar: float = 1e4             # cells/cm^3
    M_bar: float = 0.0
    c_bar: float = 0.0
    rho_bar: float = 1.125e-1      # g/cm^3
    rho_t: float = 1.09            # g/cm^3
    mu_1: float = 1e2              # (N day)/cm^2
    mu_2: float = 1e2
    E: float = 32.0                # N/((g/cm^3)^(1/2) cm^2)
    xi: float = 5e-2               # (N g)/(cells cm)
    R: float = 0.995               # g/cm^3
    zeta: float = 4e2              # cm^6/(cells g day)
    nu: float = 4.9e-1
    N_tilde: float = 2e3
    c_tilde: float = 1e-8
    rho_tilde: float = 1.13e-2

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ParameterException(argument=f.name, message="kinetic constant must be a finite number")
            if f.name not in _SIGNED and value < 0:
                raise ParameterException(argument=f"{f.name}={value}", message="rates and densities must be non-negative")
        if not 0.0 < self.nu < 0.5:
            raise ParameterException(argument=f"nu={self.nu}", message="singular material, Poisson ratio must lie in (0, 0.5)")
        if self.M_bar != 0.0 or self.c_bar != 0.0:
            raise ParameterException(argument=(self.M_bar, self.c_bar), message="unwounded dermis has no myofibroblasts nor signaling molecules")
        if 1.0 + self.q <= 0.0:
            raise ParameterException(argument=f"q={self.q}", message="logistic exponent 1+q must be positive")

    def with_overrides(self, **overrides) -> 'KineticParams':
        unknown = set(overrides) - {f.name for f in fields(self)}
        if unknown:
            raise ParameterException(argument=sorted(unknown), message="unknown kinetic constant")
        return replace(self, **{k: float(v) for k, v in overrides.items()})

    def to_file(self, path):
        write_parameter_file(path, asdict(self))

    @classmethod
    def from_file(cls, path) -> 'KineticParams':
        return cls().with_overrides(**read_parameter_file(path))

@dataclass(frozen=True)
class VariableParams:
    D_F: float
    chi_F: float
    D_c: float
    k_F: float
    a_c_I: float

    def __post_init__(self):
        for name, (lo, hi) in VARIABLE_RANGES.items():
            value = getattr(self, name)
            if not (lo <= value <= hi):
                raise ParameterException(argument=f"{name}={value}", message=f"outside of the admissible range [{lo}, {hi}]")

    def as_array(self) -> np.ndarray:
        return np.array([self.D_F, self.chi_F, self.D_c, self.k_F, self.a_c_I])

    @classmethod
    def from_array(cls, values) -> 'VariableParams':
        return cls(*(float(v) for v in values))

    @classmethod
    def midpoint(cls) -> 'VariableParams':
        return cls(*((lo + hi) / 2.0 for lo, hi in VARIABLE_RANGES.values()))

    def to_file(self, path):
        write_parameter_file(path, asdict(self))

    @classmethod
    def from_file(cls, path) -> 'VariableParams':
        values = read_parameter_file(path)
        missing = set(VARIABLE_RANGES) - set(values)
        if missing:
            raise ParameterException(argument=sorted(missing), message="variable parameter missing in file")
        return cls(**{name: values[name] for name in VARIABLE_RANGES})

@dataclass
class PointState:
    """
    Biological and mechanical state at one or many points (arrays broadcast).
    `eps` holds the symmetric strain as (e11, e12, e22) in the last axis.
    """

    N: np.ndarray
    M: np.ndarray
    c: np.ndarray
    rho: np.ndarray
    v: np.ndarray | None = None
    eps: np.ndarray | None = None

    def check_domain(self):
        for name in ('N', 'M', 'c', 'rho'):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise ParameterException(argument=name, message="densities must be non-negative")

def write_parameter_file(path, values: dict):
    with open(path, mode='w') as file:
        for name, value in values.items():
            file.write(f"{name} = {value!r}\n")

def read_parameter_file(path) -> dict:
    values = {}
    with open(path, mode='r') as file:
        for lineno, line in enumerate(file, start=1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ParameterException(argument=f"{path}:{lineno}", message="expected 'name = value'")
            name, value = (part.strip() for part in line.split('=', 1))
            try:
                values[name] = float(value)
            except ValueError:
                raise ParameterException(argument=f"{path}:{lineno}", message=f"not a number: {value}")
    logger.debug(f"read {len(values)} parameters from {path}")
    return values

def mmp_equilibrium(N, M, c, rho, params: KineticParams):
    return (N + params.eta_II * M) * rho / (1.0 + params.a_c_III * c)

def _logistic_power(z, q):
    # 0^(1+q) is 0 since 1+q > 0
    return np.power(np.maximum(z, 0.0), 1.0 + q)

def reaction_split(state: PointState, var: VariableParams, params: KineticParams) -> dict:
    """
    Split every reaction term into a non-negative production `P` and a
    non-negative loss rate `Q` with R = P - Q*z. Returns {'N': (P, Q), ...}.
    """
    state.check_domain()
    N, M, c, rho = (np.asarray(a, dtype=float) for a in (state.N, state.M, state.c, state.rho))
    F = N + M
    g = mmp_equilibrium(N, M, c, rho, params)
    crowding = 1.0 - params.kappa_F * F

    growth_N = params.r_F * (1.0 + params.r_F_max * c / (var.a_c_I + c)) * crowding * _logistic_power(N, params.q)
    growth_M = params.r_F * ((1.0 + params.r_F_max) * c / (var.a_c_I + c)) * crowding * _logistic_power(M, params.q)

    with np.errstate(divide='ignore', invalid='ignore'):
        # overcrowded logistic growth becomes a loss rate
        loss_N = np.where((growth_N < 0) & (N > 0), -growth_N / np.where(N > 0, N, 1.0), 0.0)
        loss_M = np.where((growth_M < 0) & (M > 0), -growth_M / np.where(M > 0, M, 1.0), 0.0)
    differentiation = var.k_F * c

    P_N = np.maximum(growth_N, 0.0)
    Q_N = loss_N + differentiation + params.delta_N
    P_M = np.maximum(growth_M, 0.0) + differentiation * N
    Q_M = loss_M + params.delta_M

    P_c = params.k_c * (N + params.eta_I * M) * c / (params.a_c_II + c)
    Q_c = params.delta_c * g

    P_rho = params.k_rho * (1.0 + params.k_rho_max * c / (params.a_c_IV + c)) * (N + params.eta_I * M)
    Q_rho = params.delta_rho * g

    shape = np.broadcast(N, M, c, rho).shape
    as_field = lambda a: np.broadcast_to(a, shape).astype(float)
    return {
        'N': (as_field(P_N), as_field(Q_N)),
        'M': (as_field(P_M), as_field(Q_M)),
        'c': (as_field(P_c), as_field(Q_c)),
        'rho': (as_field(P_rho), as_field(Q_rho)),
    }

def reaction_terms(state: PointState, var: VariableParams, params: KineticParams):
    split = reaction_split(state, var, params)
    values = {'N': state.N, 'M': state.M, 'c': state.c, 'rho': state.rho}
    return tuple(P - Q * np.asarray(values[name], dtype=float) for name, (P, Q) in split.items())

def fluxes(state: PointState, grad_N, grad_M, grad_c, var: VariableParams):
    N = np.asarray(state.N, dtype=float)[..., None]
    M = np.asarray(state.M, dtype=float)[..., None]
    F = N + M
    grad_N, grad_M, grad_c = (np.asarray(g, dtype=float) for g in (grad_N, grad_M, grad_c))
    J_N = -var.D_F * F * grad_N + var.chi_F * N * grad_c
    J_M = -var.D_F * F * grad_M + var.chi_F * M * grad_c
    J_c = -var.D_c * grad_c
    return J_N, J_M, J_c

def strain_matrix(eps) -> np.ndarray:
    """(e11, e12, e22) -> symmetric 2x2 tensor."""
    eps = np.asarray(eps, dtype=float)
    return np.stack([np.stack([eps[..., 0], eps[..., 1]], axis=-1),
                     np.stack([eps[..., 1], eps[..., 2]], axis=-1)], axis=-2)

def elastic_modulus(rho, params: KineticParams):
    """E*sqrt(rho)/(1+nu) and the volumetric factor nu/(1-2nu)."""
    if params.nu >= 0.5:
        raise ParameterException(argument=f"nu={params.nu}", message="singular material")
    return params.E * np.sqrt(rho) / (1.0 + params.nu), params.nu / (1.0 - 2.0 * params.nu)

def stress_tensor(grad_v, eps, rho, params: KineticParams) -> np.ndarray:
    grad_v = np.asarray(grad_v, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] == 3 and eps.shape[-2:] != (2, 2):
        eps = strain_matrix(eps)
    if np.any(np.asarray(rho) < 0):
        raise ParameterException(argument='rho', message="densities must be non-negative")
    identity = np.eye(2)
    sym = 0.5 * (grad_v + np.swapaxes(grad_v, -1, -2))
    tr_sym = np.trace(sym, axis1=-2, axis2=-1)[..., None, None]
    modulus, volumetric = elastic_modulus(np.asarray(rho, dtype=float), params)
    tr_eps = np.trace(eps, axis1=-2, axis2=-1)[..., None, None]
    viscous = params.mu_1 * sym + params.mu_2 * tr_sym * identity
    elastic = np.asarray(modulus)[..., None, None] * (eps + tr_eps * volumetric * identity)
    return viscous + elastic

def traction_magnitude(M, rho, params: KineticParams):
    return params.xi * M * rho / (params.R ** 2 + rho ** 2)

def myofibroblast_traction(M, rho, params: KineticParams) -> np.ndarray:
    if np.any(np.asarray(rho) < 0):
        raise ParameterException(argument='rho', message="densities must be non-negative")
    return np.asarray(traction_magnitude(M, rho, params))[..., None, None] * np.eye(2)

def growth_rate(N, M, c, params: KineticParams):
    """Scalar factor of the morphoelastic growth tensor, G = rate * eps."""
    return params.zeta * (N + params.eta_II * M) * c / (1.0 + params.a_c_III * c)

def growth_tensor(N, M, c, eps, params: KineticParams) -> np.ndarray:
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] == 3 and eps.shape[-2:] != (2, 2):
        eps = strain_matrix(eps)
    return np.asarray(growth_rate(N, M, c, params))[..., None, None] * eps

def sample_variable_params(rng: np.random.Generator) -> VariableParams:
    return VariableParams(*(float(rng.uniform(lo, hi)) for lo, hi in VARIABLE_RANGES.values()))

def equilibrium_residual(params: KineticParams, var: VariableParams) -> np.ndarray:
    state = PointState(N=params.N_bar, M=params.M_bar, c=params.c_bar, rho=params.rho_bar)
    return np.array([float(r) for r in reaction_terms(state, var, params)])

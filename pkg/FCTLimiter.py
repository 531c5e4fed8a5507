from enum import Enum

import numpy as np
from scipy import sparse

from WSExceptions import LimiterException
from CustomLogger import logger

NEGATIVE_ROUNDOFF = 1e-12

class LimiterMode(Enum):
    """
    fct  -- low-order positive solve plus Zalesak-limited antidiffusion
    clip -- plain Galerkin solve clamped at zero (debugging)
    """

    FCT = 'fct'
    Clip = 'clip'

def edge_coefficients(K: sparse.csr_matrix, edges: np.ndarray):
    """Transport coefficients k_ij, k_ji and the artificial diffusion d_ij of every edge i<j."""
    i, j = edges[:, 0], edges[:, 1]
    k_ij = np.asarray(K[i, j]).ravel()
    k_ji = np.asarray(K[j, i]).ravel()
    d = np.maximum(0.0, np.maximum(-k_ij, -k_ji))
    return k_ij, k_ji, d

def artificial_diffusion(d: np.ndarray, edges: np.ndarray, n: int) -> sparse.csr_matrix:
    i, j = edges[:, 0], edges[:, 1]
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    data = np.concatenate([d, d, -d, -d])
    return sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()

def _impose_fixed(A: sparse.csr_matrix, rhs: np.ndarray, fixed: np.ndarray, values: np.ndarray):
    keep = sparse.diags((~fixed).astype(float))
    A = (keep @ A + sparse.diags(fixed.astype(float))).tocsr()
    rhs = np.where(fixed, values, rhs)
    return A, rhs

def zalesak_factors(f: np.ndarray, edges: np.ndarray, z_low: np.ndarray, mass: np.ndarray, dt: float) -> np.ndarray:
    """
    Correction factors alpha_ij in [0, 1] for antidiffusive fluxes f_ij
    (f_ij enters node i and leaves node j) so the corrected solution stays
    within the local extrema of the low-order solution.
    """
    i, j = edges[:, 0], edges[:, 1]
    n = len(z_low)
    p_plus = np.zeros(n)
    p_minus = np.zeros(n)
    np.add.at(p_plus, i, np.maximum(f, 0.0))
    np.add.at(p_plus, j, np.maximum(-f, 0.0))
    np.add.at(p_minus, i, np.minimum(f, 0.0))
    np.add.at(p_minus, j, np.minimum(-f, 0.0))

    z_max = z_low.copy()
    z_min = z_low.copy()
    np.maximum.at(z_max, i, z_low[j])
    np.maximum.at(z_max, j, z_low[i])
    np.minimum.at(z_min, i, z_low[j])
    np.minimum.at(z_min, j, z_low[i])
    q_plus = mass / dt * (z_max - z_low)
    q_minus = mass / dt * (z_min - z_low)

    with np.errstate(divide='ignore', invalid='ignore'):
        r_plus = np.where(p_plus > 0.0, np.minimum(1.0, q_plus / p_plus), 1.0)
        r_minus = np.where(p_minus < 0.0, np.minimum(1.0, q_minus / p_minus), 1.0)
    return np.where(f > 0.0, np.minimum(r_plus[i], r_minus[j]), np.minimum(r_minus[i], r_plus[j]))

def _check_sign(z: np.ndarray, name: str, time: float) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(z)))) if len(z) else 1.0
    lowest = float(np.min(z)) if len(z) else 0.0
    if lowest < -NEGATIVE_ROUNDOFF * scale:
        raise LimiterException(argument=f"{name} min={lowest:.3e} at t={time:g}")
    return np.maximum(z, 0.0)

def transport_step(K: sparse.csr_matrix, edges: np.ndarray, mass: np.ndarray, z_old: np.ndarray,
                   production: np.ndarray, loss: np.ndarray, dt: float, fixed: np.ndarray,
                   fixed_values: np.ndarray, mode: LimiterMode, solve, name: str = 'z', time: float = 0.0) -> np.ndarray:
    """
    One semi-implicit step of  m dz/dt = K z + m (P - Q z)  with lumped mass m,
    transport K implicit, production P explicit and loss rate Q implicit.
    `solve(A, b, x0)` is the linear solver backend.
    """
    n = len(z_old)
    diagonal = sparse.diags(mass / dt + mass * loss)
    rhs = mass / dt * z_old + mass * production

    if mode == LimiterMode.Clip:
        A, b = _impose_fixed((diagonal - K).tocsr(), rhs, fixed, fixed_values)
        return _clip(solve(A, b, z_old), name, time)

    _, _, d = edge_coefficients(K, edges)
    L = K + artificial_diffusion(d, edges, n)
    A, b = _impose_fixed((diagonal - L).tocsr(), rhs, fixed, fixed_values)
    z_low = _check_sign(solve(A, b, z_old), name, time)

    f = d * (z_low[edges[:, 0]] - z_low[edges[:, 1]])
    alpha = zalesak_factors(f, edges, z_low, mass, dt)
    alpha[fixed[edges[:, 0]] | fixed[edges[:, 1]]] = 0.0
    correction = np.zeros(n)
    np.add.at(correction, edges[:, 0], alpha * f)
    np.add.at(correction, edges[:, 1], -alpha * f)
    z_new = z_low + dt / mass * correction
    z_new[fixed] = fixed_values[fixed]
    return _check_sign(z_new, name, time)

def _clip(z: np.ndarray, name: str, time: float) -> np.ndarray:
    if np.any(z < 0.0):
        logger.debug(f"clip mode clamped {int(np.sum(z < 0.0))} negative {name} values at t={time:g}")
    return np.maximum(z, 0.0)

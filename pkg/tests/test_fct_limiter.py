import numpy as np
import pytest
from scipy import sparse
from scipy.sparse.linalg import spsolve

from WoundGeometry import WoundGeometry, ShapeKind
from FEMMesh import generate_mesh
from FCTLimiter import LimiterMode, edge_coefficients, zalesak_factors, transport_step

def direct(A, b, x0):
    return spsolve(A.tocsc(), b)

@pytest.fixture(scope='module')
def setting():
    mesh = generate_mesh(WoundGeometry(ShapeKind.Ellipse, 1.0, 1.0), 0.2)
    areas, grads = mesh.shape_gradients()
    local = -1e-2 * np.einsum('eak,ebk->eab', grads, grads) * areas[:, None, None]
    tri = mesh.triangles
    rows = np.repeat(tri[:, :, None], 3, axis=2).ravel()
    cols = np.repeat(tri[:, None, :], 3, axis=1).ravel()
    K = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2).tocsr()
    # one-sided drift along every edge, negative off-diagonals the Galerkin solve cannot keep positive
    i, j = mesh.edges().T
    drift = sparse.coo_matrix((np.r_[np.full(len(i), -0.3), np.full(len(i), 0.3)], (np.r_[i, j], np.r_[j, j])),
                              shape=K.shape)
    K_drift = (K + drift).tocsr()
    inside = np.hypot(mesh.nodes[:, 0], mesh.nodes[:, 1]) < 1.0
    z0 = np.where(inside, 1.0, 0.0)
    return mesh, K, K_drift, z0

def test_artificial_diffusion_removes_negative_off_diagonals(setting):
    mesh, K, _, _ = setting
    k_ij, k_ji, d = edge_coefficients(K, mesh.edges())
    assert np.all(d >= 0.0)
    assert np.all(d + k_ij >= -1e-15) and np.all(d + k_ji >= -1e-15)

def test_zalesak_factors_are_bounded(setting):
    mesh, _, _, z0 = setting
    edges = mesh.edges()
    rng = np.random.default_rng(6)
    f = rng.normal(size=len(edges))
    alpha = zalesak_factors(f, edges, z0, mesh.lumped_mass(), 0.1)
    assert np.all((alpha >= 0.0) & (alpha <= 1.0))

@pytest.mark.parametrize('mode', list(LimiterMode))
def test_step_keeps_sharp_front_non_negative(setting, mode):
    mesh, _, K_drift, z0 = setting
    n = mesh.n_nodes
    fixed = np.zeros(n, dtype=bool)
    z = z0
    for k in range(5):
        z = transport_step(K_drift, mesh.edges(), mesh.lumped_mass(), z, np.zeros(n), np.zeros(n), 0.1, fixed,
                           np.zeros(n), mode, direct, time=0.1 * k)
        assert np.all(z >= 0.0)

def test_step_conserves_mass_without_sources(setting):
    mesh, K, _, z0 = setting
    n = mesh.n_nodes
    mass = mesh.lumped_mass()
    z = transport_step(K, mesh.edges(), mass, z0, np.zeros(n), np.zeros(n), 0.1, np.zeros(n, dtype=bool),
                       np.zeros(n), LimiterMode.FCT, direct)
    assert np.dot(mass, z) == pytest.approx(np.dot(mass, z0), rel=1e-10)
    assert z.max() <= 1.0 + 1e-12

def test_fixed_nodes_keep_their_values(setting):
    mesh, K, _, z0 = setting
    n = mesh.n_nodes
    fixed = mesh.nodes[:, 0] == mesh.extent[0]
    values = np.full(n, 0.25)
    z = transport_step(K, mesh.edges(), mesh.lumped_mass(), z0, np.zeros(n), np.zeros(n), 0.1, fixed, values,
                       LimiterMode.FCT, direct)
    assert np.all(z[fixed] == 0.25)

def test_production_and_loss(setting):
    mesh, K, _, _ = setting
    n = mesh.n_nodes
    z_old = np.full(n, 2.0)
    z = transport_step(K, mesh.edges(), mesh.lumped_mass(), z_old, np.full(n, 1.0), np.full(n, 0.5), 0.1,
                       np.zeros(n, dtype=bool), np.zeros(n), LimiterMode.FCT, direct)
    # uniform field: (2/dt + 1) / (1/dt + 0.5)
    assert np.allclose(z, 21.0 / 10.5, rtol=1e-10)

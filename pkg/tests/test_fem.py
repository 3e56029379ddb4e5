import cmath
import math

import numpy as np
import pytest

from roomimp import fem, mesh
from roomimp.errors import (
    InvalidArgumentError,
    InvalidImpedanceError,
    OutOfDomainError,
    SingularityError,
)

Z_REF = (400.0 - 700.0j, 500.0 + 800.0j)


def room2d(h=0.343):
    lay = mesh.PatchLayout(
        extents=(3.0, 3.5),
        patches=(mesh.Patch("R1", 0, "min"), mesh.Patch("R2", 1, "min")),
    )
    return mesh.build_box_mesh((3, 3.5), h, lay)


@pytest.fixture(scope="module")
def ops2d():
    return fem.assemble_operators(room2d())


class _StubMesh:
    """Bare vertex/element container, enough to drive the element assembly."""

    def __init__(self, vertices, elements):
        self.vertices = np.asarray(vertices, dtype=float)
        self.elements = np.asarray(elements, dtype=np.int64)
        self.n_vertices = len(self.vertices)


def test_reference_triangle_element_matrices():
    stub = _StubMesh([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)])
    K, M = fem._assemble_volume(stub)
    K_exact = 0.5 * np.array([[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
    M_exact = (np.ones((3, 3)) + np.eye(3)) / 24.0  # area 1/2, weight A/12
    np.testing.assert_allclose(K.toarray(), K_exact, atol=1e-14)
    np.testing.assert_allclose(M.toarray(), M_exact, atol=1e-14)


def test_reference_tet_element_matrices():
    stub = _StubMesh([(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)], [(0, 1, 2, 3)])
    K, M = fem._assemble_volume(stub)
    K_exact = np.array([
        [3.0, -1.0, -1.0, -1.0],
        [-1.0, 1.0, 0.0, 0.0],
        [-1.0, 0.0, 1.0, 0.0],
        [-1.0, 0.0, 0.0, 1.0],
    ]) / 6.0
    M_exact = (np.ones((4, 4)) + np.eye(4)) / 120.0  # volume 1/6, weight V/20
    np.testing.assert_allclose(K.toarray(), K_exact, atol=1e-14)
    np.testing.assert_allclose(M.toarray(), M_exact, atol=1e-14)


def test_operator_sums(ops2d):
    n = ops2d.mesh.n_vertices
    assert np.abs(ops2d.K.matvec(np.ones(n))).max() <= 1e-12
    assert ops2d.M.to_scipy().sum() == pytest.approx(10.5, abs=1e-10)
    assert ops2d.B["R1"].to_scipy().sum() == pytest.approx(3.5, abs=1e-10)
    assert ops2d.B["R2"].to_scipy().sum() == pytest.approx(3.0, abs=1e-10)


def test_operator_sums_3d():
    lay = mesh.PatchLayout(
        extents=(3.0, 3.5, 2.5),
        patches=(mesh.Patch("R1", 0, "min"), mesh.Patch("R2", 1, "min")),
    )
    m = mesh.build_box_mesh((3, 3.5, 2.5), 0.7, lay)
    ops = fem.assemble_operators(m)
    assert ops.M.to_scipy().sum() == pytest.approx(3 * 3.5 * 2.5, rel=1e-10)
    assert ops.B["R1"].to_scipy().sum() == pytest.approx(3.5 * 2.5, rel=1e-10)
    assert np.abs(ops.K.matvec(np.ones(m.n_vertices))).max() <= 1e-12


def test_physics_params_guard():
    with pytest.raises(InvalidArgumentError):
        fem.PhysicsParams(f=0.0)
    with pytest.raises(InvalidArgumentError):
        fem.PhysicsParams(c=-1.0)
    p = fem.PhysicsParams(c=343.0, f=50.0)
    assert p.k == pytest.approx(2 * math.pi * 50 / 343)


def test_impedance_sample_guards():
    with pytest.raises(InvalidImpedanceError):
        fem.ImpedanceSample((0.0,))
    with pytest.raises(InvalidImpedanceError):
        fem.ImpedanceSample((-3.0 + 1j,))
    fem.ImpedanceSample((math.inf, 400 - 700j))  # sound-hard is admissible


def test_system_matrix_sound_hard_limit(ops2d):
    phys = fem.PhysicsParams(f=50.0)
    A = fem.system_matrix(ops2d, fem.ImpedanceSample((math.inf, math.inf)), phys)
    expected = ops2d.K.to_scipy() - phys.k**2 * ops2d.M.to_scipy()
    diff = A.to_scipy() - expected
    assert diff.nnz == 0 or np.abs(diff.data).max() <= 1e-14


def test_system_matrix_linear_in_inverse_impedance(ops2d):
    phys = fem.PhysicsParams(f=50.0)
    z1, z1p = 400.0 - 700.0j, 350.0 + 120.0j
    A = fem.system_matrix(ops2d, (z1, Z_REF[1]), phys).to_scipy()
    Ap = fem.system_matrix(ops2d, (z1p, Z_REF[1]), phys).to_scipy()
    coef = 1j * phys.omega * phys.rho * (1 / z1 - 1 / z1p)
    diff = (A - Ap) - coef * ops2d.B["R1"].to_scipy()
    scale = np.abs(A.data).max()
    assert diff.nnz == 0 or np.abs(diff.data).max() <= 1e-14 * scale


def test_system_matrix_complex_symmetric(ops2d):
    phys = fem.PhysicsParams(f=50.0)
    rng = np.random.default_rng(21)
    samples = [Z_REF] + [
        (complex(np.exp(rng.normal(5.6, 0.6)), rng.normal(-600, 300)),
         complex(np.exp(rng.normal(6.2, 0.6)), rng.normal(800, 300)))
        for _ in range(10)
    ]
    for z in samples:
        A = fem.system_matrix(ops2d, z, phys)
        assert A.transpose_defect() <= 1e-14 * np.abs(A.values).max()


def test_system_matrix_zero_impedance(ops2d):
    with pytest.raises(InvalidImpedanceError):
        fem.system_matrix(ops2d, (0.0, 500 + 800j), fem.PhysicsParams(f=50.0))


def test_point_source_load(ops2d):
    m = ops2d.mesh
    v = 53  # interior vertex (grid point (4, 5))
    assert 0 < m.vertices[v][0] < 3 and 0 < m.vertices[v][1] < 3.5
    load = fem.point_source_load(m, m.vertices[v])
    assert load[v] == pytest.approx(1.0)
    assert np.abs(load).sum() == pytest.approx(1.0)

    cent = m.vertices[m.elements[10]].mean(axis=0)
    load = fem.point_source_load(m, cent)
    np.testing.assert_allclose(load[m.elements[10]], [1 / 3] * 3, atol=1e-12)

    rng = np.random.default_rng(2)
    for _ in range(50):
        s = rng.uniform([0.01, 0.01], [2.99, 3.49])
        load = fem.point_source_load(m, s)
        assert load.real.min() >= 0
        assert load.sum() == pytest.approx(1.0, abs=1e-12)

    with pytest.raises(OutOfDomainError):
        fem.point_source_load(m, (0.0, 1.0))  # on the boundary
    with pytest.raises(OutOfDomainError):
        fem.point_source_load(m, (-0.5, 1.0))


def test_constant_solution_sound_hard(ops2d):
    # -Lap p - k^2 p = 1 with Neumann walls has the constant solution -1/k^2
    phys = fem.PhysicsParams(f=50.0)
    zh = fem.ImpedanceSample((math.inf, math.inf))
    load = ops2d.M.matvec(np.ones(ops2d.mesh.n_vertices))
    p = fem.solve_forward(ops2d, zh, phys, load)
    assert np.abs(p + 1.0 / phys.k**2).max() <= 1e-9


def test_reciprocity(ops2d):
    phys = fem.PhysicsParams(f=50.0)
    s, x = (1.0, 1.0), (2.3, 2.9)
    ps = fem.solve_forward(ops2d, Z_REF, phys, fem.point_source_load(ops2d.mesh, s))
    px = fem.solve_forward(ops2d, Z_REF, phys, fem.point_source_load(ops2d.mesh, x))
    at_x = fem.observe(ps, ops2d.mesh, [x])[0]
    at_s = fem.observe(px, ops2d.mesh, [s])[0]
    assert abs(at_x - at_s) <= 1e-8 * abs(at_x)


def test_observe(ops2d):
    m = ops2d.mesh
    field = np.arange(m.n_vertices, dtype=complex)
    assert fem.observe(field, m, [m.vertices[13]])[0] == pytest.approx(13.0)

    const = np.full(m.n_vertices, 2.5 - 1.5j)
    np.testing.assert_allclose(fem.observe(const, m, [(1.1, 2.2), (0.4, 0.9)]),
                               [2.5 - 1.5j] * 2, atol=1e-12)

    cent = m.vertices[m.elements[40]].mean(axis=0)
    want = field[m.elements[40]].mean()
    assert fem.observe(field, m, [cent])[0] == pytest.approx(want, abs=1e-10)

    with pytest.raises(OutOfDomainError):
        fem.observe(field, m, [(5.0, 5.0)])


def test_forward_map_smooth_in_impedance(ops2d):
    # finite-difference Lipschitz check: relative perturbation 1e-6 in Z
    phys = fem.PhysicsParams(f=50.0)
    fm = fem.SampledForwardMap(ops2d, phys, (1.0, 1.0), [(2.0, 2.5), (0.8, 2.3)])
    g0 = fm.observe_one(np.asarray(Z_REF))
    g1 = fm.observe_one(np.asarray(Z_REF) * (1 + 1e-6))
    rel = np.abs(g1 - g0).max() / np.abs(g0).max()
    assert 0 < rel < 1e-4


def _y0_series(x, terms=40):
    """Ascending series for Y0 (Abramowitz-Stegun 9.1.13), independent oracle."""
    euler_gamma = 0.5772156649015328606
    q = x * x / 4.0
    j0 = sum((-q) ** k / math.factorial(k) ** 2 for k in range(terms))
    acc = 0.0
    harmonic = 0.0
    for k in range(1, terms):
        harmonic += 1.0 / k
        acc += (-1) ** (k + 1) * harmonic * q**k / math.factorial(k) ** 2
    return (2.0 / math.pi) * ((math.log(x / 2.0) + euler_gamma) * j0 + acc)


def test_fundamental_solution_2d_bessel_oracle():
    # frozen oracle value: Y0(1) = 0.08825696421567696 from the ascending series
    assert _y0_series(1.0) == pytest.approx(0.08825696421567696, abs=1e-13)
    phys = fem.PhysicsParams(c=343.0, f=343.0 / (2 * math.pi))  # k = 1
    assert phys.k == pytest.approx(1.0, rel=1e-12)
    got = fem.fundamental_solution(phys, (0.0, 0.0), (1.0, 0.0))
    assert got == pytest.approx(_y0_series(1.0) / (2 * math.pi), abs=1e-12)
    for r in (0.3, 0.7, 1.9):
        got = fem.fundamental_solution(phys, (0.0, 0.0), (r, 0.0))
        assert got == pytest.approx(_y0_series(r) / (2 * math.pi), abs=1e-10)


def test_fundamental_solution_3d():
    phys = fem.PhysicsParams(c=343.0, f=343.0 / (2 * math.pi))  # k = 1
    got = fem.fundamental_solution(phys, (0.0, 0.0, 0.0), (1.0, 0.0, 0.0))
    assert got == pytest.approx(cmath.exp(-1j) / (4 * math.pi), abs=1e-15)
    assert got.real == pytest.approx(0.042998, abs=1e-5)
    assert got.imag == pytest.approx(-0.066959, abs=1e-5)
    with pytest.raises(SingularityError):
        fem.fundamental_solution(phys, (1.0, 1.0, 1.0), (1.0, 1.0, 1.0))


def test_woodbury_matches_direct(ops2d):
    phys = fem.PhysicsParams(f=50.0)
    mics = [(2.0, 2.5), (0.8, 2.3), (2.4, 0.9)]
    fm = fem.SampledForwardMap(ops2d, phys, (1.0, 1.0), mics)
    rng = np.random.default_rng(4)
    n = 48
    zs = np.stack([
        np.exp(rng.normal(5.6, 0.5, n)) + 1j * rng.normal(-600, 200, n),
        np.exp(rng.normal(6.2, 0.4, n)) + 1j * rng.normal(800, 200, n),
    ], axis=1)
    gw = fm.observe_batch(zs, chunk=7)
    gd = fm.observe_batch(zs, method="direct")
    assert np.abs(gw - gd).max() <= 1e-8 * np.abs(gd).max()


def test_observe_batch_schedule_independent(ops2d):
    phys = fem.PhysicsParams(f=50.0)
    fm = fem.SampledForwardMap(ops2d, phys, (1.0, 1.0), [(2.0, 2.5)])
    rng = np.random.default_rng(5)
    zs = np.stack([
        np.exp(rng.normal(5.6, 0.5, 40)) + 1j * rng.normal(-600, 200, 40),
        np.exp(rng.normal(6.2, 0.4, 40)) + 1j * rng.normal(800, 200, 40),
    ], axis=1)
    a = fm.observe_batch(zs, chunk=8, threads=1)
    b = fm.observe_batch(zs, chunk=8, threads=4)
    np.testing.assert_array_equal(a, b)
    c = fm.observe_batch(zs, chunk=40)
    np.testing.assert_array_equal(a, c)

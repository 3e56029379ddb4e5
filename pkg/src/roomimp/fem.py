"""P1 finite elements for the interior Helmholtz problem with wall impedance.

Discretizes

    -Laplace(p) - k^2 p = f          in the room,
    dp/dn + (i omega rho / Z) p = 0  on impedance patches,
    dp/dn = 0                        on the remaining (sound-hard) walls,

with continuous piecewise-linear elements on the structured meshes from
:mod:`roomimp.mesh`.  All element integrals are exact closed forms (affine
elements, constant coefficients), so there is no quadrature error.  A unit
point source at ``s`` enters as the nodal load ``l(q) = conj(q)(s)``, i.e.
the barycentric weights of ``s`` in its containing element.
"""

import cmath
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import y0 as bessel_y0

from . import linalg, mesh as meshmod
from .errors import (
    InvalidArgumentError,
    InvalidImpedanceError,
    OutOfDomainError,
    SingularityError,
)


@dataclass(frozen=True)
class PhysicsParams:
    """Speed of sound, air density and driving frequency."""

    c: float = 343.0
    rho: float = 1.2
    f: float = 50.0

    def __post_init__(self):
        if not (self.c > 0 and self.rho > 0 and self.f > 0):
            raise InvalidArgumentError(
                f"need c, rho, f > 0, got c={self.c}, rho={self.rho}, f={self.f}"
            )

    @property
    def omega(self):
        return 2.0 * math.pi * self.f

    @property
    def k(self):
        return self.omega / self.c

    @property
    def wavelength(self):
        return self.c / self.f


@dataclass(frozen=True)
class ImpedanceSample:
    """One impedance draw: a complex value per Robin patch, Re(z) > 0.

    An infinite component (math.inf in the real or imaginary part) marks a
    sound-hard patch; the Robin coefficient then vanishes.
    """

    z: tuple

    def __post_init__(self):
        z = tuple(complex(v) for v in self.z)
        object.__setattr__(self, "z", z)
        for v in z:
            if v == 0:
                raise InvalidImpedanceError("impedance must be nonzero")
            if not (v.real > 0 or _is_sound_hard(v)):
                raise InvalidImpedanceError(f"impedance {v} must have positive real part")

    def __len__(self):
        return len(self.z)

    def array(self):
        return np.asarray(self.z, dtype=np.complex128)


def _is_sound_hard(z):
    return math.isinf(z.real) or math.isinf(z.imag)


def robin_coefficients(z_values, phys):
    """Coefficients i*omega*rho / z_i; 0 for sound-hard (infinite) entries."""
    out = []
    for z in z_values:
        z = complex(z)
        if z == 0:
            raise InvalidImpedanceError("impedance must be nonzero")
        out.append(0.0j if _is_sound_hard(z) else 1j * phys.omega * phys.rho / z)
    return np.asarray(out, dtype=np.complex128)


@dataclass(frozen=True)
class AssembledOperators:
    """Stiffness, mass and per-patch boundary mass matrices (real-valued)."""

    mesh: meshmod.SimplicialMesh
    K: linalg.SparseComplexMatrix
    M: linalg.SparseComplexMatrix
    B: dict  # patch tag -> SparseComplexMatrix

    @property
    def robin_tags(self):
        return self.mesh.layout.robin_tags


def _assemble_volume(mesh):
    coords = mesh.vertices[mesh.elements]
    ne, nloc, dim = coords.shape
    if dim == 2:
        x = coords[:, :, 0]
        y = coords[:, :, 1]
        b = np.roll(y, -1, axis=1) - np.roll(y, -2, axis=1)
        c = np.roll(x, -2, axis=1) - np.roll(x, -1, axis=1)
        det = np.einsum("ei,ei->e", x, b)  # = 2 * area, positive
        ke = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (2.0 * det)[:, None, None]
        vol = det / 2.0
    else:
        ones = np.ones((ne, nloc, 1))
        A = np.concatenate([ones, coords], axis=2)
        grads = np.linalg.inv(A)[:, 1:, :].transpose(0, 2, 1)  # (ne, 4, 3)
        vol = np.abs(np.linalg.det(coords[:, 1:, :] - coords[:, :1, :])) / 6.0
        ke = vol[:, None, None] * np.einsum("eid,ejd->eij", grads, grads)
    mass_scale = 12.0 if dim == 2 else 20.0
    me = (np.ones((nloc, nloc)) + np.eye(nloc))[None, :, :] * (vol / mass_scale)[:, None, None]
    rows = np.repeat(mesh.elements, nloc, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, nloc)).ravel()
    n = mesh.n_vertices
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n))
    M = sp.coo_matrix((me.ravel(), (rows, cols)), shape=(n, n))
    return K.tocsr(), M.tocsr()


def _assemble_boundary_mass(mesh, tag):
    facets = mesh.facets_with_tag(tag)
    if len(facets) == 0:
        raise InvalidArgumentError(f"patch {tag!r} has no boundary facets")
    coords = mesh.vertices[facets]
    nloc = facets.shape[1]
    if nloc == 2:
        measure = np.linalg.norm(coords[:, 1] - coords[:, 0], axis=1)
        local = (np.ones((2, 2)) + np.eye(2)) / 6.0
    else:
        cross = np.cross(coords[:, 1] - coords[:, 0], coords[:, 2] - coords[:, 0])
        measure = 0.5 * np.linalg.norm(cross, axis=1)
        local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    be = measure[:, None, None] * local[None, :, :]
    rows = np.repeat(facets, nloc, axis=1).ravel()
    cols = np.tile(facets, (1, nloc)).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((be.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_operators(mesh):
    """Assemble stiffness, mass, and one boundary mass matrix per Robin patch."""
    K, M = _assemble_volume(mesh)
    B = {tag: linalg.SparseComplexMatrix.from_scipy(_assemble_boundary_mass(mesh, tag))
         for tag in mesh.layout.robin_tags}
    return AssembledOperators(
        mesh=mesh,
        K=linalg.SparseComplexMatrix.from_scipy(K),
        M=linalg.SparseComplexMatrix.from_scipy(M),
        B=B,
    )


def system_matrix(ops, Z, phys):
    """A(Z) = K + sum_i (i omega rho / z_i) B_i - k^2 M, complex symmetric."""
    z = Z.array() if isinstance(Z, ImpedanceSample) else np.asarray(Z, dtype=complex)
    tags = ops.robin_tags
    if len(z) != len(tags):
        raise InvalidArgumentError(f"{len(z)} impedance values for {len(tags)} patches")
    coefs = robin_coefficients(z, phys)
    A = ops.K.to_scipy() - (phys.k**2) * ops.M.to_scipy()
    A = A.astype(np.complex128)
    for tag, c in zip(tags, coefs):
        if c != 0:
            A = A + c * ops.B[tag].to_scipy()
    return linalg.SparseComplexMatrix.from_scipy(A)


def point_source_load(mesh, s):
    """Nodal load for a unit point source strictly inside the room."""
    s = np.asarray(s, dtype=float)
    ext = np.asarray(mesh.extents)
    if np.any(s <= 0) or np.any(s >= ext):
        raise OutOfDomainError(f"source {tuple(s)} must lie strictly inside the room")
    e, lam = meshmod.locate_point(mesh, s)
    load = np.zeros(mesh.n_vertices, dtype=np.complex128)
    load[mesh.elements[e]] = lam
    return load


def solve_forward(ops, Z, phys, load):
    """Solve A(Z) p = load; returns the nodal pressure field."""
    A = system_matrix(ops, Z, phys)
    return linalg.solve(A, np.asarray(load, dtype=np.complex128))


def interpolation_weights(mesh, points):
    """P1 interpolation stencils: (vertex indices, weights) per point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    stencils = []
    for x in pts:
        e, lam = meshmod.locate_point(mesh, x)
        stencils.append((mesh.elements[e].copy(), lam))
    return stencils


def observe(field, mesh, points):
    """Evaluate a nodal field at microphone positions by P1 interpolation."""
    field = np.asarray(field)
    if field.shape[0] != mesh.n_vertices:
        raise InvalidArgumentError("field length does not match vertex count")
    stencils = interpolation_weights(mesh, points)
    return np.asarray([field[idx] @ w for idx, w in stencils], dtype=np.complex128)


def fundamental_solution(phys, s, x):
    """Free-field kernel of the Helmholtz operator (test oracle).

    2D: (1/2pi) Y0(k r); 3D: exp(-i k r) / (4 pi r), with r = |s - x|.
    """
    s = np.asarray(s, dtype=float)
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(s - x))
    if r == 0.0:
        raise SingularityError("fundamental solution evaluated at its source point")
    if s.shape[0] == 2:
        return complex(bessel_y0(phys.k * r) / (2.0 * math.pi))
    return cmath.exp(-1j * phys.k * r) / (4.0 * math.pi * r)


class SampledForwardMap:
    """Observations G_h(Z) at fixed microphones for many impedance samples.

    The direct route factors A(Z) per sample.  The fast route factors a single
    damped base system A(z_base) once and applies the boundary-block low-rank
    update (Woodbury) per sample, which only costs a dense solve of dimension
    equal to the number of patch boundary nodes.  Both routes satisfy the same
    residual contract; equivalence is enforced by the test suite.
    """

    def __init__(self, ops, phys, source, mic_points, z_base=None, method="woodbury"):
        if method not in ("woodbury", "direct"):
            raise InvalidArgumentError(f"unknown method {method!r}")
        self.ops = ops
        self.phys = phys
        self.mesh = ops.mesh
        self.method = method
        self.load = point_source_load(self.mesh, source)
        self.stencils = interpolation_weights(self.mesh, mic_points)
        self.m = len(self.stencils)
        tags = ops.robin_tags
        if z_base is None:
            z_base = [phys.rho * phys.c] * len(tags)
        self.z_base = np.asarray(z_base, dtype=np.complex128)
        if np.any(self.z_base.real <= 0):
            raise InvalidImpedanceError("base impedance must have positive real part")
        self._base = None

    # -- direct route ------------------------------------------------------

    def observe_one(self, z):
        field = solve_forward(self.ops, np.asarray(z, dtype=complex), self.phys, self.load)
        return np.asarray([field[idx] @ w for idx, w in self.stencils], dtype=np.complex128)

    # -- low-rank boundary update route -------------------------------------

    def _prepare_base(self):
        if self._base is not None:
            return self._base
        ops, phys = self.ops, self.phys
        tags = ops.robin_tags
        base_coefs = robin_coefficients(self.z_base, phys)
        A_base = system_matrix(ops, self.z_base, phys)
        lu = linalg.Factorization(A_base)

        patch_nodes = []
        for tag in tags:
            nodes = np.unique(ops.mesh.facets_with_tag(tag).ravel())
            patch_nodes.append(nodes)
        all_nodes = np.concatenate(patch_nodes)
        p = len(all_nodes)
        slices = []
        start = 0
        for nodes in patch_nodes:
            slices.append(slice(start, start + len(nodes)))
            start += len(nodes)

        # block-diagonal patch mass matrix in dense form, (p, p)
        Bblk = np.zeros((p, p))
        for tag, nodes, sl in zip(tags, patch_nodes, slices):
            Bfull = self.ops.B[tag].to_scipy().real
            Bblk[sl, sl] = Bfull[np.ix_(nodes, nodes)].toarray()

        U = np.zeros((self.mesh.n_vertices, p))
        U[all_nodes, np.arange(p)] = 1.0
        x0 = lu.solve(self.load)
        W = lu.solve(U.astype(np.complex128))
        H = W[all_nodes, :]                   # U^T W
        g0 = x0[all_nodes]                    # U^T x0
        BH = Bblk @ H
        Bg = Bblk @ g0
        E = np.zeros((self.m, self.mesh.n_vertices))
        for j, (idx, w) in enumerate(self.stencils):
            E[j, idx] = w
        y0 = E @ x0
        YW = E @ W

        self._base = {
            "coefs": base_coefs,
            "slices": slices,
            "p": p,
            "BH": BH,
            "Bg": Bg,
            "y0": y0,
            "YW": YW,
        }
        return self._base

    def _observe_chunk_woodbury(self, z_chunk):
        base = self._prepare_base()
        phys = self.phys
        S = z_chunk.shape[0]
        p = base["p"]
        w = np.empty((S, p), dtype=np.complex128)
        for i, sl in enumerate(base["slices"]):
            coefs = robin_coefficients(z_chunk[:, i], phys) - base["coefs"][i]
            w[:, sl] = coefs[:, None]
        Msys = np.eye(p, dtype=np.complex128)[None, :, :] + w[:, :, None] * base["BH"][None, :, :]
        rhs = w * base["Bg"][None, :]
        try:
            v = np.linalg.solve(Msys, rhs[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            # a sample made the update matrix singular; fall back per sample
            return np.stack([self.observe_one(z) for z in z_chunk])
        return base["y0"][None, :] - v @ base["YW"].T

    def observe_batch(self, z_values, chunk=256, threads=1, method=None):
        """Observations for samples z_values, shape (N, n_patches) -> (N, m).

        Results are independent of chunk size and thread count; chunks are
        reassembled in order.
        """
        z_values = np.asarray(z_values, dtype=np.complex128)
        if z_values.ndim != 2 or z_values.shape[1] != len(self.ops.robin_tags):
            raise InvalidArgumentError("z_values must have shape (N, n_patches)")
        method = method or self.method
        chunks = [z_values[i:i + chunk] for i in range(0, len(z_values), chunk)]

        if method == "woodbury":
            self._prepare_base()
            work = self._observe_chunk_woodbury
        else:
            def work(zc):
                return np.stack([self.observe_one(z) for z in zc])

        if threads > 1 and len(chunks) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(work, chunks))
        else:
            parts = [work(c) for c in chunks]
        return np.concatenate(parts, axis=0) if parts else np.empty((0, self.m), dtype=np.complex128)

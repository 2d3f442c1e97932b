"""Cell problems on the water and air phases and the resulting effective coefficients.

For a phase P of the unit cell and a constant diffusion tensor D the corrector
chi_i solves, in weak form over periodic P1 functions on P,

    int_P (grad v) . D (grad chi_i + e_i) dy = 0     for all v,

which encodes zero conormal flux on the internal interfaces and periodicity on
the faces of Y. The effective tensor is

    d_ij = 1/|Y| int_P (D_ij + sum_k D_ik d chi_j / d y_k) dy.

Species 1, 2 and 4 live in water, species 3 in air.
"""

from __future__ import annotations

import enum
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .errors import MissingCorrector, NegativeRate, NoConvergence, SingularSystem
from .unit_cell import CellMesh, InterfaceQuadrature, Phase

logger = logging.getLogger(__name__)

DEFAULT_RTOL = 1e-10


def species_phase(species: int) -> Phase:
    """Water carries species 1, 2 and 4; air carries species 3."""
    if species not in (1, 2, 3, 4):
        raise ValueError(f"species must be 1..4, got {species}")
    return Phase.AIR if species == 3 else Phase.WATER


class Representation(str, enum.Enum):
    CONSTANT_TENSOR = "constant_tensor"
    TIME_SEPARABLE = "time_separable"
    PER_PHASE_CONSTANT = "per_phase_constant"


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """Diffusion tensor of one species.

    ``TIME_SEPARABLE`` means d(t, y) = f(t) * tensor, with f sampled at
    ``time_samples``; correctors only depend on ``tensor``.
    ``PER_PHASE_CONSTANT`` takes the tensor of the phase being solved from
    ``phase_tensors`` (keys are :class:`Phase`).
    """

    species: int
    tensor: np.ndarray
    representation: Representation = Representation.CONSTANT_TENSOR
    phase_tensors: dict | None = None
    time_samples: tuple[float, ...] = ()
    time_factors: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tensor", np.atleast_2d(np.asarray(self.tensor, dtype=float)))
        object.__setattr__(self, "representation", Representation(self.representation))
        if self.representation is Representation.TIME_SEPARABLE:
            if len(self.time_samples) != len(self.time_factors) or not self.time_samples:
                raise ValueError("time_samples and time_factors must be non-empty and equally long")
            if np.any(np.diff(self.time_samples) <= 0):
                raise ValueError("time_samples must be strictly increasing")

    @classmethod
    def isotropic(cls, species: int, d: float, dim: int = 2) -> "DiffusionSpec":
        return cls(species, d * np.eye(dim))

    def tensor_on(self, phase: Phase) -> np.ndarray:
        if self.representation is Representation.PER_PHASE_CONSTANT and self.phase_tensors:
            return np.atleast_2d(np.asarray(self.phase_tensors[Phase(phase)], dtype=float))
        return self.tensor

    def time_factor(self, t: float) -> float:
        if self.representation is not Representation.TIME_SEPARABLE:
            return 1.0
        return float(np.interp(t, self.time_samples, self.time_factors))

    def ellipticity(self, phase: Phase = Phase.WATER) -> float:
        """Smallest eigenvalue of the symmetric part (the constant of uniform ellipticity)."""
        D = self.tensor_on(phase)
        return float(np.linalg.eigvalsh(0.5 * (D + D.T)).min())


@dataclass(frozen=True, eq=False)
class CorrectorField:
    phase: Phase
    direction: int
    nodal_values: np.ndarray  # NaN at nodes outside the phase
    mean: float
    residual: float
    iterations: int
    tensor: np.ndarray


@dataclass(frozen=True, eq=False)
class _PhaseSystem:
    elements: np.ndarray  # triangle indices of the phase
    areas: np.ndarray
    grads: np.ndarray  # (n_el, 3, dim) gradients of the barycentric basis
    dofs: np.ndarray  # (n_el, 3) dof index per local vertex
    dof_nodes: np.ndarray  # representative node per dof
    node_dof: np.ndarray  # dof of every mesh node, -1 outside the phase


def _p1_gradients(mesh: CellMesh, elements: np.ndarray) -> np.ndarray:
    p = mesh.nodes[mesh.simplices[elements]]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns are edge vectors
    Jinv = np.linalg.inv(J)
    r = Jinv  # rows of J^{-1} are grad(lambda_1), grad(lambda_2)
    return np.stack([-(r[:, 0] + r[:, 1]), r[:, 0], r[:, 1]], axis=1)


def _phase_system(mesh: CellMesh, phase: Phase) -> _PhaseSystem:
    key = ("phase_system", int(phase))
    if key in mesh._cache:
        return mesh._cache[key]
    elements = np.flatnonzero(mesh.phase_label == phase)
    if len(elements) == 0:
        raise SingularSystem(f"phase {Phase(phase).name} is empty on this mesh")
    rep = mesh.representative[mesh.simplices[elements]]
    dof_nodes, local = np.unique(rep, return_inverse=True)
    node_dof = np.full(len(mesh.nodes), -1)
    node_dof[dof_nodes] = np.arange(len(dof_nodes))
    node_dof = node_dof[mesh.representative]
    sys_ = _PhaseSystem(elements=elements, areas=mesh.volumes[elements],
                        grads=_p1_gradients(mesh, elements),
                        dofs=local.reshape(-1, 3), dof_nodes=dof_nodes, node_dof=node_dof)
    mesh._cache[key] = sys_
    return sys_


def _stiffness(system: _PhaseSystem, D: np.ndarray) -> sp.csr_matrix:
    G = system.grads
    local = system.areas[:, None, None] * np.einsum("eak,kl,ebl->eab", G, D, G)
    rows = np.repeat(system.dofs, 3, axis=1).ravel()
    cols = np.tile(system.dofs, (1, 3)).ravel()
    n = len(system.dof_nodes)
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def pcg(K, b, rtol=DEFAULT_RTOL, maxiter=None, x0=None):
    """Jacobi-preconditioned CG; returns (x, relative residual, iterations).

    The relative residual ||b - K x|| / ||b|| is recomputed from scratch on
    exit; NoConvergence is raised when it exceeds ``rtol``.
    """
    n = K.shape[0]
    if maxiter is None:
        maxiter = math.ceil(50.0 * math.sqrt(n))
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), 0.0, 0
    diag = K.diagonal()
    M = sp.diags(1.0 / diag)
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    x = np.zeros(n) if x0 is None else np.asarray(x0, float)
    # one restart covers drift between the recursive and the true residual
    for _ in range(2):
        x, _info = cg(K, b, x0=x, rtol=rtol * 0.5, atol=0.0, maxiter=maxiter - iterations,
                      M=M, callback=count)
        rel = float(np.linalg.norm(b - K @ x)) / bnorm
        if rel <= rtol or iterations >= maxiter:
            break
    if rel > rtol:
        raise NoConvergence(f"CG stopped at relative residual {rel:.3e} after {iterations} iterations")
    return x, rel, iterations


def solve_cell_problem(mesh: CellMesh, D: DiffusionSpec | np.ndarray, phase: Phase, i: int,
                       rtol: float = DEFAULT_RTOL) -> CorrectorField:
    """Periodic, zero-mean corrector for the unit macroscopic gradient e_i on ``phase``."""
    phase = Phase(phase)
    tensor = D.tensor_on(phase) if isinstance(D, DiffusionSpec) else np.atleast_2d(np.asarray(D, float))
    dim = mesh.dim
    if tensor.shape != (dim, dim):
        raise ValueError(f"tensor shape {tensor.shape} does not match dim={dim}")
    if not np.allclose(tensor, tensor.T, rtol=0.0, atol=1e-12 * np.abs(tensor).max()):
        raise ValueError("cell problems need a symmetric diffusion tensor")
    if np.linalg.eigvalsh(tensor).min() <= 0.0:
        raise SingularSystem("diffusion tensor is not positive definite")
    system = _phase_system(mesh, phase)
    K = _stiffness(system, tensor)
    flux = system.areas[:, None] * np.einsum("eak,k->ea", system.grads, tensor[:, i])
    b = -np.bincount(system.dofs.ravel(), weights=flux.ravel(), minlength=K.shape[0])
    b -= b.mean()  # constants span the kernel
    x, rel, its = pcg(K, b, rtol=rtol)

    cell_mean = system.areas @ x[system.dofs].mean(axis=1) / system.areas.sum()
    x -= cell_mean
    values = np.full(len(mesh.nodes), np.nan)
    inside = system.node_dof >= 0
    values[inside] = x[system.node_dof[inside]]
    mean = float(system.areas @ x[system.dofs].mean(axis=1) / system.areas.sum())
    logger.debug("cell problem %s e_%d: %d dofs, %d its, residual %.2e",
                 phase.name, i, len(x), its, rel)
    return CorrectorField(phase=phase, direction=i, nodal_values=values, mean=mean,
                          residual=rel, iterations=its, tensor=tensor.copy())


def corrector_gradients(mesh: CellMesh, corr: CorrectorField) -> np.ndarray:
    """Piecewise-constant gradient of a corrector on the phase elements (n_el, dim)."""
    system = _phase_system(mesh, corr.phase)
    vals = corr.nodal_values[mesh.simplices[system.elements]]
    return np.einsum("eak,ea->ek", system.grads, vals)


@dataclass(frozen=True, eq=False)
class EffectiveTensor:
    species: int
    matrix: np.ndarray
    phase_fraction: float
    h: float = float("nan")
    rtol: float = DEFAULT_RTOL
    time_samples: tuple[float, ...] = ()
    time_factors: tuple[float, ...] = ()

    def at(self, t: float) -> np.ndarray:
        if not self.time_samples:
            return self.matrix
        return self.matrix * float(np.interp(t, self.time_samples, self.time_factors))

    @property
    def time_dependent(self) -> bool:
        return bool(self.time_samples)


def effective_diffusion(mesh: CellMesh, D: DiffusionSpec | np.ndarray, correctors, phase: Phase,
                        species: int | None = None) -> EffectiveTensor:
    phase = Phase(phase)
    tensor = D.tensor_on(phase) if isinstance(D, DiffusionSpec) else np.atleast_2d(np.asarray(D, float))
    if species is None:
        species = D.species if isinstance(D, DiffusionSpec) else (3 if phase is Phase.AIR else 1)
    dim = mesh.dim
    by_dir = {}
    for c in correctors:
        if c.phase is not phase or not np.array_equal(c.tensor, tensor):
            raise MissingCorrector("corrector belongs to a different phase or tensor")
        by_dir[c.direction] = c
    missing = [j for j in range(dim) if j not in by_dir]
    if missing:
        raise MissingCorrector(f"no corrector for directions {missing}")
    system = _phase_system(mesh, phase)
    total = float(mesh.volumes.sum())
    grad = np.stack([corrector_gradients(mesh, by_dir[j]) for j in range(dim)], axis=2)  # (e, k, j)
    integrand = tensor[None, :, :] + np.einsum("ik,ekj->eij", tensor, grad)
    matrix = np.einsum("e,eij->ij", system.areas, integrand) / total
    times, factors = (), ()
    if isinstance(D, DiffusionSpec) and D.representation is Representation.TIME_SEPARABLE:
        times, factors = D.time_samples, D.time_factors
    rtol = max(c.residual for c in correctors) if correctors else DEFAULT_RTOL
    return EffectiveTensor(species=species, matrix=matrix,
                           phase_fraction=float(system.areas.sum()) / total,
                           h=mesh.h, rtol=rtol, time_samples=times, time_factors=factors)


def homogenize_tensors(mesh: CellMesh, specs: dict[int, DiffusionSpec], workers: int | None = None,
                       rtol: float = DEFAULT_RTOL) -> dict[int, EffectiveTensor]:
    """Effective tensors for every species; shared (phase, tensor) problems are solved once."""
    if workers is None:
        workers = int(os.environ.get("TWOSCALE_THREADS", "1") or 1)
    jobs = {}
    for s, spec in specs.items():
        phase = species_phase(s)
        key = (int(phase), spec.tensor_on(phase).tobytes())
        jobs.setdefault(key, (phase, spec.tensor_on(phase)))
    tasks = [(key, phase, tensor, i) for key, (phase, tensor) in jobs.items() for i in range(mesh.dim)]
    for phase in {phase for phase, _ in jobs.values()}:
        _phase_system(mesh, phase)  # warm the cache before threads share it

    def work(task):
        key, phase, tensor, i = task
        return key, solve_cell_problem(mesh, tensor, phase, i, rtol=rtol)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(work, tasks))
    correctors = {}
    for key, corr in results:
        correctors.setdefault(key, []).append(corr)
    out = {}
    for s, spec in specs.items():
        phase = species_phase(s)
        key = (int(phase), spec.tensor_on(phase).tobytes())
        out[s] = effective_diffusion(mesh, spec, correctors[key], phase, species=s)
    return out


@dataclass(frozen=True)
class EffectiveRates:
    """Averaged rates; each entry is a scalar or an array over ``time_samples``."""

    k1: float | np.ndarray
    k2: float | np.ndarray
    a: float | np.ndarray
    b: float | np.ndarray
    time_samples: tuple[float, ...] = ()

    def at(self, t: float) -> dict[str, float]:
        out = {}
        for name in ("k1", "k2", "a", "b"):
            v = getattr(self, name)
            out[name] = float(np.interp(t, self.time_samples, v)) if self.time_samples else float(v)
        return out

    def as_dict(self) -> dict[str, float]:
        return self.at(0.0)


def _sample(field_, points, t):
    if callable(field_):
        vals = field_(points) if t is None else field_(points, t)
        return np.broadcast_to(np.asarray(vals, dtype=float), (len(points),))
    return np.full(len(points), float(field_))


def effective_rates(mesh: CellMesh, k1, k2, a, b, quad: InterfaceQuadrature,
                    support: Phase | None = None, time_samples=None) -> EffectiveRates:
    """Cell averages of k1, k2 (over Y, optionally restricted to ``support``) and
    interface integrals of a, b over the water-air interface, all divided by |Y|.

    Fields are constants or callables of the cell coordinates (and time when
    ``time_samples`` is given). Volume integrals use the centroid rule, which
    is exact for piecewise-affine fields.
    """
    centroids = mesh.nodes[mesh.simplices].mean(axis=1)
    vol = mesh.volumes.copy()
    total = float(vol.sum())
    if support is not None:
        vol = np.where(mesh.phase_label == Phase(support), vol, 0.0)
    times = list(time_samples) if time_samples else [None]
    out = {k: [] for k in ("k1", "k2", "a", "b")}
    for t in times:
        for name, f in (("k1", k1), ("k2", k2)):
            s = _sample(f, centroids, t)
            if np.any(s < 0):
                raise NegativeRate(f"{name} takes negative values")
            out[name].append(float(vol @ s) / total)
        for name, f in (("a", a), ("b", b)):
            s = _sample(f, quad.points, t)
            if np.any(s < 0):
                raise NegativeRate(f"{name} takes negative values on the water-air interface")
            out[name].append(float(quad.weights @ s) / total)
    if time_samples:
        return EffectiveRates(**{k: np.asarray(v) for k, v in out.items()},
                              time_samples=tuple(float(t) for t in time_samples))
    return EffectiveRates(**{k: v[0] for k, v in out.items()})


@dataclass
class ValidationReport:
    symmetry_defect: float
    eigenvalues: np.ndarray
    voigt_slack: float
    flags: set = field(default_factory=set)

    @property
    def ok(self) -> bool:
        return not self.flags


def validate_effective(t: EffectiveTensor | np.ndarray, D, phase_fraction: float | None = None,
                       degenerate_tol: float = 1e-6, voigt_tol: float = 1e-8) -> ValidationReport:
    """Symmetry defect, eigenvalue range and Voigt-bound slack of an effective tensor."""
    matrix = t.matrix if isinstance(t, EffectiveTensor) else np.atleast_2d(np.asarray(t, float))
    if phase_fraction is None:
        phase_fraction = t.phase_fraction
    Dm = D.tensor if isinstance(D, DiffusionSpec) else np.atleast_2d(np.asarray(D, float))
    scale = max(np.abs(matrix).max(), phase_fraction * np.abs(Dm).max(), 1e-300)
    defect = float(np.abs(matrix - matrix.T).max())
    sym = 0.5 * (matrix + matrix.T)
    eig = np.linalg.eigvalsh(sym)
    slack = float(np.linalg.eigvalsh(phase_fraction * 0.5 * (Dm + Dm.T) - sym).min())
    flags = set()
    if defect > 1e-10 * scale:
        flags.add("SymmetryDefect")
    if eig.min() < degenerate_tol:
        flags.add("Degenerate")
    if slack < -voigt_tol:
        flags.add("VoigtViolation")
    return ValidationReport(symmetry_defect=defect, eigenvalues=eig, voigt_slack=slack, flags=flags)

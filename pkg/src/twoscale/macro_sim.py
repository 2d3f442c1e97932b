"""Upscaled reaction-diffusion system for u1..u4 coupled to the surface-resolved gypsum field.

Strong form solved on a box Omega (|Y| = 1 for the unit cell)::

    c1 du1/dt - div(d1 grad u1) = -k1 u1 + k2 u2 - int_Gsw k3 R(u1) Q(u5) dsigma
    c2 du2/dt - div(d2 grad u2) =  k1 u1 - k2 u2 + a u3 - b u2
    c3 du3/dt - div(d3 grad u3) = -a u3 + b u2
    c4 du4/dt - div(d4 grad u4) =  k1 u1
    du5/dt (x, y) = k3(y) R(u1(x)) Q(u5(x, y))        y on the solid-water interface

with zero flux on the boundary except u3 = u3^D on the Dirichlet faces. The
capacities c_i are 1 by default; setting them to the phase fractions gives the
volume-consistent scaling that matches the resolved micro model.

One step (first-order IMEX):

1. u5 is advanced per (cell, quadrature point) by backward Euler with u1 frozen;
2. the gypsum sink for u1 is the quadrature of the realised u5 increment, so
   the sulfur budget closes to round-off;
3. the remaining couplings are explicit in the start-of-step values;
4. diffusion is implicit (two-point fluxes, off-diagonal tensor entries as an
   explicit flux correction).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from .corrector import EffectiveRates, EffectiveTensor, pcg
from .errors import NegativeInitialData, SolverDiverged, StepRejected
from .kinetics import BoundsA4, RateLaw, eval_Q, eval_R, gypsum_step
from .unit_cell import InterfaceQuadrature

logger = logging.getLogger(__name__)

SPECIES = (1, 2, 3, 4)
POSITIVITY_TOL = 1e-12
DEGENERATE_TOL = 1e-6
MAX_HALVINGS = 10


def clean_tensor(D: np.ndarray) -> np.ndarray:
    """Symmetrize and drop cell-solver noise.

    Entries below 1e-9 of the largest one are set to zero, and a tensor whose
    largest entry is below DEGENERATE_TOL is treated as exactly zero (a
    disconnected phase). This keeps the two-point operator an M-matrix.
    """
    D = 0.5 * (D + D.T)
    scale = float(np.abs(D).max(initial=0.0))
    if scale < DEGENERATE_TOL:
        return np.zeros_like(D)
    return np.where(np.abs(D) < 1e-9 * scale, 0.0, D)


def _face_names(dim):
    return [f"{'xyz'[k]}{s}" for k in range(dim) for s in "-+"]


@dataclass(frozen=True)
class MacroGrid:
    """Uniform cell-centred grid on the box [lo, hi]^dim.

    ``dirichlet_faces`` lists the faces of the u3 Dirichlet boundary, named
    ``x-``, ``x+``, ``y-``, ... ; every other face (and every face for u1, u2,
    u4) carries zero normal flux.
    """

    lo: float = 0.0
    hi: float = 1.0
    n_cells: tuple[int, ...] = (20, 20)
    dirichlet_faces: frozenset = frozenset({"x-"})

    def __post_init__(self):
        object.__setattr__(self, "n_cells", tuple(int(n) for n in self.n_cells))
        object.__setattr__(self, "dirichlet_faces", frozenset(self.dirichlet_faces))
        if not self.hi > self.lo or min(self.n_cells) < 1:
            raise ValueError("grid needs hi > lo and at least one cell per axis")
        unknown = set(self.dirichlet_faces) - set(_face_names(self.dim))
        if unknown:
            raise ValueError(f"unknown boundary faces {sorted(unknown)}")

    @property
    def dim(self) -> int:
        return len(self.n_cells)

    @property
    def size(self) -> int:
        return int(np.prod(self.n_cells))

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / np.asarray(self.n_cells, dtype=float)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def centers(self) -> np.ndarray:
        axes = [self.lo + (np.arange(n) + 0.5) * h for n, h in zip(self.n_cells, self.spacing)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def integrate(self, values) -> float:
        return float(np.sum(values) * self.cell_volume)


@dataclass(frozen=True, eq=False)
class EffectiveModel:
    """Homogenized coefficients driving the macro system.

    ``tensors`` maps species to :class:`EffectiveTensor` (or a plain matrix);
    ``sw_quad`` is the solid-water interface quadrature on which u5 lives;
    ``u3_dirichlet`` is a pair (times, values) interpolated linearly in time,
    or a dict of such pairs keyed by face name.
    """

    tensors: dict
    rates: EffectiveRates
    sw_quad: InterfaceQuadrature
    rate_law: RateLaw
    u3_dirichlet: object = ((0.0,), (0.0,))
    capacities: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    cell_volume: float = 1.0

    def tensor(self, species: int, t: float = 0.0) -> np.ndarray:
        d = self.tensors[species]
        D = d.at(t) if isinstance(d, EffectiveTensor) else np.atleast_2d(np.asarray(d, float))
        return clean_tensor(D)

    def time_dependent(self, species: int) -> bool:
        d = self.tensors[species]
        return isinstance(d, EffectiveTensor) and d.time_dependent

    def k3(self) -> np.ndarray:
        k3 = np.asarray(self.rate_law.k3, dtype=float)
        return np.broadcast_to(k3, (len(self.sw_quad),))

    def dirichlet_value(self, face: str, t: float) -> float:
        data = self.u3_dirichlet
        if isinstance(data, dict):
            data = data[face]
        if np.ndim(data) == 0:
            return float(data)
        times, values = data
        return float(np.interp(t, times, values))

    def stability_dt(self) -> float:
        """Largest dt for which the explicit couplings keep every field nonnegative
        (and, under the (A4) equalities, below its ceiling)."""
        r = self.rates.at(0.0)
        if self.rates.time_samples:
            arr = {k: np.max(getattr(self.rates, k)) for k in ("k1", "k2", "a", "b")}
            r = {k: float(v) for k, v in arr.items()}
        sink = float(self.sw_quad.weights @ self.k3()) / self.cell_volume
        sink *= self.rate_law.lipschitz_R * self.rate_law.q_sup
        rates = (r["k1"] + sink, r["k2"] + r["b"], r["a"], 0.0)
        bound = [c / x for c, x in zip(self.capacities, rates) if x > 0]
        return min(bound) if bound else np.inf


@dataclass(frozen=True, eq=False)
class MacroState:
    t: float
    u: np.ndarray  # (4, n_cells): u1..u4 cell averages
    u5: np.ndarray  # (n_cells, n_q)

    @property
    def u1(self):
        return self.u[0]

    @property
    def u2(self):
        return self.u[1]

    @property
    def u3(self):
        return self.u[2]

    @property
    def u4(self):
        return self.u[3]

    def field(self, species: int) -> np.ndarray:
        return self.u5 if species == 5 else self.u[species - 1]


def init_state(grid: MacroGrid, initial: dict, n_quad: int, t0: float = 0.0) -> MacroState:
    """Initial state from constants or callables of the cell midpoints.

    ``initial`` has keys ``u10`` .. ``u50``; ``u50`` may also return one
    value per quadrature point (shape (n_cells, n_quad)).
    """
    x = grid.centers()
    fields = []
    for name in ("u10", "u20", "u30", "u40", "u50"):
        v = initial.get(name, 0.0)
        vals = np.asarray(v(x) if callable(v) else v, dtype=float)
        if np.any(~np.isfinite(vals)) or np.any(vals < 0):
            raise NegativeInitialData(f"{name} must be finite and nonnegative")
        fields.append(vals)
    u = np.stack([np.broadcast_to(f, (grid.size,)).astype(float) for f in fields[:4]])
    u50 = fields[4]
    if u50.ndim == 1 and u50.size == grid.size:
        u50 = u50[:, None]
    u5 = np.array(np.broadcast_to(u50, (grid.size, n_quad)), dtype=float)
    return MacroState(t=t0, u=u, u5=u5)


def gypsum_sink(u1_cell, u5_row, model: EffectiveModel):
    """(1/|Y|) sum_q w_q k3_q R(u1) Q(u5_q); works row-wise on arrays of cells."""
    u1 = np.asarray(u1_cell, dtype=float)
    q = eval_Q(model.rate_law, u5_row) * model.k3()
    return eval_R(model.rate_law, u1) * (q @ model.sw_quad.weights) / model.cell_volume


def _neighbours(grid: MacroGrid, axis: int):
    idx = np.arange(grid.size).reshape(grid.n_cells)
    lo = [slice(None)] * grid.dim
    hi = [slice(None)] * grid.dim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    return idx[tuple(lo)].ravel(), idx[tuple(hi)].ravel()


def _boundary_cells(grid: MacroGrid, face: str) -> np.ndarray:
    axis = "xyz".index(face[0])
    idx = np.arange(grid.size).reshape(grid.n_cells)
    sl = [slice(None)] * grid.dim
    sl[axis] = 0 if face[1] == "-" else -1
    return idx[tuple(sl)].ravel()


class _Operators:
    """Assembled and factorized implicit diffusion operators, keyed by (species, dt, tensor)."""

    def __init__(self, grid: MacroGrid, solver: str):
        self.grid = grid
        self.solver = solver
        self._cache: dict = {}

    def get(self, species, D, capacity, dt, dirichlet_faces):
        key = (species, float(dt), D.tobytes(), float(capacity), tuple(sorted(dirichlet_faces)))
        if key in self._cache:
            return self._cache[key]
        grid = self.grid
        h = grid.spacing
        area = grid.cell_volume / h
        rows, cols, vals = [], [], []
        diag = np.full(grid.size, capacity * grid.cell_volume / dt)
        bnd = {}
        for k in range(grid.dim):
            T = D[k, k] * area[k] / h[k]
            left, right = _neighbours(grid, k)
            rows += [left, right, left, right]
            cols += [right, left, left, right]
            vals += [np.full(len(left), -T)] * 2 + [np.full(len(left), T)] * 2
        for face in dirichlet_faces:
            k = "xyz".index(face[0])
            cells = _boundary_cells(grid, face)
            Tb = 2.0 * D[k, k] * area[k] / h[k]
            diag[cells] += Tb
            bnd[face] = (cells, Tb)
        A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(grid.size, grid.size)) if rows else sp.csr_matrix((grid.size,) * 2)
        A = (A + sp.diags(diag)).tocsc()
        solve = factorized(A) if self.solver == "direct" else None
        entry = (A, solve, bnd)
        self._cache[key] = entry
        return entry


def _cross_flux_divergence(grid: MacroGrid, D: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Net inflow per cell of the off-diagonal flux -sum_{l != k} D_kl d_l u across interior faces."""
    out = np.zeros(grid.size)
    if grid.dim < 2:
        return out
    U = u.reshape(grid.n_cells)
    h = grid.spacing
    grads = [np.gradient(U, h[l], axis=l, edge_order=1) if grid.n_cells[l] > 1 else np.zeros_like(U)
             for l in range(grid.dim)]
    area = grid.cell_volume / h
    for k in range(grid.dim):
        left, right = _neighbours(grid, k)
        flux = np.zeros(len(left))
        for l in range(grid.dim):
            if l == k or D[k, l] == 0.0:
                continue
            g = grads[l].ravel()
            flux -= D[k, l] * 0.5 * (g[left] + g[right])
        flux *= area[k]
        np.add.at(out, left, -flux)
        np.add.at(out, right, flux)
    return out


class MacroStepper:
    """Callable one-step map; keeps factorized operators between steps."""

    def __init__(self, grid: MacroGrid, model: EffectiveModel, linear_solver: str = "direct",
                 rtol: float = 1e-10):
        if linear_solver not in ("direct", "cg"):
            raise ValueError("linear_solver must be 'direct' or 'cg'")
        self.grid = grid
        self.model = model
        self.rtol = rtol
        self.ops = _Operators(grid, linear_solver)
        self.linear_solver = linear_solver

    def degenerate(self, species: int, t: float = 0.0) -> bool:
        D = self.model.tensor(species, t)
        return float(np.abs(D).max()) < DEGENERATE_TOL

    def __call__(self, state: MacroState, dt: float) -> MacroState:
        if not dt > 0:
            raise ValueError("dt must be positive")
        model, grid = self.model, self.grid
        t_new = state.t + dt
        r = model.rates.at(state.t)
        u1, u2, u3, u4 = state.u

        u5 = gypsum_step(model.rate_law, u1[:, None], state.u5, dt, k3=model.k3()[None, :])
        sink = ((u5 - state.u5) @ model.sw_quad.weights) / (dt * model.cell_volume)
        sources = (
            -r["k1"] * u1 + r["k2"] * u2 - sink,
            r["k1"] * u1 - r["k2"] * u2 + r["a"] * u3 - r["b"] * u2,
            -r["a"] * u3 + r["b"] * u2,
            r["k1"] * u1,
        )
        V = grid.cell_volume
        new = np.empty_like(state.u)
        for s in SPECIES:
            c = model.capacities[s - 1]
            u_old = state.u[s - 1]
            if self.degenerate(s, t_new):
                new[s - 1] = u_old + dt * sources[s - 1] / c
                continue
            D = model.tensor(s, t_new)
            faces = grid.dirichlet_faces if s == 3 else frozenset()
            A, solve, bnd = self.ops.get(s, D, c, dt, faces)
            rhs = c * V / dt * u_old + V * sources[s - 1]
            if np.any(D - np.diag(np.diag(D))):
                rhs = rhs + _cross_flux_divergence(grid, D, u_old)
            for face, (cells, Tb) in bnd.items():
                rhs[cells] += Tb * model.dirichlet_value(face, t_new)
            if solve is not None:
                x = solve(rhs)
            else:
                x, _, _ = pcg(A, rhs, rtol=self.rtol, x0=u_old)
            if not np.all(np.isfinite(x)):
                raise SolverDiverged(f"non-finite values in species {s}")
            new[s - 1] = x
        out = MacroState(t=t_new, u=new, u5=u5)
        low = min(float(new.min()), float(u5.min()))
        if low < -POSITIVITY_TOL:
            raise StepRejected(f"negative value {low:.3e} at t={t_new:.6g}")
        if float(u5.max()) > model.rate_law.beta_max + POSITIVITY_TOL and float(state.u5.max()) <= model.rate_law.beta_max:
            raise StepRejected("gypsum exceeded beta_max")
        return out


def step(state: MacroState, model: EffectiveModel, dt: float, grid: MacroGrid,
         linear_solver: str = "direct") -> MacroState:
    """One IMEX step (builds operators afresh; use :class:`MacroStepper` in loops)."""
    return MacroStepper(grid, model, linear_solver)(state, dt)


@dataclass
class DiagnosticsRecord:
    t: float
    minimum: dict
    mean: dict
    maximum: dict
    mass_123: float
    gypsum_total: float
    S_total: float
    ceiling_slack: dict = field(default_factory=dict)


def diagnostics(state: MacroState, model: EffectiveModel, grid: MacroGrid,
                bounds: BoundsA4 | None = None) -> DiagnosticsRecord:
    """Min/mean/max per field, the sulfur functional S(t) and (optionally) ceiling slacks.

    S(t) = sum_{i<=3} c_i int u_i dx + (1/|Y|) int sum_q w_q u5 dx, constant in
    time for all-Neumann boundaries.
    """
    mins, means, maxs = {}, {}, {}
    for s in (1, 2, 3, 4, 5):
        f = state.field(s)
        mins[s], means[s], maxs[s] = float(f.min()), float(f.mean()), float(f.max())
    mass = sum(model.capacities[i] * grid.integrate(state.u[i]) for i in range(3))
    gyp = grid.integrate(state.u5 @ model.sw_quad.weights) / model.cell_volume
    slack = {}
    if bounds is not None:
        for s in (1, 2, 3, 4, 5):
            slack[s] = bounds.ceiling(s, state.t) - maxs[s]
    return DiagnosticsRecord(t=state.t, minimum=mins, mean=means, maximum=maxs,
                             mass_123=mass, gypsum_total=gyp, S_total=mass + gyp,
                             ceiling_slack=slack)


@dataclass
class Trajectory:
    grid: MacroGrid
    states: list
    diagnostics: list
    steps: int = 0
    rejected: int = 0

    @property
    def times(self) -> list[float]:
        return [s.t for s in self.states]

    @property
    def final(self) -> MacroState:
        return self.states[-1]


def integrate(grid: MacroGrid, model: EffectiveModel, state: MacroState, dt: float,
              output_times, bounds: BoundsA4 | None = None,
              linear_solver: str = "direct") -> Trajectory:
    """March from ``state`` through ``output_times`` with step ``dt``.

    Steps are shortened to land on output times; a rejected step is retried
    as two half steps, at most ten halvings deep.
    """
    stepper = MacroStepper(grid, model, linear_solver)
    traj = Trajectory(grid=grid, states=[state], diagnostics=[diagnostics(state, model, grid, bounds)])

    def advance(st, h, depth):
        try:
            traj.steps += 1
            return stepper(st, h)
        except StepRejected:
            traj.rejected += 1
            if depth >= MAX_HALVINGS:
                raise
            mid = advance(st, 0.5 * h, depth + 1)
            return advance(mid, 0.5 * h, depth + 1)

    for t_out in output_times:
        if t_out <= state.t:
            continue
        n = max(1, int(np.ceil((t_out - state.t) / dt - 1e-9)))
        t_start = state.t
        for i in range(n):
            h = (t_out - t_start) / n
            state = advance(state, h, 0)
            state = replace(state, t=t_start + (i + 1) * h if i < n - 1 else t_out)
        traj.states.append(state)
        traj.diagnostics.append(diagnostics(state, model, grid, bounds))
    return traj


def l2_distance(a: MacroState, b: MacroState, grid: MacroGrid, include_u5: bool = True) -> float:
    """L2(Omega) distance over u1..u4 (and the quadrature-weighted u5)."""
    d = grid.integrate(np.sum((a.u - b.u) ** 2, axis=0))
    if include_u5:
        d += grid.integrate(np.mean((a.u5 - b.u5) ** 2, axis=1))
    return float(np.sqrt(d))


# ------------------------------------------------------------ config plumbing

@dataclass
class CellResult:
    """Everything computed on the unit cell for one configuration."""

    mesh: object
    tensors: dict
    rates: EffectiveRates
    sw_quad: InterfaceQuadrature
    measures: object


def homogenize_config(config, workers: int | None = None) -> CellResult:
    from . import config as cfg
    from .corrector import effective_rates, homogenize_tensors
    from .unit_cell import Interface, Phase, interface_quadrature, lump_quadrature, mesh_cell, phase_measures

    geom = cfg.geometry_from(config)
    g = config.section("geometry")
    mesh = mesh_cell(geom, g["h"])
    tensors = homogenize_tensors(mesh, cfg.diffusion_specs(config), workers=workers,
                                 rtol=config.get("diffusion", "rtol"))
    sw = interface_quadrature(mesh, Interface.GAMMA_SW)
    if g["n_quad"] > 0:
        sw = lump_quadrature(sw, g["n_quad"])
    k = config.section("kinetics")
    support = {"cell": None, "water": Phase.WATER}.get(k["rate_support"], "bad")
    if support == "bad":
        raise cfg.ConfigError("[kinetics] rate_support must be 'cell' or 'water'")
    rates = effective_rates(mesh, k["k1"], k["k2"], k["a"], k["b"],
                            interface_quadrature(mesh, Interface.GAMMA_WA), support=support)
    return CellResult(mesh=mesh, tensors=tensors, rates=rates, sw_quad=sw, measures=phase_measures(mesh))


def model_from_config(config, cell: CellResult) -> EffectiveModel:
    from . import config as cfg

    capacity = config.get("macro", "capacity")
    m = cell.measures
    if capacity == "unit":
        caps = (1.0, 1.0, 1.0, 1.0)
    elif capacity == "porosity":
        caps = (m.vol_w, m.vol_w, m.vol_a, m.vol_w)
    else:
        raise cfg.ConfigError("[macro] capacity must be 'unit' or 'porosity'")
    return EffectiveModel(tensors=cell.tensors, rates=cell.rates, sw_quad=cell.sw_quad,
                          rate_law=cfg.rate_law_from(config), u3_dirichlet=cfg.dirichlet_samples(config),
                          capacities=caps)


def initial_from_config(config) -> dict:
    from . import config as cfg

    return {name: (lambda x, v=config.get("macro", name): cfg.evaluate_field(v, x))
            for name in ("u10", "u20", "u30", "u40", "u50")}


def run(config, workers: int | None = None, cell: CellResult | None = None,
        model: EffectiveModel | None = None, initial: dict | None = None) -> tuple[Trajectory, EffectiveModel]:
    """Homogenize the cell (unless given) and integrate the macro system per ``config``."""
    from . import config as cfg

    grid = cfg.macro_grid_from(config)
    if model is None:
        model = model_from_config(config, cell or homogenize_config(config, workers))
    state = init_state(grid, initial or initial_from_config(config), len(model.sw_quad))
    mac = config.section("macro")
    if mac["dt"] <= 0 or mac["t_end"] <= 0:
        raise cfg.ConfigError("[macro] dt and t_end must be positive")
    bounds = cfg.bounds_from(config) if config.get("kinetics", "strict_a4") else None
    dt_max = model.stability_dt()
    if mac["dt"] > dt_max:
        logger.warning("dt=%.3g exceeds the explicit-coupling bound %.3g", mac["dt"], dt_max)
    traj = integrate(grid, model, state, mac["dt"], cfg.output_times(config), bounds=bounds,
                     linear_solver=mac["linear_solver"])
    return traj, model

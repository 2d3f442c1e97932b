"""epsilon-resolved reference solver on a periodically perforated square (2D).

The box is tiled by 1/eps copies of the unit cell scaled by eps, each
resolved by ``cells_per_period``^2 pixels labelled solid, water or air.
Species 1, 2, 4 live on water pixels, species 3 on air pixels and the gypsum
field u5 on the pixel faces separating solid from water.

Interfaces are staircases. Their lengths are rescaled per interface type so
the measure per period equals the analytic one, which keeps the
eps * |Gamma_eps| = O(1) balance of the surface terms exact.

Time stepping mirrors the macro scheme: gypsum by backward Euler per face,
explicit couplings, implicit phase-masked diffusion.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from .corrector import EffectiveRates, pcg
from .errors import MismatchedConfigs, MissingInterface, ResolutionTooCoarse, SolverDiverged, StepRejected
from .kinetics import RateLaw, gypsum_step
from .unit_cell import CellGeometry, Interface, InterfaceQuadrature, Phase

logger = logging.getLogger(__name__)

MIN_CELLS_PER_PERIOD = 16
POSITIVITY_TOL = 1e-12


def _unit_mask(geom: CellGeometry, n: int) -> np.ndarray:
    c = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(c, c, indexing="ij")
    return geom.phase_of(np.stack([X.ravel(), Y.ravel()], axis=1)).reshape(n, n).astype(np.int8)


def _pairs(labels: np.ndarray, first: Phase, second: Phase, periodic: bool):
    """Adjacent pixel pairs (flat index in ``first``, flat index in ``second``, axis)."""
    idx = np.arange(labels.size).reshape(labels.shape)
    out_a, out_b, out_axis = [], [], []
    for axis in (0, 1):
        if periodic:
            lo, hi = labels, np.roll(labels, -1, axis=axis)
            ilo, ihi = idx, np.roll(idx, -1, axis=axis)
        else:
            sl0 = [slice(None)] * 2
            sl1 = [slice(None)] * 2
            sl0[axis] = slice(0, -1)
            sl1[axis] = slice(1, None)
            lo, hi, ilo, ihi = labels[tuple(sl0)], labels[tuple(sl1)], idx[tuple(sl0)], idx[tuple(sl1)]
        for pa, pb, ia, ib in ((lo, hi, ilo, ihi), (hi, lo, ihi, ilo)):
            m = (pa == first) & (pb == second)
            out_a.append(ia[m])
            out_b.append(ib[m])
            out_axis.append(np.full(int(m.sum()), axis))
    return np.concatenate(out_a), np.concatenate(out_b), np.concatenate(out_axis)


def _same_phase_pairs(labels: np.ndarray, phase: Phase, periodic: bool):
    idx = np.arange(labels.size).reshape(labels.shape)
    out = []
    for axis in (0, 1):
        if periodic:
            a, b = idx, np.roll(idx, -1, axis=axis)
            la, lb = labels, np.roll(labels, -1, axis=axis)
        else:
            sl0 = [slice(None)] * 2
            sl1 = [slice(None)] * 2
            sl0[axis] = slice(0, -1)
            sl1[axis] = slice(1, None)
            a, b, la, lb = idx[tuple(sl0)], idx[tuple(sl1)], labels[tuple(sl0)], labels[tuple(sl1)]
        m = (la == phase) & (lb == phase)
        out.append((a[m], b[m], axis))
    return out


def interface_scales(geom: CellGeometry, n: int) -> dict[Interface, float]:
    """Ratio analytic / staircase interface length per period."""
    labels = _unit_mask(geom, n)
    exact = geom.analytic_measures() or {}
    scales = {}
    for which, (p, q), key in ((Interface.GAMMA_SW, (Phase.WATER, Phase.SOLID), "area_sw"),
                               (Interface.GAMMA_WA, (Phase.WATER, Phase.AIR), "area_wa")):
        count = len(_pairs(labels, p, q, periodic=True)[0])
        stair = count / n
        if key in exact and exact[key] > 0:
            if count == 0:
                raise MissingInterface(f"{which.value} not resolved at {n} pixels per period")
            scales[which] = exact[key] / stair
        else:
            scales[which] = 1.0
    return scales


@dataclass(frozen=True, eq=False)
class PerforatedGrid:
    eps: float
    n_periods: int
    cells_per_period: int
    lo: float
    hi: float
    geometry: CellGeometry
    labels: np.ndarray  # (M, M) phase per pixel, M = n_periods * cells_per_period
    sw: tuple  # (water pixel, solid pixel, physical length) per solid-water face
    wa: tuple  # (water pixel, air pixel, physical length) per water-air face
    scales: dict

    @property
    def fine_h(self) -> float:
        return (self.hi - self.lo) / self.labels.shape[0]

    @property
    def size(self) -> int:
        return self.labels.size

    def cells(self, phase: Phase) -> np.ndarray:
        return np.flatnonzero(self.labels.ravel() == Phase(phase))

    def local_index(self, phase: Phase) -> np.ndarray:
        """Map flat pixel index -> position among the pixels of ``phase`` (-1 elsewhere)."""
        out = np.full(self.size, -1)
        cells = self.cells(phase)
        out[cells] = np.arange(len(cells))
        return out

    def period_of(self, flat: np.ndarray) -> np.ndarray:
        M = self.labels.shape[0]
        ix, iy = np.divmod(np.asarray(flat), M)
        n = self.cells_per_period
        return (ix // n) * self.n_periods + iy // n

    def centers(self, flat: np.ndarray) -> np.ndarray:
        M = self.labels.shape[0]
        ix, iy = np.divmod(np.asarray(flat), M)
        return self.lo + (np.stack([ix, iy], axis=1) + 0.5) * self.fine_h

    def phase_fractions(self) -> dict[Phase, float]:
        counts = np.bincount(self.labels.ravel(), minlength=3) / self.size
        return {p: float(counts[p]) for p in Phase}

    def interface_measure(self, which: Interface) -> float:
        faces = self.sw if Interface(which) is Interface.GAMMA_SW else self.wa
        return float(np.sum(faces[2]))


def build_perforated(eps: float, geom: CellGeometry, fine_h: float, lo: float = 0.0,
                     hi: float = 1.0) -> PerforatedGrid:
    """Tile [lo, hi]^2 with periods of side ``eps`` resolved by square pixels of side ``fine_h``."""
    if geom.dim != 2:
        raise ValueError("the resolved reference is 2D only")
    length = hi - lo
    n_periods = int(round(length / eps))
    if n_periods < 1 or abs(n_periods * eps - length) > 1e-9 * length:
        raise ValueError(f"box length {length} is not an integer multiple of eps={eps}")
    if fine_h > eps / MIN_CELLS_PER_PERIOD * (1 + 1e-9):
        raise ResolutionTooCoarse(f"fine_h={fine_h:.4g} exceeds eps/{MIN_CELLS_PER_PERIOD}={eps / 16:.4g}")
    n = int(round(eps / fine_h))
    if abs(n * fine_h - eps) > 1e-9 * eps:
        raise ValueError("fine_h must divide eps")
    labels = np.tile(_unit_mask(geom, n), (n_periods, n_periods))
    scales = interface_scales(geom, n)
    h = length / labels.shape[0]
    w, s, _ = _pairs(labels, Phase.WATER, Phase.SOLID, periodic=False)
    sw = (w, s, np.full(len(w), h * scales[Interface.GAMMA_SW]))
    w, a, _ = _pairs(labels, Phase.WATER, Phase.AIR, periodic=False)
    wa = (w, a, np.full(len(w), h * scales[Interface.GAMMA_WA]))
    return PerforatedGrid(eps=eps, n_periods=n_periods, cells_per_period=n, lo=lo, hi=hi,
                          geometry=geom, labels=labels, sw=sw, wa=wa, scales=scales)


def flood_connected(grid: PerforatedGrid, phase: Phase, axis: int) -> bool:
    """True when ``phase`` pixels connect the two box faces normal to ``axis``."""
    from scipy.ndimage import label

    comp, _ = label(grid.labels == Phase(phase))
    first = np.take(comp, 0, axis=axis)
    last = np.take(comp, -1, axis=axis)
    common = set(first[first > 0]) & set(last[last > 0])
    return bool(common)


@dataclass(frozen=True, eq=False)
class MicroParams:
    """Coefficients of the resolved problem; diffusivities are diagonal per species."""

    diffusivity: dict  # species -> (d_xx, d_yy)
    k1: float
    k2: float
    a: float
    b: float
    rate_law: RateLaw
    u3_dirichlet: object = 0.0
    dirichlet_faces: frozenset = frozenset({"x-"})

    def dirichlet_value(self, t: float) -> float:
        data = self.u3_dirichlet
        if np.ndim(data) == 0:
            return float(data)
        times, values = data
        return float(np.interp(t, times, values))


@dataclass(frozen=True, eq=False)
class MicroState:
    t: float
    u1: np.ndarray  # water pixels
    u2: np.ndarray
    u3: np.ndarray  # air pixels
    u4: np.ndarray
    u5: np.ndarray  # solid-water faces

    def field(self, species: int) -> np.ndarray:
        return (self.u1, self.u2, self.u3, self.u4, self.u5)[species - 1]


def init_micro(grid: PerforatedGrid, initial: dict, t0: float = 0.0) -> MicroState:
    """Initial values from constants or callables of physical coordinates."""
    def sample(name, flat):
        v = initial.get(name, 0.0)
        x = grid.centers(flat)
        vals = np.asarray(v(x) if callable(v) else v, dtype=float)
        return np.array(np.broadcast_to(vals, (len(flat),)), dtype=float)

    water, air = grid.cells(Phase.WATER), grid.cells(Phase.AIR)
    sw_pix = grid.sw[0]
    state = MicroState(t0, sample("u10", water), sample("u20", water), sample("u30", air),
                       sample("u40", water), sample("u50", sw_pix))
    for s in range(1, 6):
        f = state.field(s)
        if np.any(~np.isfinite(f)) or np.any(f < 0):
            from .errors import NegativeInitialData
            raise NegativeInitialData(f"u{s}0 must be finite and nonnegative")
    return state


def _laplacian(grid: PerforatedGrid, phase: Phase, d: tuple[float, float]) -> sp.csr_matrix:
    loc = grid.local_index(phase)
    n = int((loc >= 0).sum())
    rows, cols, vals = [], [], []
    for a, b, axis in _same_phase_pairs(grid.labels, phase, periodic=False):
        T = d[axis]  # face length h over centre distance h
        ia, ib = loc[a], loc[b]
        rows += [ia, ib, ia, ib]
        cols += [ib, ia, ia, ib]
        vals += [np.full(len(ia), -T)] * 2 + [np.full(len(ia), T)] * 2
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def _boundary_pixels(grid: PerforatedGrid, face: str, phase: Phase) -> np.ndarray:
    M = grid.labels.shape[0]
    idx = np.arange(grid.size).reshape(M, M)
    axis = "xy".index(face[0])
    line = np.take(idx, 0 if face[1] == "-" else -1, axis=axis)
    return line[grid.labels.ravel()[line] == Phase(phase)]


class MicroStepper:
    def __init__(self, grid: PerforatedGrid, params: MicroParams, linear_solver: str = "direct"):
        self.grid = grid
        self.params = params
        self.linear_solver = linear_solver
        self._ops: dict = {}
        self.water_loc = grid.local_index(Phase.WATER)
        self.air_loc = grid.local_index(Phase.AIR)
        self.sw_w = self.water_loc[grid.sw[0]]
        self.wa_w = self.water_loc[grid.wa[0]]
        self.wa_a = self.air_loc[grid.wa[1]]
        self.n_water = int((self.water_loc >= 0).sum())
        self.n_air = int((self.air_loc >= 0).sum())
        self.dirichlet = {}
        for face in params.dirichlet_faces:
            self.dirichlet[face] = self.air_loc[_boundary_pixels(grid, face, Phase.AIR)]

    def _operator(self, species: int, dt: float):
        key = (species, float(dt))
        if key not in self._ops:
            grid = self.grid
            phase = Phase.AIR if species == 3 else Phase.WATER
            d = self.params.diffusivity[species]
            A = _laplacian(grid, phase, d)
            V = grid.fine_h ** 2
            diag = np.full(A.shape[0], V / dt)
            bnd = {}
            if species == 3:
                for face, cells in self.dirichlet.items():
                    Tb = 2.0 * d["xy".index(face[0])]
                    diag[cells] += Tb
                    bnd[face] = (cells, Tb)
            A = (A + sp.diags(diag)).tocsc()
            self._ops[key] = (A, factorized(A) if self.linear_solver == "direct" else None, bnd)
        return self._ops[key]

    def __call__(self, state: MicroState, dt: float) -> MicroState:
        p, grid = self.params, self.grid
        eps = grid.eps
        V = grid.fine_h ** 2
        t_new = state.t + dt
        u1, u2, u3, u4 = state.u1, state.u2, state.u3, state.u4

        u5 = gypsum_step(p.rate_law, u1[self.sw_w], state.u5, dt)
        uptake = eps * grid.sw[2] * (u5 - state.u5) / dt
        sink = np.bincount(self.sw_w, weights=uptake, minlength=self.n_water)
        ex = eps * grid.wa[2] * (p.a * u3[self.wa_a] - p.b * u2[self.wa_w])
        gain2 = np.bincount(self.wa_w, weights=ex, minlength=self.n_water)
        loss3 = np.bincount(self.wa_a, weights=ex, minlength=self.n_air)

        rhs = {
            1: V / dt * u1 + V * (-p.k1 * u1 + p.k2 * u2) - sink,
            2: V / dt * u2 + V * (p.k1 * u1 - p.k2 * u2) + gain2,
            3: V / dt * u3 - loss3,
            4: V / dt * u4 + V * p.k1 * u1,
        }
        new = {}
        for s in (1, 2, 3, 4):
            A, solve, bnd = self._operator(s, dt)
            b = rhs[s]
            for cells, Tb in bnd.values():
                b[cells] += Tb * p.dirichlet_value(t_new)
            x = solve(b) if solve is not None else pcg(A, b, x0=state.field(s))[0]
            if not np.all(np.isfinite(x)):
                raise SolverDiverged(f"non-finite values in micro species {s}")
            new[s] = x
        out = MicroState(t_new, new[1], new[2], new[3], new[4], u5)
        low = min(float(np.min(f, initial=0.0)) for f in (new[1], new[2], new[3], new[4], u5))
        if low < -POSITIVITY_TOL:
            raise StepRejected(f"negative micro value {low:.3e}")
        return out


def micro_step(state: MicroState, grid: PerforatedGrid, params: MicroParams, dt: float) -> MicroState:
    return MicroStepper(grid, params)(state, dt)


def micro_run(grid: PerforatedGrid, params: MicroParams, state: MicroState, dt: float,
              t_end: float) -> MicroState:
    stepper = MicroStepper(grid, params)
    n = max(1, int(np.ceil((t_end - state.t) / dt - 1e-9)))
    h = (t_end - state.t) / n
    for _ in range(n):
        state = stepper(state, h)
    return state


def period_averages(grid: PerforatedGrid, state: MicroState) -> dict[int, np.ndarray]:
    """Phase average of every species in each period, as (n_periods, n_periods) arrays
    (u5 is length-weighted over the solid-water faces of the period)."""
    N = grid.n_periods
    out = {}
    for s, pix, w in ((1, grid.cells(Phase.WATER), None), (2, grid.cells(Phase.WATER), None),
                      (3, grid.cells(Phase.AIR), None), (4, grid.cells(Phase.WATER), None),
                      (5, grid.sw[0], grid.sw[2])):
        per = grid.period_of(pix)
        weights = np.ones(len(pix)) if w is None else w
        num = np.bincount(per, weights=weights * state.field(s), minlength=N * N)
        den = np.bincount(per, weights=weights, minlength=N * N)
        out[s] = (num / den).reshape(N, N)
    return out


# ------------------------------------------------------- pixel-consistent model

def pixel_effective_tensor(labels: np.ndarray, phase: Phase, d: tuple[float, float]) -> np.ndarray:
    """Effective tensor of the two-point-flux discretization on one periodic pixel cell.

    Minimizes sum_faces T (w_b - w_a)^2 over w = y_i + chi with chi periodic,
    the discrete analogue of the continuous cell problem.
    """
    n = labels.shape[0]
    h = 1.0 / n
    loc = np.full(labels.size, -1)
    cells = np.flatnonzero(labels.ravel() == Phase(phase))
    loc[cells] = np.arange(len(cells))
    m = len(cells)
    pairs = [(loc[a], loc[b], axis) for a, b, axis in _same_phase_pairs(labels, phase, periodic=True)]
    rows, cols, vals = [], [], []
    for ia, ib, axis in pairs:
        T = d[axis]
        rows += [ia, ib, ia, ib]
        cols += [ib, ia, ia, ib]
        vals += [np.full(len(ia), -T)] * 2 + [np.full(len(ia), T)] * 2
    if not rows or m == 0:
        return np.zeros((2, 2))
    L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    chis = []
    for i in range(2):
        rhs = np.zeros(m)
        for ia, ib, axis in pairs:
            if axis == i:
                flux = d[axis] * h
                np.add.at(rhs, ia, flux)
                np.add.at(rhs, ib, -flux)
        # L is singular (constants per connected component); the rhs is compatible
        L_reg = L + sp.identity(m) * (1e-14 * max(d))
        x = pcg(L_reg.tocsr(), rhs, rtol=1e-12)[0] if np.any(rhs) else np.zeros(m)
        chis.append(x)
    D = np.zeros((2, 2))
    for ia, ib, axis in pairs:
        jumps = [chis[i][ib] - chis[i][ia] + (h if axis == i else 0.0) for i in range(2)]
        for i in range(2):
            for j in range(2):
                D[i, j] += d[axis] * np.sum(jumps[i] * jumps[j])
    return D


def pixel_model(geom: CellGeometry, n: int, params: MicroParams):
    """Macro coefficients consistent with the pixel discretization of one period.

    Capacities are the pixel phase fractions, rates act on the water pixels and
    the interface measures carry the same analytic rescaling as the micro grid.
    The solid-water quadrature uses the staircase faces of one period.
    """
    from .macro_sim import EffectiveModel, clean_tensor

    labels = _unit_mask(geom, n)
    frac = np.bincount(labels.ravel(), minlength=3) / labels.size
    scales = interface_scales(geom, n)
    tensors = {s: clean_tensor(pixel_effective_tensor(labels, Phase.AIR if s == 3 else Phase.WATER,
                                                      params.diffusivity[s]))
               for s in (1, 2, 3, 4)}
    w, s_, axis = _pairs(labels, Phase.WATER, Phase.SOLID, periodic=True)
    M = labels.shape[0]
    cw = (np.stack(np.divmod(w, M), axis=1) + 0.5) / n
    cs = (np.stack(np.divmod(s_, M), axis=1) + 0.5) / n
    delta = cs - cw
    delta -= np.round(delta)  # faces across the period boundary
    normals = delta * n
    quad = InterfaceQuadrature(points=np.mod(cw + 0.5 * delta, 1.0),
                               weights=np.full(len(w), scales[Interface.GAMMA_SW] / n),
                               normals=normals, which=Interface.GAMMA_SW)
    wa_measure = len(_pairs(labels, Phase.WATER, Phase.AIR, periodic=True)[0]) / n * scales[Interface.GAMMA_WA]
    rates = EffectiveRates(k1=params.k1 * frac[Phase.WATER], k2=params.k2 * frac[Phase.WATER],
                           a=params.a * wa_measure, b=params.b * wa_measure)
    caps = (frac[Phase.WATER], frac[Phase.WATER], frac[Phase.AIR], frac[Phase.WATER])
    data = params.u3_dirichlet
    return EffectiveModel(tensors=tensors, rates=rates, sw_quad=quad, rate_law=params.rate_law,
                          u3_dirichlet=data if np.ndim(data) else ((0.0,), (float(data),)),
                          capacities=tuple(float(c) for c in caps))


# ------------------------------------------------------------ convergence study

@dataclass
class ErrorTable:
    rows: list = field(default_factory=list)  # (eps, species, error)

    def add(self, eps: float, species: int, error: float):
        self.rows.append((float(eps), int(species), float(error)))

    def errors(self, species: int) -> list[tuple[float, float]]:
        return [(e, v) for e, s, v in self.rows if s == species]

    def ratios(self, species: int) -> list[float]:
        errs = [v for _, v in sorted(self.errors(species), reverse=True)]
        return [b / a if a > 0 else np.inf for a, b in zip(errs, errs[1:])]


def params_from_config(config) -> MicroParams:
    from . import config as cfg

    diff = {}
    for s in (1, 2, 3, 4):
        D = cfg.diffusion_tensor(config, s)
        if D.shape != (2, 2) or np.any(D - np.diag(np.diag(D))):
            raise cfg.ConfigError(f"the resolved reference needs a diagonal 2x2 d{s}")
        diff[s] = (float(D[0, 0]), float(D[1, 1]))
    k = config.section("kinetics")
    if config.section("diffusion")["time_samples"]:
        raise cfg.ConfigError("the resolved reference does not support time-dependent diffusion")
    return MicroParams(diffusivity=diff, k1=k["k1"], k2=k["k2"], a=k["a"], b=k["b"],
                       rate_law=cfg.rate_law_from(config),
                       u3_dirichlet=cfg.dirichlet_samples(config),
                       dirichlet_faces=frozenset(config.get("macro", "dirichlet_faces")))


@dataclass
class MacroReference:
    grid: object
    state: object
    model: object
    t_end: float
    dt: float


def macro_reference(config, dt: float | None = None, t_end: float | None = None) -> MacroReference:
    """Macro run with the pixel-consistent model on ``[micro] macro_cells`` cells per axis."""
    from . import config as cfg
    from .macro_sim import MacroGrid, init_state, initial_from_config, integrate

    mic = config.section("micro")
    dt = mic["dt"] if dt is None else dt
    t_end = mic["t_end"] if t_end is None else t_end
    geom = cfg.geometry_from(config)
    params = params_from_config(config)
    model = pixel_model(geom, mic["cells_per_period"], params)
    lo, hi = config.get("macro", "box")
    n = mic["macro_cells"]
    grid = MacroGrid(lo=lo, hi=hi, n_cells=(n, n), dirichlet_faces=params.dirichlet_faces)
    state = init_state(grid, initial_from_config(config), len(model.sw_quad))
    traj = integrate(grid, model, state, dt, [t_end])
    return MacroReference(grid=grid, state=traj.final, model=model, t_end=t_end, dt=dt)


def _block_average(values: np.ndarray, n_cells: int, n_periods: int) -> np.ndarray:
    if n_cells % n_periods:
        raise MismatchedConfigs(f"{n_cells} macro cells per axis do not tile {n_periods} periods")
    b = n_cells // n_periods
    return values.reshape(n_periods, b, n_periods, b).mean(axis=(1, 3))


def convergence_study(eps_list, config, macro_run: MacroReference | None = None) -> ErrorTable:
    """Relative L2 distance per species between period-averaged micro fields and the macro run.

    ``eps_list`` holds eps values (e.g. 1/4, 1/8, 1/16), strictly decreasing.
    """
    from . import config as cfg
    from .macro_sim import initial_from_config

    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be nonempty and strictly decreasing")
    mic = config.section("micro")
    if macro_run is None:
        macro_run = macro_reference(config)
    elif abs(macro_run.t_end - mic["t_end"]) > 1e-12 or abs(macro_run.dt - mic["dt"]) > 1e-15:
        raise MismatchedConfigs("macro run uses a different t_end or dt than [micro]")
    geom = cfg.geometry_from(config)
    params = params_from_config(config)
    lo, hi = config.get("macro", "box")
    n_macro = macro_run.grid.n_cells[0]
    macro_fields = {s: macro_run.state.field(s).reshape(n_macro, n_macro) for s in (1, 2, 3, 4)}
    w = macro_run.model.sw_quad.weights
    macro_fields[5] = (macro_run.state.u5 @ w / w.sum()).reshape(n_macro, n_macro)
    table = ErrorTable()
    for eps in eps_list:
        grid = build_perforated(eps * (hi - lo), geom, eps * (hi - lo) / mic["cells_per_period"], lo, hi)
        state = init_micro(grid, initial_from_config(config))
        state = micro_run(grid, params, state, mic["dt"], mic["t_end"])
        avg = period_averages(grid, state)
        for s in (1, 2, 3, 4, 5):
            ref = _block_average(macro_fields[s], n_macro, grid.n_periods)
            norm = float(np.sqrt(np.sum(ref ** 2)))
            err = float(np.sqrt(np.sum((avg[s] - ref) ** 2)))
            table.add(eps, s, err / norm if norm > 0 else err)
        logger.info("eps=%g done (%d pixels)", eps, grid.size)
    return table

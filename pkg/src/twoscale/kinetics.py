"""Reaction kinetics: gypsum rate eta = k3 R(u1) Q(u5), Henry-law exchange and
checks of the structural assumptions on data and parameters (A1)-(A7)."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import NegativeRate, SolverDiverged


class RKind(str, enum.Enum):
    TRUNCATED_LINEAR = "truncated_linear"
    SATURATING = "saturating"


class QKind(str, enum.Enum):
    LINEAR_CUTOFF = "linear_cutoff"


@dataclass(frozen=True, eq=False)
class RateLaw:
    """R(a) = c_R max(a, 0) or c_R max(a, 0) / (K_half + max(a, 0));
    Q(b) = max(1 - b / beta_max, 0). ``k3`` is a constant or one value per
    solid-water quadrature point."""

    r_kind: RKind = RKind.TRUNCATED_LINEAR
    c_r: float = 1.0
    k_half: float = 1.0
    beta_max: float = 1.0
    k3: float | np.ndarray = 1.0
    q_kind: QKind = QKind.LINEAR_CUTOFF

    def __post_init__(self):
        object.__setattr__(self, "r_kind", RKind(self.r_kind))
        object.__setattr__(self, "q_kind", QKind(self.q_kind))
        if self.beta_max <= 0:
            raise ValueError("beta_max must be positive")
        if self.c_r < 0 or (self.r_kind is RKind.SATURATING and self.k_half <= 0):
            raise ValueError("c_R must be nonnegative and K_half positive")
        k3 = np.asarray(self.k3, dtype=float)
        if np.any(k3 < 0):
            raise NegativeRate("k3 must be nonnegative")
        object.__setattr__(self, "k3", float(k3) if k3.ndim == 0 else k3)

    def k3_at(self, q=None):
        if np.ndim(self.k3) == 0 or q is None:
            return self.k3
        return self.k3[q]

    @property
    def lipschitz_R(self) -> float:
        return self.c_r if self.r_kind is RKind.TRUNCATED_LINEAR else self.c_r / self.k_half

    @property
    def lipschitz_Q(self) -> float:
        return 1.0 / self.beta_max

    @property
    def q_sup(self) -> float:
        return 1.0


def eval_R(law: RateLaw, alpha):
    a = np.maximum(np.asarray(alpha, dtype=float), 0.0)
    if law.r_kind is RKind.TRUNCATED_LINEAR:
        return law.c_r * a
    return law.c_r * a / (law.k_half + a)


def eval_Q(law: RateLaw, beta):
    return np.maximum(1.0 - np.asarray(beta, dtype=float) / law.beta_max, 0.0)


def _dQ(law: RateLaw, beta):
    return np.where(np.asarray(beta) < law.beta_max, -1.0 / law.beta_max, 0.0)


def eval_eta(law: RateLaw, u1, u5, q=None):
    """Surface reaction rate at quadrature point(s) ``q`` (all points when None)."""
    return law.k3_at(q) * eval_R(law, u1) * eval_Q(law, u5)


def gypsum_step(law: RateLaw, u1, u5, dt: float, k3=None, tol: float = 1e-12, max_iter: int = 20):
    """Backward-Euler update of d u5/dt = k3 R(u1) Q(u5) with u1 frozen.

    ``u1`` broadcasts against ``u5`` (e.g. shape (n, 1) against (n, n_q)).
    Solved pointwise by Newton; the update is nondecreasing and never crosses
    beta_max.
    """
    u5 = np.asarray(u5, dtype=float)
    rate = (law.k3 if k3 is None else k3) * eval_R(law, u1) * dt
    rate = np.broadcast_to(rate, u5.shape)
    v = u5.copy()
    for _ in range(max_iter):
        g = v - u5 - rate * eval_Q(law, v)
        if np.max(np.abs(g), initial=0.0) <= tol * max(1.0, law.beta_max):
            break
        v = v - g / (1.0 - rate * _dQ(law, v))
    else:
        raise SolverDiverged("gypsum Newton iteration did not converge")
    # round-off guard: the exact update is bracketed by [u5, max(u5, beta_max)]
    return np.clip(v, u5, np.maximum(u5, law.beta_max))


@dataclass(frozen=True)
class HenryLaw:
    a: float | np.ndarray = 1.0
    b: float | np.ndarray = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.a) < 0) or np.any(np.asarray(self.b) < 0):
            raise NegativeRate("Henry coefficients a, b must be nonnegative")


def henry_exchange(law: HenryLaw, u2, u3):
    """Net transfer gas -> water, a u3 - b u2 (gain of the aqueous species)."""
    return law.a * np.asarray(u3, dtype=float) - law.b * np.asarray(u2, dtype=float)


@dataclass(frozen=True)
class BoundsA4:
    m1: float
    m2: float
    m3: float
    m4: float
    m5: float
    a_sup: float
    b_sup: float
    k1_sup: float
    k2_sup: float
    k1_inf: float

    def equalities(self) -> list[tuple[str, float, float]]:
        return [
            ("a^inf M3 = b^inf M2", self.a_sup * self.m3, self.b_sup * self.m2),
            ("k1^inf M1 = M4", self.k1_sup * self.m1, self.m4),
            ("k1 M1 = k2^inf M2", self.k1_inf * self.m1, self.k2_sup * self.m2),
        ]

    def violations(self, rtol: float = 1e-9) -> list[str]:
        out = []
        for name, lhs, rhs in self.equalities():
            if abs(lhs - rhs) > rtol * max(abs(lhs), abs(rhs), 1e-300):
                out.append(f"{name}: {lhs:.6g} != {rhs:.6g}")
        return out

    def ceiling(self, species: int, t: float = 0.0) -> float:
        if species == 4:
            return (t + 1.0) * self.m4
        return (self.m1, self.m2, self.m3, None, self.m5)[species - 1]


class Status(str, enum.Enum):
    PASS = "pass"
    WARN = "warn"
    FAIL = "fail"


@dataclass
class AssumptionReport:
    entries: list[tuple[str, Status, str]] = field(default_factory=list)

    def add(self, code: str, status: Status, message: str):
        self.entries.append((code, Status(status), message))

    @property
    def ok(self) -> bool:
        return all(s is not Status.FAIL for _, s, _ in self.entries)

    def failures(self) -> list[tuple[str, Status, str]]:
        return [e for e in self.entries if e[1] is Status.FAIL]

    def warnings(self) -> list[tuple[str, Status, str]]:
        return [e for e in self.entries if e[1] is Status.WARN]

    def render(self) -> str:
        width = max((len(c) for c, _, _ in self.entries), default=4)
        lines = [f"{c:<{width}}  {s.value.upper():<4}  {m}" for c, s, m in self.entries]
        lines.append(f"{'':<{width}}  {'OK' if self.ok else 'FAILED'}")
        return "\n".join(lines)


def validate_assumptions(config, strict_a4: bool | None = None) -> AssumptionReport:
    """Check a :class:`~twoscale.config.RunConfig` against (A1)-(A7) and the cell geometry.

    (A4) violations fail in strict mode and only warn otherwise.
    """
    from . import config as cfgmod
    from .errors import GeometryError

    report = AssumptionReport()
    if strict_a4 is None:
        strict_a4 = bool(config.get("kinetics", "strict_a4"))

    try:
        cfgmod.geometry_from(config)
        report.add("geometry", Status.PASS, "0 < r_solid < r_water < 0.5 and bridge parameters valid")
    except GeometryError as exc:
        report.add("geometry", Status.FAIL, str(exc))

    bad = []
    for s in (1, 2, 3, 4):
        D = np.atleast_2d(np.asarray(cfgmod.diffusion_tensor(config, s), dtype=float))
        if D.shape[0] != D.shape[1] or not np.allclose(D, D.T, atol=1e-12 * max(np.abs(D).max(), 1e-300)):
            bad.append(f"d{s} not symmetric")
        elif not np.all(np.isfinite(D)) or np.linalg.eigvalsh(D).min() <= 0:
            bad.append(f"d{s} not positive definite")
    report.add("A1", Status.FAIL if bad else Status.PASS,
               "; ".join(bad) or "diffusion tensors symmetric positive definite")

    kin = config.section("kinetics")
    try:
        law = cfgmod.rate_law_from(config)
        probe = np.linspace(-1.0, 10.0 * law.beta_max + 10.0, 2001)
        shape_ok = (np.all(eval_R(law, probe[probe < 0]) == 0)
                    and np.all(eval_R(law, probe[probe > 0]) > 0 if law.c_r > 0 else True)
                    and np.all(eval_Q(law, probe[probe >= law.beta_max]) == 0)
                    and np.all(eval_Q(law, probe[probe < law.beta_max]) > 0))
        report.add("A2", Status.PASS if shape_ok else Status.FAIL,
                   f"R={law.r_kind.value} (L_R={law.lipschitz_R:.6g}), "
                   f"Q={law.q_kind.value} (beta_max={law.beta_max:.6g})")
    except (ValueError, NegativeRate) as exc:
        report.add("A2", Status.FAIL, str(exc))

    neg = []
    for name in ("u10", "u20", "u30", "u40", "u50"):
        vals = cfgmod.initial_samples(config, name)
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            neg.append(f"{name} has negative or non-finite values (min {np.nanmin(vals):.6g})")
    report.add("A3", Status.FAIL if neg else Status.PASS,
               "; ".join(neg) or "initial data nonnegative and bounded")

    bounds = cfgmod.bounds_from(config)
    problems = bounds.violations()
    ceilings = {"u10": bounds.m1, "u20": bounds.m2, "u30": bounds.m3, "u40": bounds.m4,
                "u50": bounds.m5}
    for name, m in ceilings.items():
        vmax = float(np.max(cfgmod.initial_samples(config, name)))
        if vmax > m * (1 + 1e-12):
            problems.append(f"{name} max {vmax:.6g} exceeds ceiling {m:.6g}")
    dmax = float(np.max(cfgmod.dirichlet_samples(config)[1]))
    if dmax > bounds.m3 * (1 + 1e-12):
        problems.append(f"u3 Dirichlet data {dmax:.6g} exceeds M3={bounds.m3:.6g}")
    if bounds.m5 < kin["beta_max"] * (1 - 1e-12):
        problems.append(f"M5={bounds.m5:.6g} below beta_max={kin['beta_max']:.6g}")
    status = Status.PASS if not problems else (Status.FAIL if strict_a4 else Status.WARN)
    report.add("A4", status, "; ".join(problems) or "ceiling equalities hold")

    neg_ab = [n for n in ("a", "b") if kin[n] < 0]
    report.add("A5", Status.FAIL if neg_ab else Status.PASS,
               f"negative {', '.join(neg_ab)}" if neg_ab else "a, b >= 0")

    times, values = cfgmod.dirichlet_samples(config)
    a6 = []
    if np.any(np.diff(times) <= 0):
        a6.append("Dirichlet time samples not strictly increasing")
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        a6.append("Dirichlet data negative or non-finite")
    report.add("A6", Status.FAIL if a6 else Status.PASS,
               "; ".join(a6) or "Dirichlet data continuous, nonnegative (piecewise linear in t)")

    neg_k = [n for n in ("k1", "k2", "k3") if not np.isfinite(kin[n]) or kin[n] < 0]
    report.add("A7", Status.FAIL if neg_k else Status.PASS,
               f"negative {', '.join(neg_k)}" if neg_k else "k1, k2, k3 >= 0")
    return report

import numpy as np
import pytest

from twoscale import config as cfg
from twoscale.errors import MismatchedConfigs, ResolutionTooCoarse
from twoscale.kinetics import RateLaw
from twoscale.micro_ref import (MicroParams, MicroStepper, build_perforated, convergence_study,
                                flood_connected, init_micro, macro_reference, micro_run,
                                period_averages, pixel_effective_tensor)
from twoscale.unit_cell import Interface, Phase, build_geometry

ANNULUS = build_geometry(r_solid=0.2, r_water=0.35)
BRIDGED = build_geometry(r_solid=0.2, r_water=0.35, variant="bridged_water", bridge_width=0.1,
                         bridge_axes=(0,))


def params(**kw):
    base = dict(diffusivity={s: (1.0, 1.0) for s in (1, 2, 3, 4)}, k1=0.0, k2=0.0, a=0.0, b=0.0,
                rate_law=RateLaw(k3=0.0), u3_dirichlet=0.0, dirichlet_faces=frozenset())
    base.update(kw)
    return MicroParams(**base)


def test_annulus_half_period_fractions():
    g = build_perforated(0.5, ANNULUS, 0.5 / 48)
    assert g.n_periods == 2 and g.labels.shape == (96, 96)
    exact = ANNULUS.analytic_measures()
    frac = g.phase_fractions()
    for p, key in zip(Phase, ("vol_s", "vol_w", "vol_a")):
        assert frac[p] == pytest.approx(exact[key], rel=0.03)
    floor = build_perforated(0.5, ANNULUS, 0.5 / 16).phase_fractions()
    for p, key in zip(Phase, ("vol_s", "vol_w", "vol_a")):
        assert abs(floor[p] - exact[key]) <= 0.03


def test_resolution_floor():
    with pytest.raises(ResolutionTooCoarse):
        build_perforated(0.25, ANNULUS, 0.25 / 8)
    with pytest.raises(ValueError):
        build_perforated(0.3, ANNULUS, 0.3 / 16)


def test_bridged_connectivity():
    g = build_perforated(0.25, BRIDGED, 0.25 / 16)
    assert flood_connected(g, Phase.WATER, 0) and flood_connected(g, Phase.AIR, 0)
    assert not flood_connected(g, Phase.WATER, 1)
    a = build_perforated(0.25, ANNULUS, 0.25 / 16)
    assert not flood_connected(a, Phase.WATER, 0)


def test_interface_measure_rescaled():
    g = build_perforated(0.25, ANNULUS, 0.25 / 16)
    # 16 periods, each with an eps-scaled circle of radius 0.2
    assert g.interface_measure(Interface.GAMMA_SW) == pytest.approx(16 * 0.25 * 2 * np.pi * 0.2, rel=1e-12)


def _phase_totals(grid, st):
    V = grid.fine_h ** 2
    return [V * st.u1.sum(), V * st.u2.sum(), V * st.u3.sum(), V * st.u4.sum()]


def test_zero_rates_conserve_each_phase():
    g = build_perforated(0.25, BRIDGED, 0.25 / 16)
    init = {"u10": lambda x: 0.2 + 0.1 * x[:, 0], "u20": lambda x: x[:, 1], "u30": lambda x: x[:, 0] ** 2,
            "u40": 0.3}
    s0 = init_micro(g, init)
    s1 = micro_run(g, params(), s0, 0.01, 0.1)
    for a, b in zip(_phase_totals(g, s0), _phase_totals(g, s1)):
        assert abs(a - b) <= 1e-10 * abs(a)


def test_uptake_scaling_with_eps():
    law = RateLaw(k3=1.0)
    uptakes = []
    for eps in (0.25, 0.125):
        g = build_perforated(eps, ANNULUS, eps / 16)
        s0 = init_micro(g, {"u10": 0.5})
        s1 = MicroStepper(g, params(rate_law=law))(s0, 1e-3)
        uptakes.append(np.sum(eps * g.sw[2] * (s1.u5 - s0.u5)) / 1e-3)
    assert uptakes[1] / uptakes[0] == pytest.approx(1.0, abs=0.1)


def test_gypsum_nondecreasing_and_positive():
    g = build_perforated(0.25, BRIDGED, 0.25 / 16)
    p = params(k1=1.0, k2=0.5, a=0.5, b=1.0, rate_law=RateLaw(k3=2.0), u3_dirichlet=1.0,
               dirichlet_faces=frozenset({"x-"}))
    stepper = MicroStepper(g, p)
    s = init_micro(g, {"u10": 0.3, "u20": 0.1})
    for _ in range(30):
        n = stepper(s, 0.005)
        assert np.all(n.u5 >= s.u5)
        assert min(f.min() for f in (n.u1, n.u2, n.u3, n.u4)) >= -1e-12
        s = n
    avg = period_averages(g, s)
    assert avg[3].shape == (4, 4) and np.all(np.diff(avg[3].mean(axis=1)) < 0)


def test_pixel_tensor_layered_oracle():
    labels = np.full((16, 16), Phase.SOLID, dtype=np.int8)
    labels[:, :6] = Phase.WATER  # stripe along x covering 6/16 of y
    D = pixel_effective_tensor(labels, Phase.WATER, (2.0, 3.0))
    assert D == pytest.approx(np.array([[2.0 * 6 / 16, 0.0], [0.0, 0.0]]), abs=1e-12)
    full = pixel_effective_tensor(np.full((8, 8), Phase.AIR, dtype=np.int8), Phase.AIR, (1.5, 1.5))
    assert full == pytest.approx(1.5 * np.eye(2), abs=1e-12)


def _study_config(**macro):
    c = cfg.load_config(cfg.DEFAULT_CONFIG)
    return c.with_values("micro", t_end=0.05, dt=2e-3, macro_cells=32).with_values("macro", **macro)


def test_convergence_rates_off_bridged():
    c = _study_config().with_values("kinetics", k1=0.0, k2=0.0, a=0.0, b=0.0, k3=0.0)
    table = convergence_study([1 / 2, 1 / 4, 1 / 8], c)
    errs = [v for _, v in table.errors(3)]
    assert errs[0] > errs[1] > errs[2]


def test_convergence_annulus_water_frozen():
    c = (_study_config(u10="0.2 + 0.1*sin(6*x)*cos(5*y)")
         .with_values("geometry", variant="annulus")
         .with_values("kinetics", k1=0.0, k2=0.0, a=0.0, b=0.0, k3=0.0))
    ref = macro_reference(c)
    assert np.allclose(ref.state.u1, macro_reference(c, t_end=1e-3).state.u1, atol=1e-14)
    table = convergence_study([1 / 2, 1 / 4, 1 / 8], c, macro_run=ref)
    errs = [v for _, v in table.errors(1)]
    assert errs[0] > errs[1] > errs[2]


def test_mismatched_inputs():
    c = _study_config()
    ref = macro_reference(c, t_end=0.02)
    with pytest.raises(MismatchedConfigs):
        convergence_study([1 / 2, 1 / 4], c, macro_run=ref)
    with pytest.raises(MismatchedConfigs):
        convergence_study([1 / 3], c.with_values("micro", macro_cells=32))
    with pytest.raises(ValueError):
        convergence_study([1 / 4, 1 / 2], c)

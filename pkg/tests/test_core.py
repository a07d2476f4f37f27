import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from holetransport.core import (
    ConfigError,
    FirstMover,
    Jitter,
    PhysicalParams,
    RampShape,
    RunConfig,
    TrapLayout,
    TrapSchedule,
    interaction_strength,
    load_config,
    potential_value,
    trap_positions,
    tunneling_rate,
)

# 50-digit mpmath evaluation of the closed-form rate (textbook form, no rearrangement)
J_ORACLE = {
    0.5: 0.5147468351699596,
    1.0: 0.378983965779178,
    1.5: 0.17055744617189456,
    2.0: 0.040977357720335368,
    3.0: 0.0004177352921489006,
    5.0: 7.8354332654600829e-11,
    9.0: 6.742866085421377e-35,
}


def mp_rate(d):
    import mpmath as mp

    mp.mp.dps = 60
    d = mp.mpf(d)
    return (-1 + mp.e ** (d * d) * (1 + d * (1 - mp.erf(d)))) / (mp.sqrt(mp.pi) * (mp.e ** (2 * d * d) - 1) / (2 * d))


def test_oracle_table_matches_mpmath():
    for d, v in J_ORACLE.items():
        assert float(mp_rate(d)) == pytest.approx(v, rel=1e-15)


@pytest.mark.parametrize("d", sorted(J_ORACLE))
def test_tunneling_rate_against_extended_precision(d):
    assert tunneling_rate(d) == pytest.approx(J_ORACLE[d], rel=1e-12)


def test_tunneling_rate_regression_at_dmin():
    assert tunneling_rate(1.5) == pytest.approx(0.170557446171895, rel=1e-14)


def test_tunneling_rate_monotone_and_tiny_at_dmax():
    assert tunneling_rate(1.5) > tunneling_rate(3.0) > tunneling_rate(9.0) > 0
    assert tunneling_rate(9.0) < 1e-30
    d = np.linspace(1.0, 12.0, 500)
    assert np.all(np.diff(tunneling_rate(d)) < 0)


def test_tunneling_rate_asymptotic_form():
    for d in (6.0, 8.0, 9.0):
        approx = 2 * d / math.sqrt(math.pi) * math.exp(-d * d) * (1 + d * math.erfc(d))
        assert tunneling_rate(d) == pytest.approx(approx, rel=1e-12)


def test_tunneling_rate_rejects_nonpositive():
    with pytest.raises(ValueError):
        tunneling_rate(0.0)
    with pytest.raises(ValueError):
        tunneling_rate(-1.0)


def _two_well_splitting(d, n=4096, L=40.0):
    """Ground/first-excited splitting of truncated wells centered at -d and +d (finite differences)."""
    from scipy.linalg import eigh_tridiagonal

    x = np.linspace(-L / 2, L / 2, n)
    h = x[1] - x[0]
    v = potential_value(x, TrapLayout((-d, d)))
    diag = 1.0 / h**2 + v
    off = -0.5 / h**2 * np.ones(n - 1)
    w = eigh_tridiagonal(diag, off, select="i", select_range=(0, 1), eigvals_only=True)
    return w[1] - w[0]


@pytest.mark.parametrize("d", [2.0, 3.0, 4.0, 5.0])
def test_tunneling_rate_vs_double_well_splitting(d):
    assert tunneling_rate(d) == pytest.approx(_two_well_splitting(d), rel=0.2)


def test_interaction_strength_values():
    assert interaction_strength(PhysicalParams(24.0, 2.32e-2)) == pytest.approx(1.1136, abs=1e-12)
    assert interaction_strength(PhysicalParams(24.0, -7.98e-2)) == pytest.approx(-3.8304, abs=1e-12)
    assert interaction_strength(PhysicalParams(24.0, 0.0)) == 0.0


def test_potential_examples():
    lay = TrapLayout((-9.0, 0.0, 9.0))
    for c in lay.centers:
        assert potential_value(c, lay) == 0.0
    assert potential_value(4.5, lay) == pytest.approx(10.125)
    assert potential_value(-11.0, lay) == pytest.approx(2.0)


def test_layout_must_increase():
    with pytest.raises(ValueError):
        TrapLayout((0.0, 0.0, 1.0))


def test_positions_at_ends():
    s = TrapSchedule()
    assert trap_positions(s, 0.0).centers == (-9.0, 0.0, 9.0)
    assert trap_positions(s, s.total_time).centers == pytest.approx((-9.0, 0.0, 9.0))


def test_positions_after_first_ramp_linear():
    s = TrapSchedule(ramp_shape=RampShape.LINEAR, t_delay=200.0, t_ramp=150.0)
    c = trap_positions(s, s.t_pre + s.t_ramp).centers
    assert c == pytest.approx((-9.0, 0.0, 1.5))


def test_positions_out_of_range():
    s = TrapSchedule()
    with pytest.raises(ValueError):
        trap_positions(s, -1.0)
    with pytest.raises(ValueError):
        trap_positions(s, s.total_time + 1.0)


def test_total_time_is_derived():
    s = TrapSchedule(t_pre=1, t_delay=2, t_ramp=3, t_hold=4, t_post=5)
    assert s.total_time == 1 + 2 + 2 * 3 + 4 + 5


def test_counterintuitive_order():
    s = TrapSchedule()
    d1, d2 = s.distances(s.t_pre + 0.5 * s.t_delay)
    assert d2 < d1 == s.d_max


def test_jitter_adds_cosine_exactly():
    jit = Jitter(0.3, 0.1)
    s0 = TrapSchedule()
    s = TrapSchedule(jitter=jit)
    t = np.linspace(0, s.total_time, 777)
    a0, b0 = s0.distances(t)
    a, b = s.distances(t)
    np.testing.assert_array_equal(a, a0 + 0.3 * np.cos(0.1 * t))
    np.testing.assert_array_equal(b, b0 + 0.3 * np.cos(0.1 * t))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.sampled_from(list(RampShape)), st.floats(-0.5, 0.5))
def test_distance_bounds(u, shape, amp):
    s = TrapSchedule(ramp_shape=shape, jitter=Jitter(amp, 0.37))
    d1, d2 = s.distances(u * s.total_time)
    for d in (d1, d2):
        assert s.d_min - abs(amp) - 1e-12 <= d <= s.d_max + abs(amp) + 1e-12


@pytest.mark.parametrize("shape", list(RampShape))
def test_schedule_continuity(shape):
    s = TrapSchedule(ramp_shape=shape)
    t = np.linspace(0, s.total_time, 200001)
    d1, d2 = s.distances(t)
    step = t[1] - t[0]
    slope = (s.d_max - s.d_min) / s.t_ramp * (math.pi / 2 if shape is RampShape.SIN_SQUARED else 1.0)
    assert np.max(np.abs(np.diff(d1))) <= slope * step * 1.001
    assert np.max(np.abs(np.diff(d2))) <= slope * step * 1.001
    if shape is RampShape.SIN_SQUARED:
        # C1: the finite-difference velocity itself has no jumps
        v = np.diff(d2) / step
        assert np.max(np.abs(np.diff(v))) < 1e-3


def test_mirrored_schedule_reflects_centers():
    s = TrapSchedule()
    m = s.mirrored()
    assert m.first_mover is FirstMover.LEFT
    for t in np.linspace(0, s.total_time, 37):
        assert trap_positions(m, t).centers == pytest.approx(trap_positions(s, t).mirrored().centers)


def test_invalid_schedule():
    with pytest.raises(ConfigError):
        TrapSchedule(d_min=10.0)
    with pytest.raises(ConfigError):
        TrapSchedule(t_hold=-1.0)


def test_config_roundtrip(tmp_path):
    cfg = RunConfig().with_overrides(alpha_as=0.0232, symmetry="bosonic", jitter={"A_s": 0.3, "omega_s": 0.1})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    back = load_config(p)
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()
    assert back.schedule.jitter == Jitter(0.3, 0.1)


@pytest.mark.parametrize("bad,key", [({"d_min": "x"}, "d_min"), ({"symmetry": "anyonic"}, "symmetry"),
                                     ({"bogus": 1}, "bogus"), ({"hole_site": 4}, "hole_site"),
                                     ({"grid": {"points_per_axis": 100}}, "grid")])
def test_config_errors_name_key(bad, key):
    with pytest.raises(ConfigError) as e:
        RunConfig.from_dict(bad)
    assert e.value.key == key

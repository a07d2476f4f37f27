import math

import numpy as np
import pytest

from holetransport import bohm
from holetransport.core import PhysicalParams, Symmetry, TrapLayout, TrapSchedule, trap_positions
from holetransport.tdse import FrameStore, FrameWriter, Grid2D, Wavefunction2D, evolve, localized_hole_state

FERMI, BOSE = Symmetry.FERMIONIC, Symmetry.BOSONIC
G96 = Grid2D(-12.0, 12.0, 96, 0.01, 50)
SMALL = TrapSchedule(d_max=6.0, d_min=1.5, t_pre=5, t_delay=10, t_ramp=20, t_hold=5, t_post=5)


def write_frames(path, frames, grid, frame_dt, sym):
    with FrameWriter(path, grid, frame_dt, sym) as w:
        for f in frames:
            w.write(f)
    return FrameStore.open(path)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    path = tmp_path_factory.mktemp("bohm") / "small.qhwf"
    psi0 = localized_hole_state(1, trap_positions(SMALL, 0.0), FERMI, G96, check_separation=False)
    _, frames, _ = evolve(psi0, SMALL, PhysicalParams(24.0, 0.0, FERMI), G96, frames_path=path)
    return frames


@pytest.fixture(scope="module")
def ensemble(run):
    init = bohm.sample_initial(run.wavefunction(0), 4000, seed=3)
    return bohm.integrate_trajectories(run, init, seed=3)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_uniform_box_sampling_mean():
    g = Grid2D(-8.0, 8.0, 64, 0.01, 1)
    amp = np.zeros((64, 64), complex)
    box = (g.x >= -2) & (g.x <= 4)
    amp[np.ix_(box, box)] = 1.0
    psi = Wavefunction2D(amp / math.sqrt(np.sum(np.abs(amp) ** 2) * g.dx**2), g, BOSE)
    pts = bohm.sample_initial(psi, 10_000, seed=1)
    # bilinear density ramps down over one cell outside the nodes: support is [-2 - dx, 4 + dx]
    lo, hi = -2.0 - g.dx, 4.0 + g.dx
    sigma = (hi - lo) / math.sqrt(12) / math.sqrt(len(pts))
    for axis in (0, 1):
        assert abs(pts[:, axis].mean() - 1.0) < 3 * sigma


def test_fermionic_samples_avoid_diagonal():
    g = Grid2D(points_per_axis=128)
    psi = localized_hole_state(1, TrapLayout((-9.0, 0.0, 9.0)), FERMI, g)
    pts = bohm.sample_initial(psi, 5000, seed=2)
    assert np.sum(np.abs(pts[:, 0] - pts[:, 1]) < g.dx) == 0


def test_sampling_deterministic():
    g = Grid2D(points_per_axis=64)
    psi = localized_hole_state(1, TrapLayout((-9.0, 0.0, 9.0)), BOSE, g)
    a = bohm.sample_initial(psi, 500, seed=11)
    b = bohm.sample_initial(psi, 500, seed=11)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, bohm.sample_initial(psi, 500, seed=12))


def test_sampler_failure_on_spike():
    g = Grid2D(points_per_axis=256)
    amp = np.zeros((256, 256), complex)
    amp[100, 140] = 1.0 / g.dx
    with pytest.raises(bohm.SamplerFailure):
        bohm.sample_initial(Wavefunction2D(amp, g, BOSE), 10, seed=0)


# ---------------------------------------------------------------------------
# velocity field
# ---------------------------------------------------------------------------

def test_real_state_has_zero_velocity():
    g = Grid2D(points_per_axis=128)
    psi = localized_hole_state(1, TrapLayout((-9.0, 0.0, 9.0)), BOSE, g)
    v = bohm.velocity_field(psi, [[0.1, 9.2], [9.0, 0.0]])
    assert np.all(v == 0.0)


def test_plane_wave_velocity():
    g = Grid2D(points_per_axis=256)
    k1, k2 = 1.3, -0.7
    x = g.x
    gauss = np.exp(-0.5 * ((x[:, None] - 1.0) ** 2 + (x[None, :] + 2.0) ** 2))
    amp = gauss * np.exp(1j * (k1 * x[:, None] + k2 * x[None, :]))
    psi = Wavefunction2D(amp, g, BOSE)
    v = bohm.velocity_field(psi, [1.0, -2.0])
    # centered differences at the envelope peak: exp(-dx^2/2) sin(k dx)/dx, O(dx^2) from k
    damp = math.exp(-0.5 * g.dx**2)
    assert v[0] == pytest.approx(damp * math.sin(k1 * g.dx) / g.dx, rel=1e-10)
    assert v[1] == pytest.approx(damp * math.sin(k2 * g.dx) / g.dx, rel=1e-10)
    np.testing.assert_allclose(v, [k1, k2], rtol=0.02)


def test_exchange_covariance(run):
    psi = run.wavefunction(run.count // 2)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-6, 6, size=(400, 2))
    rho = bohm.bilinear(psi.density(), psi.grid, pts)
    pts = pts[rho > 1e-6]
    v = bohm.velocity_field(psi, pts)
    vs = bohm.velocity_field(psi, pts[:, ::-1])
    np.testing.assert_allclose(v[:, 0], vs[:, 1], atol=1e-9)
    np.testing.assert_allclose(v[:, 1], vs[:, 0], atol=1e-9)


def test_low_density_signal():
    g = Grid2D(points_per_axis=128)
    psi = localized_hole_state(1, TrapLayout((-9.0, 0.0, 9.0)), FERMI, g)
    with pytest.raises(bohm.LowDensity):
        bohm.velocity_field(psi, [-9.0, -9.0])


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def test_static_frames_leave_positions(tmp_path):
    g = Grid2D(-12.0, 12.0, 96, 0.01, 1)
    psi = localized_hole_state(1, TrapLayout((-9.0, 0.0, 9.0)), FERMI, g)
    fs = write_frames(tmp_path / "s.qhwf", [psi.amplitudes] * 6, g, 0.5, FERMI)
    init = bohm.sample_initial(psi, 300, seed=4)
    ens = bohm.integrate_trajectories(fs, init)
    assert np.max(np.abs(ens.positions[:, -1] - init)) <= 1e-6
    assert np.all(ens.flags == bohm.Flag.OK)


def test_frame_spacing_precondition(tmp_path):
    g = Grid2D(-12.0, 12.0, 96, 0.01, 1)
    psi = localized_hole_state(1, TrapLayout((-9.0, 0.0, 9.0)), FERMI, g)
    fs = write_frames(tmp_path / "s.qhwf", [psi.amplitudes] * 3, g, 1.0, FERMI)
    with pytest.raises(ValueError):
        bohm.integrate_trajectories(fs, np.zeros((1, 2)))


def test_left_domain_flag_and_warning(tmp_path):
    g = Grid2D(-8.0, 8.0, 64, 0.01, 1)
    amp = np.exp(1j * 2.0 * g.x)[:, None] * np.ones(64)[None, :] / 16.0
    fs = write_frames(tmp_path / "pw.qhwf", [amp] * 5, g, 0.5, BOSE)
    init = np.array([[6.5, 0.0], [-6.0, 1.0], [0.0, 0.0]])
    with pytest.warns(RuntimeWarning):
        ens = bohm.integrate_trajectories(fs, init)
    assert list(ens.flags) == [bohm.Flag.LEFT_DOMAIN, bohm.Flag.OK, bohm.Flag.OK]
    assert ens.positions[0, -1, 0] == pytest.approx(g.x_max - g.dx)
    # moving at v = sin(2 dx)/dx for 2 time units
    v = math.sin(2 * g.dx) / g.dx
    assert ens.positions[1, -1, 0] == pytest.approx(-6.0 + 2 * v, abs=1e-9)


def test_substeps_bound_displacement(ensemble):
    g = G96
    steps = np.abs(np.diff(ensemble.positions, axis=1)).max(axis=2)
    # per frame interval the displacement is at most 0.5 dx per substep
    assert np.all(steps <= 0.5 * g.dx * ensemble.substeps[:, None] + 1e-12)


def test_equivariance_every_frame(run, ensemble):
    for k in range(0, run.count, 10):
        dens = run.wavefunction(k).density() * G96.dx**2
        tv = bohm.coarse_tv(ensemble.positions[:, k], dens, G96, cells=8)
        assert tv <= 0.08, (k, tv)


def test_no_equal_time_crossings(ensemble):
    for k in range(0, len(ensemble.times), 10):
        assert bohm.min_pair_distance(ensemble, k) > 1e-3 * G96.dx


def test_integration_deterministic(run):
    init = bohm.sample_initial(run.wavefunction(0), 200, seed=9)
    a = bohm.integrate_trajectories(run, init, seed=9)
    b = bohm.integrate_trajectories(run, init.copy(), seed=9)
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.flags, b.flags)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def test_statistics_record(run, ensemble, tmp_path):
    stats = bohm.ensemble_statistics(ensemble, run.wavefunction(run.count - 1))
    assert stats["count"] == 4000
    assert 0 <= stats["tv_distance"] <= 0.08
    assert stats["max_speeds"].shape == (4000,)
    assert sum(stats["flag_counts"].values()) == 4000
    assert stats["terminated_in_nodes"] == 0
    bohm.statistics_json(stats, tmp_path / "s.json")
    ensemble.to_csv(tmp_path / "t.csv", stride=20)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "trajectory_id,t,x1,x2,speed,flag"


def test_empty_ensemble_rejected(run):
    ens = bohm.TrajectoryEnsemble(0, np.zeros(2), np.zeros((0, 2, 2)), np.zeros((0, 2)), np.zeros(0, np.int8))
    with pytest.raises(ValueError):
        bohm.ensemble_statistics(ens, run.wavefunction(0))


def _static_tv(psi, count, seed):
    pts = bohm.sample_initial(psi, count, seed)
    return bohm.coarse_tv(pts, psi.density() * psi.grid.dx**2, psi.grid, cells=8)


def test_same_state_baseline_tv():
    g = Grid2D(points_per_axis=128)
    psi = localized_hole_state(2, TrapLayout((-9.0, 0.0, 9.0)), BOSE, g)
    assert _static_tv(psi, 10_000, 5) <= 0.03


def test_tv_converges_with_count():
    g = Grid2D(points_per_axis=128)
    psi = localized_hole_state(1, TrapLayout((-9.0, 0.0, 9.0)), FERMI, g)
    small = np.median([_static_tv(psi, 2000, s) for s in range(5)])
    large = np.median([_static_tv(psi, 4000, s + 100) for s in range(5)])
    assert large <= small

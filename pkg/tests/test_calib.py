import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import rel_err
from mimosar import calib as cb
from mimosar import geometry as geo
from mimosar import rangeproc as rp
from mimosar import wavesim as ws
from mimosar.errors import CalibrationError, ConfigError, DomainError, FormatError, StageError

CHIRP = ws.ChirpConfig.from_center(78.8e9, 3.5997e9, 40e-6, 8e6, 320, c=3e8)
D = 1.9e-3
ELEMENTS = geo.virtual_elements(
    geo.AntennaLayout(((0.0, 0.0), (0.0, 4 * D)), tuple((0.0, i * D / 2) for i in range(8))))
SCAN = geo.scan_positions(1, 1e-3)
BIN = CHIRP.range_bin(rp.default_nfft(320))
# reflector centred on a range bin of the default transform
REFL = (0.0, 0.0, round(8.95 / BIN) * BIN)


def _clean(refl=REFL):
    return ws.simulate_beat(ws.Scene.point(*refl), ELEMENTS, SCAN, CHIRP)


CLEAN = _clean()


def _peak_values(cube):
    p = rp.range_compress(cube).profiles[:, :, 0]
    return p[np.argmax(np.abs(p), axis=0), np.arange(p.shape[1])]


def _gauge_error(cal, clean, ref=0):
    a = _peak_values(cal)
    b = _peak_values(clean)
    return rel_err(a / a[ref], b / b[ref])


def test_error_free_gives_identity():
    profile, _, report = cb.calibrate_from_cube(CLEAN, reflector=REFL)
    assert np.max(np.abs(profile.corrections - 1)) < 1e-9
    # residual shifts are the true one-way path offsets of the bistatic pairs
    paths = cb.reflector_paths(ELEMENTS, REFL)
    expected = -(paths - paths[0]) / 2 / BIN
    assert np.max(np.abs(report.shifts - expected)) < 1e-5
    # without a reflector model the corrections absorb the near-field curvature
    near = (0.0, 0.0, 400 * BIN)
    prof, _, _ = cb.calibrate_from_cube(_clean(near))
    paths = cb.reflector_paths(ELEMENTS, near)
    assert np.max(np.abs(prof.corrections - np.exp(1j * CHIRP.k_c * (paths - paths[0])))) < 1e-6


def test_known_channel_error_recovered():
    g = np.ones(16, complex)
    g[3] = 0.5 * np.exp(0.7j)
    dirty = ws.inject_channel_errors(CLEAN, ws.ChannelError(g, np.zeros(16)))
    profile, _, _ = cb.calibrate_from_cube(dirty, reflector=REFL)
    assert abs(profile.corrections[3] - 2 * np.exp(-0.7j)) < 1e-6
    assert profile.gain[3] == pytest.approx(2.0, rel=1e-6)
    others = np.delete(profile.corrections, 3)
    assert np.max(np.abs(others - 1)) < 1e-6


@given(st.integers(0, 2**32 - 1), st.integers(0, 15))
def test_calibration_round_trip(seed, ref):
    rng = np.random.default_rng(seed)
    g = rng.uniform(0.25, 4.0, 16) * np.exp(1j * rng.uniform(-np.pi, np.pi, 16))
    r = rng.uniform(-9.9, 9.9, 16) * BIN
    dirty = ws.inject_channel_errors(CLEAN, ws.ChannelError(g, r))
    profile, _, _ = cb.calibrate_from_cube(dirty, reference=ref, reflector=REFL)
    cal = cb.apply_calibration(dirty, profile)
    assert cal.stage == ws.Stage.CALIBRATED
    assert _gauge_error(cal, CLEAN, ref) < 1e-5


def test_gauge_invariance():
    rng = np.random.default_rng(4)
    err = ws.ChannelError.random(16, rng, range_max=3 * BIN)
    dirty = ws.inject_channel_errors(CLEAN, err)
    a, _, _ = cb.calibrate_from_cube(dirty, reference=0, reflector=REFL)
    b, _, _ = cb.calibrate_from_cube(dirty, reference=7, reflector=REFL)
    ratio = a.corrections / b.corrections
    # common complex factor: one rotation and one scale for all channels
    assert np.max(np.abs(ratio / ratio[0] - 1)) < 1e-6
    ca = _peak_values(cb.apply_calibration(dirty, a))
    cb_ = _peak_values(cb.apply_calibration(dirty, b))
    assert rel_err(np.abs(ca) / np.abs(ca).max(), np.abs(cb_) / np.abs(cb_).max()) < 1e-6


def test_identity_profile_unchanged():
    ident = cb.CalibrationProfile.identity(16, 2048)
    out = cb.apply_calibration(CLEAN, ident)
    assert np.array_equal(out.samples, CLEAN.samples)
    prof = rp.range_compress(CLEAN)
    assert np.array_equal(cb.apply_calibration(prof, ident).profiles, prof.profiles)


def test_profiles_and_cube_paths_agree():
    rng = np.random.default_rng(8)
    dirty = ws.inject_channel_errors(CLEAN, ws.ChannelError.random(16, rng, range_max=4 * BIN))
    profile, aligned, _ = cb.calibrate_from_cube(dirty, reflector=REFL)
    via_cube = rp.range_compress(cb.apply_calibration(dirty, profile)).profiles
    via_aligned = cb.apply_calibration(aligned, profile).profiles
    via_prof = cb.apply_calibration(rp.range_compress(dirty), profile).profiles
    assert rel_err(via_aligned, via_cube) < 1e-9
    assert rel_err(via_prof, via_cube) < 1e-9


def test_double_application_forbidden():
    g = np.ones(16, complex)
    g[2] = 1.5j
    dirty = ws.inject_channel_errors(CLEAN, ws.ChannelError(g, np.zeros(16)))
    profile, _, _ = cb.calibrate_from_cube(dirty, reflector=REFL)
    once = cb.apply_calibration(dirty, profile)
    with pytest.raises(StageError):
        cb.apply_calibration(once, profile)
    with pytest.raises(ConfigError):
        cb.apply_calibration(dirty, cb.CalibrationProfile.identity(3))


def test_estimate_requires_aligned_stage():
    with pytest.raises(StageError):
        cb.estimate_phase_gain(rp.range_compress(CLEAN))


def test_weak_channels_reported():
    samples = np.array(CLEAN.samples)
    rng = np.random.default_rng(0)
    samples[:, 4] = rng.normal(size=samples[:, 4].shape) * 1e-3
    samples[:, 9] = 0
    prof = rp.range_compress(CLEAN.evolve(samples))
    aligned = prof.evolve(prof.profiles, ws.Stage.ALIGNED)
    with pytest.raises(CalibrationError) as exc:
        cb.estimate_phase_gain(aligned)
    assert exc.value.channels == (4, 9)


def test_profile_validation():
    with pytest.raises(DomainError):
        cb.CalibrationProfile([1.0, -1.0], [1, 1], [0, 0], 8)
    with pytest.raises(DomainError):
        cb.CalibrationProfile([1.0, 1.0], [1, 0.5], [0, 0], 8)
    with pytest.raises(ConfigError):
        cb.CalibrationProfile([1.0], [1, 1], [0, 0], 8)
    with pytest.raises(ConfigError):
        cb.CalibrationProfile([1.0, 1.0], [1, 1], [0, 0], 8, reference=2)
    with pytest.raises(ConfigError):
        cb.CalibrationProfile.identity(2).with_weights([1, 2, 3])
    with pytest.raises(DomainError):
        cb.CalibrationProfile.from_corrections([1, 0], [0, 0], 8)


def test_profile_file_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    dirty = ws.inject_channel_errors(CLEAN, ws.ChannelError.random(16, rng, range_max=2 * BIN))
    profile = cb.calibrate(dirty, reflector=REFL)
    assert profile.weights is not None
    text = cb.format_profile(profile)
    back = cb.parse_profile(text)
    for name in ("gain", "phase", "shifts", "weights"):
        assert np.array_equal(getattr(back, name), getattr(profile, name))
    assert (back.n_fft, back.reference, back.reflector, back.k_c) == \
        (profile.n_fft, profile.reference, profile.reflector, profile.k_c)
    p = tmp_path / "cal.txt"
    cb.write_profile(p, back)
    assert p.read_text() == text
    assert cb.format_profile(cb.read_profile(p)) == text


@pytest.mark.parametrize("text", [
    "",
    "something else 1",
    "mimosar-calibration-profile 9",
    "mimosar-calibration-profile 1\nchannels 2\nreference 0\nreflector none\nk_c 1.0\nn_fft 8\n0 1 0 1 0\n",
    "mimosar-calibration-profile 1\nchannels 1\nreference 0\nreflector none\nk_c 1.0\nn_fft 8\n0 1 0 x 0\n",
])
def test_profile_parse_errors(text):
    with pytest.raises(FormatError):
        cb.parse_profile(text)


def test_manifold_entries():
    k_c = CHIRP.k_c
    lam = CHIRP.wavelength
    A = cb.build_manifold([0.0, lam / 4], k_c, [0.5])
    assert np.angle(A.matrix[1, 0]) == pytest.approx(-math.pi / 2, abs=1e-9)
    single = cb.build_manifold([0.0], k_c)
    assert np.all(single.matrix == 1)
    y = np.random.default_rng(0).uniform(-0.1, 0.1, 20)
    M = cb.build_manifold(y, k_c)
    assert M.shape == (20, 181)
    assert np.all(M.matrix[:, 90] == 1)
    assert np.allclose(np.abs(M.matrix), 1, atol=1e-15)
    with pytest.raises(DomainError):
        cb.build_manifold(y, k_c, [1.01])
    with pytest.raises(DomainError):
        cb.build_manifold([], k_c)
    with pytest.raises(DomainError):
        cb.build_manifold(y, 0.0)


def test_ideal_snapshot_gives_unit_weights():
    y = np.arange(16) * CHIRP.wavelength / 4
    A = cb.build_manifold(y, CHIRP.k_c)
    w = cb.residual_weights(np.ones(16), A)
    assert np.max(np.abs(w - 1)) < 1e-9
    assert cb.weights_objective(np.ones(16), w, A) < 1e-9


@given(st.integers(2, 32), st.integers(0, 2**32 - 1))
def test_random_phase_inverse(n, seed):
    rng = np.random.default_rng(seed)
    y = np.sort(rng.uniform(-0.02, 0.02, n))
    A = cb.build_manifold(y, CHIRP.k_c)
    phi = rng.uniform(-np.pi, np.pi, n)
    s = np.exp(1j * phi)
    w = cb.residual_weights(s, A)
    assert cb.weights_objective(s, w, A) < 1e-9
    assert np.max(np.abs(w - np.exp(-1j * phi))) < 1e-6


@given(st.integers(0, 2**32 - 1))
def test_solution_is_global_minimum(seed):
    rng = np.random.default_rng(seed)
    n = 12
    y = np.arange(n) * CHIRP.wavelength / 4
    # fewer directions than elements: objective is not driven to zero
    A = cb.build_manifold(y, CHIRP.k_c, np.linspace(-0.3, 0.3, 7))
    s = rng.uniform(0.5, 2.0, n) * np.exp(1j * rng.uniform(-np.pi, np.pi, n))
    w = cb.residual_weights(s, A)
    best = cb.weights_objective(s, w, A)
    assert best <= cb.weights_objective(s, np.ones(n), A) + 1e-12
    for l in range(n):
        for d in (1e-3, -1e-3, 1e-3j, -1e-3j):
            wp = w.copy()
            wp[l] += d
            assert cb.weights_objective(s, wp, A) >= best - 1e-12


@pytest.mark.filterwarnings("ignore:Solution may be inaccurate")
def test_matches_convex_solver():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(11)
    n = 10
    y = np.arange(n) * CHIRP.wavelength / 4
    A = cb.build_manifold(y, CHIRP.k_c, np.linspace(-0.4, 0.4, 15))
    s = rng.uniform(0.5, 2.0, n) * np.exp(1j * rng.uniform(-np.pi, np.pi, n))
    w_var = cp.Variable(n, complex=True)
    M = A.matrix
    problem = cp.Problem(cp.Minimize(cp.norm(M.T @ cp.multiply(s, w_var) - M.sum(axis=0), 2)))
    problem.solve(solver="CLARABEL")
    ours = cb.weights_objective(s, cb.residual_weights(s, A), A)
    assert ours <= problem.value + 1e-6
    assert ours == pytest.approx(problem.value, abs=1e-5)


def test_zero_snapshot_entries():
    y = np.arange(6) * CHIRP.wavelength / 4
    A = cb.build_manifold(y, CHIRP.k_c)
    s = np.ones(6, complex)
    s[2] = 0
    with pytest.warns(RuntimeWarning, match=r"\[2\]"):
        w = cb.residual_weights(s, A)
    assert w[2] == 1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert np.all(cb.residual_weights(np.zeros(6), A) == 1)
    assert np.all(cb.ipr_after_weights(np.zeros(6), w, A) == 0)


def test_degenerate_manifold():
    with pytest.raises(DomainError):
        cb.residual_weights(np.ones(3), np.zeros((3, 5)))
    with pytest.raises(ConfigError):
        cb.residual_weights(np.ones(4), np.ones((3, 5)))


def _pslr(resp):
    m = np.abs(resp) / np.abs(resp).max()
    i = int(np.argmax(m))
    lo = i
    while lo > 0 and m[lo - 1] < m[lo]:
        lo -= 1
    hi = i
    while hi < len(m) - 1 and m[hi + 1] < m[hi]:
        hi += 1
    return 20 * np.log10(np.r_[m[:lo + 1], m[hi:]].max())


def test_weights_restore_array_factor():
    n = 24
    y = np.arange(n) * CHIRP.wavelength / 4
    fine = cb.build_manifold(y, CHIRP.k_c, np.linspace(-1, 1, 4001))
    ideal = _pslr(cb.ipr_after_weights(np.ones(n), np.ones(n), fine))
    rng = np.random.default_rng(2)
    s = rng.uniform(0.8, 1.25, n) * np.exp(1j * rng.normal(scale=0.5, size=n))
    w = cb.residual_weights(s, cb.build_manifold(y, CHIRP.k_c))
    assert abs(_pslr(cb.ipr_after_weights(s, w, fine)) - ideal) < 1.0
    assert np.allclose(cb.ipr_after_weights(np.ones(n), np.ones(n), fine), fine.matrix.sum(axis=0))


def test_element_snapshot_is_flat_after_calibration():
    rng = np.random.default_rng(6)
    dirty = ws.inject_channel_errors(CLEAN, ws.ChannelError.random(16, rng, range_max=3 * BIN))
    profile, aligned, _ = cb.calibrate_from_cube(dirty, reflector=REFL)
    s = cb.element_snapshot(cb.apply_calibration(aligned, profile), REFL,
                            profile.metadata["range_bin"], 0, profile.metadata["azimuth"])
    assert np.max(np.abs(s - 1)) < 1e-6
    full = cb.calibrate(dirty, reflector=REFL)
    assert np.max(np.abs(full.weights - 1)) < 1e-5

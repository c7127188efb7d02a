import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccnn.signals import (
    AliasingError,
    ChirpSpec,
    NoiseSpec,
    Signal,
    TimeGrid,
    add_noise,
    compose_scene,
    kernel_template,
    make_chirp,
    matched_filter_response,
)


def test_grid_nodes_are_exact():
    g = TimeGrid(0.25, 0.001, 11)
    for i in range(g.n):
        assert g.nodes()[i] == 0.25 + i * 0.001
        assert g.node(i) == 0.25 + i * 0.001


@pytest.mark.parametrize("dt,n", [(0.0, 5), (-1.0, 5), (0.1, 1)])
def test_grid_rejects_bad_shapes(dt, n):
    with pytest.raises(ValueError):
        TimeGrid(0.0, dt, n)


def test_signal_rejects_nonfinite_and_wrong_length():
    g = TimeGrid(0.0, 0.1, 3)
    with pytest.raises(ValueError):
        Signal(g, [0.0, np.nan, 1.0])
    with pytest.raises(ValueError):
        Signal(g, [0.0, 1.0])


def test_zero_amplitude_chirp_is_silent():
    g = TimeGrid(0.0, 1e-3, 500)
    sig = make_chirp(ChirpSpec(5, 20, 0.2, amplitude=0.0, onset=0.1), g)
    assert np.all(sig.values == 0)


def test_chirp_starts_at_zero_phase_and_is_zero_outside():
    g = TimeGrid(0.0, 1e-3, 1000)
    spec = ChirpSpec(5, 20, 0.2, amplitude=1.5, onset=0.1)
    v = make_chirp(spec, g).values
    t = g.nodes()
    onset_idx = int(round(0.1 / 1e-3))
    assert v[onset_idx] == pytest.approx(0.0, abs=1e-12)
    outside = (t < spec.onset - 1e-12) | (t > spec.end + 1e-12)
    assert np.all(v[outside] == 0)


def test_constant_frequency_zero_crossings():
    f0, dt = 10.0, 1e-3
    g = TimeGrid(0.0, dt, 1001)
    v = make_chirp(ChirpSpec(f0, f0, 1.0, onset=0.0), g).values
    # brute-force scan of strict sign changes, skipping exact zeros
    nz = np.flatnonzero(v != 0)
    signs = np.sign(v[nz])
    flips = nz[1:][signs[1:] != signs[:-1]]
    times = g.nodes()[flips]
    gaps = np.diff(times)
    assert len(gaps) >= 15
    assert np.all(np.abs(gaps - 1 / (2 * f0)) <= dt + 1e-12)


def test_undersampled_chirp_raises():
    with pytest.raises(AliasingError):
        make_chirp(ChirpSpec(5, 600, 0.2), TimeGrid(0.0, 1e-3, 100))
    # down-sweeps alias too
    with pytest.raises(AliasingError):
        make_chirp(ChirpSpec(600, 5, 0.2), TimeGrid(0.0, 1e-3, 100))


@given(st.floats(0.0, 5.0), st.floats(0.0, 40.0), st.floats(0.0, 40.0), st.floats(0.05, 0.5))
@settings(max_examples=40, deadline=None)
def test_chirp_is_linear_in_amplitude(a, fs, fe, dur):
    g = TimeGrid(0.0, 1e-3, 800)
    one = make_chirp(ChirpSpec(fs, fe, dur, amplitude=a, onset=0.1), g).values
    two = make_chirp(ChirpSpec(fs, fe, dur, amplitude=2 * a, onset=0.1), g).values
    np.testing.assert_allclose(two, 2 * one, rtol=0, atol=1e-12)


def test_zero_noise_is_identity():
    g = TimeGrid(0.0, 1e-3, 50)
    s = make_chirp(ChirpSpec(5, 10, 0.03, onset=0.01), g)
    out = add_noise(s, NoiseSpec(0.0, 7))
    assert np.array_equal(out.values, s.values)


def test_noise_is_deterministic_in_seed():
    g = TimeGrid(0.0, 1e-3, 200)
    s = Signal(g, np.zeros(g.n))
    a = add_noise(s, NoiseSpec(0.7, 3)).values
    b = add_noise(s, NoiseSpec(0.7, 3)).values
    c = add_noise(s, NoiseSpec(0.7, 4)).values
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_noise_moments():
    n = 100_000
    g = TimeGrid(0.0, 1e-3, n)
    base = np.linspace(-1, 1, n)
    out = add_noise(Signal(g, base), NoiseSpec(1.0, 11)).values
    d = out - base
    assert abs(d.mean()) < 4 / np.sqrt(n)
    assert abs(d.var() - 1.0) < 0.05


def test_empty_scene_is_all_zero():
    g = TimeGrid(0.0, 1e-3, 300)
    sc = compose_scene([], NoiseSpec(0.0, 0), g)
    assert np.all(sc.input.values == 0)
    assert np.all(sc.target.values == 0)


def test_single_chirp_scene_matches_make_chirp():
    g = TimeGrid(0.0, 1e-3, 600)
    spec = ChirpSpec(5, 15, 0.2, onset=0.2)
    sc = compose_scene([spec], NoiseSpec(0.0, 0), g)
    assert np.array_equal(sc.input.values, make_chirp(spec, g).values)


def test_two_disjoint_chirps_give_two_plateaus():
    g = TimeGrid(0.0, 1e-3, 2000)
    sc = compose_scene([ChirpSpec(5, 15, 0.2, onset=0.3), ChirpSpec(10, 20, 0.2, onset=1.2)],
                       NoiseSpec(0.5, 1), g)
    above = sc.target.values > 0.5
    # run-length scan
    runs = 0
    prev = False
    for flag in above:
        if flag and not prev:
            runs += 1
        prev = flag
    assert runs == 2
    assert sc.target.values.max() <= 1.0 + 1e-12
    assert sc.target.values.min() >= 0.0


def _template_grid(dt=1e-3, T=0.2):
    return TimeGrid(0.0, dt, int(round(T / dt)) + 1)


def test_matched_filter_on_zero_input():
    g = TimeGrid(0.0, 1e-3, 500)
    tmpl = kernel_template(ChirpSpec(5, 15, 0.2), _template_grid())
    assert matched_filter_response(Signal(g, np.zeros(g.n)), tmpl, 0.3) == 0.0


def test_matched_filter_self_correlation_is_energy():
    dt = 1e-3
    g = TimeGrid(0.0, dt, 600)
    tmpl = kernel_template(ChirpSpec(5, 15, 0.2), _template_grid())
    t_align = 0.4
    i_align = int(round(t_align / dt))
    x = np.zeros(g.n)
    x[i_align - np.arange(tmpl.grid.n)] = tmpl.values
    got = matched_filter_response(Signal(g, x), tmpl, g.node(i_align))
    assert got == pytest.approx(np.sum(tmpl.values ** 2) * dt, rel=1e-12)


def test_matched_filter_alignment_out_of_range():
    g = TimeGrid(0.0, 1e-3, 500)
    tmpl = kernel_template(ChirpSpec(5, 15, 0.2), _template_grid())
    with pytest.raises(ValueError):
        matched_filter_response(Signal(g, np.zeros(g.n)), tmpl, 0.1)
    with pytest.raises(ValueError):
        matched_filter_response(Signal(g, np.zeros(g.n)), tmpl, 0.6)


def test_matched_filter_beats_off_chirp_alignments(rng):
    dt = 1e-3
    g = TimeGrid(0.0, dt, 3001)
    spec = ChirpSpec(10, 20, 0.2, onset=1.3)
    sc = compose_scene([spec], NoiseSpec(0.5, 5), g)
    tmpl = kernel_template(spec, _template_grid())
    at_end = matched_filter_response(sc.input, tmpl, spec.end)
    candidates = g.nodes()[(g.nodes() >= 0.2) & (np.abs(g.nodes() - spec.end) > spec.duration)]
    for t in rng.choice(candidates, 20, replace=False):
        assert at_end > matched_filter_response(sc.input, tmpl, t)


def test_noise_free_argmax_is_chirp_end():
    dt = 1e-3
    g = TimeGrid(0.0, dt, 1500)
    spec = ChirpSpec(7, 23, 0.2, onset=0.6234)
    sc = compose_scene([spec], NoiseSpec(0.0, 0), g)
    tmpl = kernel_template(spec, _template_grid())
    aligns = g.nodes()[200:]
    resp = [matched_filter_response(sc.input, tmpl, t) for t in aligns]
    assert abs(aligns[int(np.argmax(resp))] - spec.end) <= dt


@given(st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=30, deadline=None)
def test_matched_filter_is_bilinear(a, b):
    r = np.random.default_rng(0)
    g = TimeGrid(0.0, 1e-3, 400)
    tg = _template_grid(T=0.05)
    x1, x2 = r.normal(size=g.n), r.normal(size=g.n)
    t1, t2 = r.normal(size=tg.n), r.normal(size=tg.n)
    mf = lambda x, t: matched_filter_response(Signal(g, x), Signal(tg, t), 0.3)
    lhs = mf(a * x1 + b * x2, t1)
    assert lhs == pytest.approx(a * mf(x1, t1) + b * mf(x2, t1), abs=1e-9)
    lhs = mf(x1, a * t1 + b * t2)
    assert lhs == pytest.approx(a * mf(x1, t1) + b * mf(x1, t2), abs=1e-9)


def test_template_of_silent_chirp_is_zero():
    tmpl = kernel_template(ChirpSpec(5, 15, 0.2, amplitude=0.0), _template_grid())
    assert np.all(tmpl.values == 0)


@pytest.mark.parametrize("spec", [ChirpSpec(5, 15, 0.2), ChirpSpec(25, 15, 0.2, 3.0, 1.0),
                                  ChirpSpec(10, 10, 0.3, 0.1, 0.0)])
def test_template_has_unit_norm(spec):
    assert np.linalg.norm(kernel_template(spec, _template_grid()).values) == pytest.approx(1.0)


def test_constant_frequency_template_has_single_peak():
    f0 = 10.0
    tg = _template_grid(T=0.3)
    v = kernel_template(ChirpSpec(f0, f0, 0.3), tg).values
    n = np.arange(tg.n)
    freqs = np.arange(0.5, 100.0, 0.1)
    # brute-force DFT magnitude scan
    mags = [abs(np.sum(v * np.exp(-2j * np.pi * f * n * tg.dt))) for f in freqs]
    assert abs(freqs[int(np.argmax(mags))] - f0) < 1.0

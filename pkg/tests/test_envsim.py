import math

import numpy as np
import pytest
from scipy.ndimage import maximum_filter

from stipp.envsim import (
    AdvectionConfig,
    FieldFrame,
    FieldSeries,
    MaskedCellError,
    OutOfBoundsError,
    RasterFormatError,
    RasterHeaderError,
    RasterShapeError,
    RasterTimeError,
    SensorModel,
    SimState,
    StabilityError,
    field_values_at,
    init_advection_field,
    load_raster_series,
    sample,
    simulate_advection,
    stability_bound,
    standardize,
    step_advection,
    write_raster_series,
)


def blob_state(n=64, u=0.0, v=0.0, diffusivity=0.0, viscosity=0.0):
    cfg = AdvectionConfig(grid_size=n, diffusivity=diffusivity, viscosity=viscosity)
    dx = cfg.extent / (n - 1)
    xs = np.linspace(0, cfg.extent, n)
    xx, yy = np.meshgrid(xs, xs)
    c = np.exp(-((xx - 200) ** 2 + (yy - 250) ** 2) / (2 * 30.0 ** 2))
    s = SimState(c, np.full_like(c, u), np.full_like(c, v), 0.0, dx, cfg, extent=(0, cfg.extent, 0, cfg.extent))
    s.initial_mass = s.mass
    return s


def centroid(s):
    xs = np.linspace(0, s.config.extent, s.c.shape[1])
    xx, yy = np.meshgrid(xs, xs)
    return (s.c * xx).sum() / s.c.sum(), (s.c * yy).sum() / s.c.sum()


def test_default_init_has_two_corner_maxima():
    s = init_advection_field(100, np.random.default_rng(0))
    peaks = np.argwhere((s.c == maximum_filter(s.c, size=9)) & (s.c > 0.5 * s.c.max()))
    assert len(peaks) == 2
    half = s.c.shape[0] / 2
    quadrants = {(int(r >= half), int(c >= half)) for r, c in peaks}
    assert quadrants == {(0, 0), (1, 1)}
    # opposite parcels move in opposite directions
    (r0, c0), (r1, c1) = peaks
    assert s.u[r0, c0] * s.u[r1, c1] < 0


def test_init_deterministic():
    a = init_advection_field(50, np.random.default_rng(3))
    b = init_advection_field(50, np.random.default_rng(3))
    assert np.array_equal(a.c, b.c) and np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v)


def test_zero_concentration_stays_zero():
    cfg = AdvectionConfig(grid_size=32, amplitude=0.0)
    series = simulate_advection(20.0, 1.0, np.random.default_rng(0), cfg)
    assert not np.any(series.values)


def test_static_field_unchanged():
    s = blob_state()
    out = step_advection(s, 5.0)
    np.testing.assert_allclose(out.c, s.c, atol=1e-15, rtol=0)


def test_diffusion_conserves_mass_and_lowers_peak():
    s = blob_state(diffusivity=4.0)
    dt = 0.4 * stability_bound(s)
    out = s
    for _ in range(50):
        out = step_advection(out, dt)
    assert abs(out.mass - s.mass) / s.mass <= 1e-6
    assert out.c.max() < s.c.max()


def test_uniform_advection_moves_centroid():
    s = blob_state(u=1.5, v=-1.0)
    dt = 0.4 * stability_bound(s)
    k = 60
    out = s
    for _ in range(k):
        out = step_advection(out, dt)
    (x0, y0), (x1, y1) = centroid(s), centroid(out)
    assert abs((x1 - x0) - 1.5 * k * dt) <= s.dx
    assert abs((y1 - y0) + 1.0 * k * dt) <= s.dx
    assert abs(out.mass - s.mass) / s.mass <= 1e-10


def test_stability_violation_reports_bound():
    s = blob_state(u=2.0, diffusivity=4.0)
    bound = stability_bound(s)
    assert bound == pytest.approx(min(s.dx ** 2 / 16, s.dx / 2.0))
    with pytest.raises(StabilityError, match=f"{bound:.6g}"):
        step_advection(s, 2 * bound)


def test_simulation_sanity():
    series = simulate_advection(100.0, 1.0, np.random.default_rng(1), AdvectionConfig(grid_size=60))
    assert series.values.shape == (101, 60, 60)
    assert np.all(np.isfinite(series.values))
    assert series.times[-1] == 100.0
    dx = 500 / 59
    m0, m1 = series.values[0].sum() * dx * dx, series.values[-1].sum() * dx * dx
    assert abs(m1 - m0) / m0 <= 1e-6
    # the field actually evolves
    assert np.abs(series.values[-1] - series.values[0]).max() > 0.1


def test_raster_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    vals = rng.normal(size=(3, 4, 5))
    vals[1, 2, 3] = np.nan
    series = FieldSeries(vals, [10.0, 12.5, 15.0], (0.0, 400.0, 0.0, 300.0), 2.5)
    path = tmp_path / "f.txt"
    write_raster_series(series, path)
    back = load_raster_series(path)
    assert np.array_equal(back.values, series.values, equal_nan=True)
    assert np.array_equal(back.times, series.times)
    assert back.extent == series.extent and back.dt == 2.5
    assert back.mask.sum() == 1 and back.mask[1, 2, 3]


def test_single_frame_file(tmp_path):
    path = tmp_path / "one.txt"
    path.write_text("stfield v1 1 2 2 3.0 0 10 0 10\nframe 0\n1 2\n3 4\n")
    s = load_raster_series(path)
    assert len(s.times) == 1 and s.dt == 3.0


@pytest.mark.parametrize(
    "text,err,line",
    [
        ("stfield v2 1 2 2 1 0 1 0 1\n", RasterHeaderError, 1),
        ("stfield v1 1 2 x 1 0 1 0 1\n", RasterHeaderError, 1),
        ("stfield v1 1 2 2 1 0 1 0 1\nframe 0\n1 2\n3\n", RasterShapeError, 4),
        ("stfield v1 2 2 2 1 0 1 0 1\nframe 0\n1 2\n3 4\nframe 2\n1 2\n3 4\n", RasterTimeError, 5),
        ("stfield v1 2 2 2 1 0 1 0 1\nframe 3\n1 2\n3 4\nframe 2\n1 2\n3 4\n", RasterTimeError, 5),
        ("stfield v1 1 2 2 1 0 1 0 1\nframe 0\n1 2\n1 q\n", RasterShapeError, 4),
        ("stfield v1 1 2 2 1 0 1 0 1\nframe 0\n1 2\n3 4\n5 6\n", RasterShapeError, 5),
    ],
)
def test_parse_errors_name_line(tmp_path, text, err, line):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(err) as exc:
        load_raster_series(path)
    assert isinstance(exc.value, RasterFormatError)
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def grid_series():
    xs = np.linspace(0, 100, 3)
    frame = np.array([[1.0, 2.0, 4.0], [3.0, 5.0, 9.0], [0.0, 1.0, 2.0]])
    values = np.stack([frame, frame + 10])
    return FieldSeries(values, [0.0, 1.0], (0.0, 100.0, 0.0, 100.0), 1.0), xs


def test_sample_exact_at_node_and_bilinear_center():
    series, _ = grid_series()
    s0 = SensorModel(0.0)
    rng = np.random.default_rng(0)
    assert sample(series, (50, 50, 0), s0, rng).value == 5.0
    assert sample(series, (100, 0, 1), s0, rng).value == 14.0
    assert sample(series, (25, 25, 0), s0, rng).value == pytest.approx((1 + 2 + 3 + 5) / 4, abs=1e-12)
    # nearest frame in time
    assert sample(series, (50, 50, 0.6), s0, rng).value == 15.0
    np.testing.assert_allclose(field_values_at(series, [(75, 75, 0)]), [(5 + 9 + 1 + 2) / 4])


def test_sample_errors():
    series, _ = grid_series()
    rng = np.random.default_rng(0)
    with pytest.raises(OutOfBoundsError):
        sample(series, (101, 0, 0), SensorModel(0.0), rng)
    with pytest.raises(OutOfBoundsError):
        sample(series, (10, 10, 7), SensorModel(0.0), rng)
    vals = series.values.copy()
    vals[0, 1, 1] = np.nan
    masked = FieldSeries(vals, series.times, series.extent, 1.0)
    with pytest.raises(MaskedCellError):
        sample(masked, (50, 50, 0), SensorModel(0.0), rng)
    assert math.isnan(field_values_at(masked, [(40, 40, 0)])[0])
    assert sample(masked, (50, 50, 1), SensorModel(0.0), rng).value == 15.0


def test_sample_noise_variance():
    series, _ = grid_series()
    rng = np.random.default_rng(9)
    vals = np.array([sample(series, (50, 50, 0), SensorModel(0.04), rng).value for _ in range(10_000)])
    assert abs(vals.var(ddof=1) - 0.04) <= 0.1 * 0.04
    a = sample(series, (20, 30, 0), SensorModel(0.04), np.random.default_rng(5))
    b = sample(series, (20, 30, 0), SensorModel(0.04), np.random.default_rng(5))
    assert a == b


def test_sample_from_frame_and_state():
    s = blob_state(n=33)
    rng = np.random.default_rng(0)
    node = (s.extent[1] / 32 * 10, s.extent[1] / 32 * 7, 0.0)
    expected = s.c[7, 10]
    assert sample(s, node, SensorModel(0.0), rng).value == pytest.approx(expected, abs=1e-12)
    assert sample(s.frame(), node, SensorModel(0.0), rng).value == pytest.approx(expected, abs=1e-12)
    assert isinstance(s.frame(), FieldFrame)


def test_standardize_inverse():
    rng = np.random.default_rng(4)
    vals = rng.normal(3.0, 2.0, size=(4, 5, 6))
    vals[2, 1, 1] = np.nan
    series = FieldSeries(vals, np.arange(4.0), (0, 1, 0, 1), 1.0)
    std, tf = standardize(series)
    ok = ~np.isnan(std.values)
    assert abs(std.values[ok].mean()) < 1e-12 and abs(std.values[ok].std() - 1) < 1e-12
    np.testing.assert_allclose(tf.invert(std.values)[ok], vals[ok], atol=1e-12, rtol=0)


def test_series_validation():
    with pytest.raises(ValueError):
        FieldSeries(np.zeros((2, 2, 2)), [0.0, 0.0], (0, 1, 0, 1), 1.0)
    with pytest.raises(ValueError):
        SensorModel(-1.0)

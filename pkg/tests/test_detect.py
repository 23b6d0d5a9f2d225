from collections import deque

import numpy as np
import pytest

from alias_geometry import AliasGeometry
from detect import (
    angle_mask,
    detect_aliased_seabed,
    dynamic_threshold,
    exclude_below_seabed,
    fill_holes,
    filter_implausible_regions,
    grow_regions,
    mean_square_window,
)
from detect_config import DetectionConfig, load_config, parse_config_text
from echogram import NO_DATA, AngleChannels, Echogram, Mask, SeabedLine
from errors import ConfigError, ParameterError, ShapeMismatchError
from synthetic import make_alias_scene, make_quiet_scene


# ---- oracles ----------------------------------------------------------------

def naive_mean_square(grid, w, valid):
    rows, cols = grid.shape
    out = np.full(grid.shape, np.nan)
    for i in range(rows):
        for j in range(cols):
            total = 0
            n = 0
            for a in range(max(0, i - w // 2), min(rows, i + (w + 1) // 2)):
                for b in range(max(0, j - w // 2), min(cols, j + (w + 1) // 2)):
                    if valid[a, b]:
                        total += int(grid[a, b]) ** 2
                        n += 1
            if n:
                out[i, j] = total / n
    return out


def _neighbours(i, j, shape, connectivity):
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    for di, dj in steps:
        a, b = i + di, j + dj
        if 0 <= a < shape[0] and 0 <= b < shape[1]:
            yield a, b


def naive_grow(candidates, seeds, connectivity):
    out = seeds.copy()
    seen = np.zeros(candidates.shape, bool)
    queue = deque()
    for i, j in zip(*np.nonzero(seeds & candidates)):
        seen[i, j] = True
        queue.append((i, j))
    while queue:
        i, j = queue.popleft()
        out[i, j] = True
        for a, b in _neighbours(i, j, candidates.shape, connectivity):
            if candidates[a, b] and not seen[a, b]:
                seen[a, b] = True
                queue.append((a, b))
    return out


def naive_fill(bits):
    rows, cols = bits.shape
    outside = np.zeros(bits.shape, bool)
    queue = deque()
    for i in range(rows):
        for j in range(cols):
            if (i in (0, rows - 1) or j in (0, cols - 1)) and not bits[i, j]:
                outside[i, j] = True
                queue.append((i, j))
    while queue:
        i, j = queue.popleft()
        for a, b in _neighbours(i, j, bits.shape, 4):
            if not bits[a, b] and not outside[a, b]:
                outside[a, b] = True
                queue.append((a, b))
    return ~outside


def banded_mean_square(grid, w, valid):
    """Per-cell window sums by slicing; quick enough for 100x100 grids with w = 52."""
    rows, cols = grid.shape
    sq = np.where(valid, grid.astype(np.int64) ** 2, 0)
    n = valid.astype(np.int64)
    out = np.full(grid.shape, np.nan)
    for i in range(rows):
        a, b = max(0, i - w // 2), min(rows, i + (w + 1) // 2)
        sq_band = sq[a:b].sum(axis=0)
        n_band = n[a:b].sum(axis=0)
        for j in range(cols):
            c, d = max(0, j - w // 2), min(cols, j + (w + 1) // 2)
            k = n_band[c:d].sum()
            if k:
                out[i, j] = sq_band[c:d].sum() / k
    return out


def random_angle_grid(rng, max_side=100, invalid_at_least=0.1):
    rows, cols = (int(x) for x in rng.integers(1, max_side + 1, size=2))
    grid = rng.integers(-128, 128, size=(rows, cols))
    valid = rng.random((rows, cols)) >= rng.uniform(invalid_at_least, 0.5)
    forced = rng.choice(rows * cols, int(np.ceil(invalid_at_least * rows * cols)), replace=False)
    valid.flat[forced] = False
    return grid, valid


# ---- window statistics -------------------------------------------------------

@pytest.mark.parametrize("w", [1, 2, 3, 4, 7])
def test_mean_square_window_matches_naive(w):
    rng = np.random.default_rng(w)
    grid = rng.integers(-128, 128, size=(9, 11))
    valid = rng.random((9, 11)) > 0.2
    got = mean_square_window(grid, w, valid)
    np.testing.assert_allclose(got, naive_mean_square(grid, w, valid), rtol=0, atol=1e-9)


def test_banded_oracle_agrees_with_double_loop():
    rng = np.random.default_rng(3)
    grid, valid = random_angle_grid(rng, max_side=12)
    for w in (1, 2, 5, 13):
        np.testing.assert_allclose(
            banded_mean_square(grid, w, valid), naive_mean_square(grid, w, valid), rtol=0, atol=1e-9
        )


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(200))
def test_mean_square_window_matches_oracle_on_random_grids(seed):
    rng = np.random.default_rng(1000 + seed)
    grid, valid = random_angle_grid(rng)
    assert (~valid).mean() >= 0.1
    for w in (1, 2, 3, 28, 52):
        got = mean_square_window(grid, w, valid)
        np.testing.assert_allclose(got, banded_mean_square(grid, w, valid), rtol=1e-9, atol=0)


def test_mean_square_window_all_invalid_is_nan():
    got = mean_square_window(np.full((3, 3), 50), 3, np.zeros((3, 3), bool))
    assert np.isnan(got).all()


def test_mean_square_window_is_identical_for_any_worker_count():
    rng = np.random.default_rng(11)
    grid = rng.integers(-128, 128, size=(40, 900))
    one = mean_square_window(grid, 28, workers=1)
    for workers in (2, 8):
        assert np.array_equal(one, mean_square_window(grid, 28, workers=workers))


def test_mean_square_window_rejects_bad_window():
    with pytest.raises(ParameterError):
        mean_square_window(np.zeros((3, 3), int), 0)


# ---- angle mask / threshold ---------------------------------------------------

def _angles(along, athwart=None):
    along = np.asarray(along)
    return AngleChannels(along, np.zeros_like(along) if athwart is None else np.asarray(athwart))


def test_angle_mask_threshold_is_strict():
    cfg = DetectionConfig(window_along=3, window_athwart=3)
    assert angle_mask(_angles(np.full((5, 5), 27)), cfg).bits.all()  # 729 > 702
    assert not angle_mask(_angles(np.full((5, 5), 26)), cfg).any()  # 676
    assert angle_mask(_angles(np.zeros((5, 5), int), np.full((5, 5), 17)), cfg).bits.all()  # 289 > 282


def test_raising_a_threshold_never_grows_the_angle_mask():
    rng = np.random.default_rng(5)
    angles = _angles(rng.integers(-60, 61, size=(30, 40)), rng.integers(-30, 31, size=(30, 40)))
    low = angle_mask(angles, DetectionConfig(window_along=5, window_athwart=7, t_theta=500, t_phi=200))
    high = angle_mask(angles, DetectionConfig(window_along=5, window_athwart=7, t_theta=900, t_phi=300))
    assert not np.any(high.bits & ~low.bits)


def _echogram(sv, range_step=1.0):
    return Echogram(sv=np.asarray(sv, dtype=float), range_step=range_step, frequency=38.0)


def test_dynamic_threshold_median_and_floor():
    e = _echogram([[-60.0, -50.0, -40.0, -90.0]])
    m = Mask(np.array([[1, 1, 1, 0]], bool))
    assert dynamic_threshold(e, m) == -50.0
    assert dynamic_threshold(e, m, t_min=-45.0) == -45.0
    assert dynamic_threshold(e, Mask.empty(e.shape)) is None


def test_dynamic_threshold_ignores_no_data_and_uses_rank():
    e = _echogram([[NO_DATA, -60.0, -50.0, -40.0]])
    m = Mask(np.ones((1, 4), bool))
    assert dynamic_threshold(e, m) == -50.0
    assert dynamic_threshold(e, m, rank=100.0) == -40.0


# ---- regions -------------------------------------------------------------------

@pytest.mark.parametrize("connectivity", [4, 8])
def test_grow_regions_matches_flood_fill(connectivity):
    rng = np.random.default_rng(connectivity)
    sv = rng.normal(-60.0, 8.0, size=(25, 30))
    seeds = rng.random((25, 30)) > 0.97
    e = _echogram(sv)
    got = grow_regions(e, Mask(seeds), -58.0, connectivity)
    assert np.array_equal(got.bits, naive_grow(sv > -58.0, seeds, connectivity))


def test_grow_regions_keeps_every_seed():
    e = _echogram(np.full((4, 4), -90.0))
    seeds = np.zeros((4, 4), bool)
    seeds[1, 1] = True
    assert grow_regions(e, Mask(seeds), -50.0).bits.tolist() == seeds.tolist()


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(200))
def test_grow_and_fill_match_flood_fill_on_random_grids(seed):
    rng = np.random.default_rng(2000 + seed)
    sv = rng.normal(-60.0, 8.0, size=(50, 50))
    sv[rng.random((50, 50)) < 0.05] = NO_DATA
    seeds = rng.random((50, 50)) < rng.uniform(0.005, 0.05)
    t = float(rng.uniform(-66.0, -54.0))
    e = _echogram(sv)
    candidates = (sv > t) & (sv != NO_DATA)
    for connectivity in (4, 8):
        grown = grow_regions(e, Mask(seeds), t, connectivity).bits
        assert np.array_equal(grown, naive_grow(candidates, seeds, connectivity))
        assert np.array_equal(fill_holes(Mask(grown)).bits, naive_fill(grown))
    bits = rng.random((50, 50)) < rng.uniform(0.3, 0.7)
    assert np.array_equal(fill_holes(Mask(bits)).bits, naive_fill(bits))


@pytest.mark.parametrize("connectivity", [4, 8])
def test_grow_regions_shrinks_as_threshold_rises(connectivity):
    rng = np.random.default_rng(30 + connectivity)
    e = _echogram(rng.normal(-60.0, 8.0, size=(50, 50)))
    seeds = Mask(rng.random((50, 50)) < 0.02)
    previous = None
    for t in np.linspace(-75.0, -45.0, 13):
        grown = grow_regions(e, seeds, float(t), connectivity).bits
        if previous is not None:
            assert not np.any(grown & ~previous)
        previous = grown


def test_fill_holes_matches_border_flood_fill():
    rng = np.random.default_rng(9)
    for _ in range(20):
        bits = rng.random((12, 15)) > 0.55
        assert np.array_equal(fill_holes(Mask(bits)).bits, naive_fill(bits))


def test_fill_holes_ring():
    bits = np.zeros((5, 5), bool)
    bits[1:4, 1:4] = True
    bits[2, 2] = False
    assert fill_holes(Mask(bits)).bits[2, 2]


def test_exclude_below_seabed_clears_columns():
    m = Mask(np.ones((4, 3), bool))
    out = exclude_below_seabed(m, SeabedLine.from_optional([None, 2.0, None]), 1.0)
    assert out.bits[:, 1].sum() == 0
    assert out.bits[:, [0, 2]].all()


# ---- full pipeline ---------------------------------------------------------------

def _small_scene():
    """8x8: seed block at rows 2-3 cols 2-3 (median -50), neighbour at cols 4-5, isolated echo at 6-7."""
    sv = np.full((8, 8), -80.0)
    along = np.zeros((8, 8), int)
    sv[2:4, 2] = -56.0
    sv[2:4, 3] = -44.0
    along[2:4, 2:4] = 30
    sv[2:4, 4:6] = -45.0
    sv[6:8, 6:8] = -40.0
    return sv, along


def _cfg(**kw):
    return DetectionConfig(window_along=1, window_athwart=1, **kw)


def test_detect_small_scene():
    sv, along = _small_scene()
    result = detect_aliased_seabed(_echogram(sv), _angles(along), cfg=_cfg())
    expected = np.zeros((8, 8), bool)
    expected[2:4, 2:6] = True
    assert result.t_used == -50.0
    assert np.array_equal(result.mask.bits, expected)
    assert np.array_equal(result.m_angle.bits, along != 0)


def test_detect_clamps_threshold():
    sv, along = _small_scene()
    sv[2:4, 2:4] = -75.0
    result = detect_aliased_seabed(_echogram(sv), _angles(along), cfg=_cfg())
    assert result.t_used == -70.0
    no_floor = detect_aliased_seabed(_echogram(sv), _angles(along), cfg=_cfg(t_min=None))
    assert no_floor.t_used == -75.0


def test_detect_connectivity_eight_reaches_diagonal():
    sv, along = _small_scene()
    sv[4, 6] = -30.0
    four = detect_aliased_seabed(_echogram(sv), _angles(along), cfg=_cfg(connectivity=4))
    eight = detect_aliased_seabed(_echogram(sv), _angles(along), cfg=_cfg(connectivity=8))
    assert not four.mask.bits[4, 6]
    assert eight.mask.bits[4, 6]


def test_detect_zero_angles_gives_empty_mask():
    b = make_quiet_scene()
    result = detect_aliased_seabed(b.echogram, b.angles)
    assert not result.mask.any()
    assert result.t_used is None


def test_detect_seabed_columns_cleared():
    sv, along = _small_scene()
    seabed = SeabedLine.from_optional([None, None, None, 7.0, None, None, None, None])
    result = detect_aliased_seabed(_echogram(sv), _angles(along), seabed, _cfg())
    assert not result.mask.bits[:, 3].any()
    assert not result.m_angle.bits[:, 3].any()
    assert result.mask.bits[2, 2]


def test_detect_search_range():
    sv, along = _small_scene()
    result = detect_aliased_seabed(_echogram(sv), _angles(along), cfg=_cfg(r_max=2.5))
    assert result.mask.bits[2, 2:6].all()
    assert not result.mask.bits[3:, :].any()


def test_detect_never_masks_no_data():
    sv, along = _small_scene()
    sv[3, 4] = NO_DATA
    result = detect_aliased_seabed(_echogram(sv), _angles(along), cfg=_cfg())
    assert not result.mask.bits[3, 4]


def test_detect_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        detect_aliased_seabed(_echogram(np.zeros((3, 3)) - 60), _angles(np.zeros((3, 4), int)))


def test_geometry_filter_needs_geometry():
    sv, along = _small_scene()
    with pytest.raises(ParameterError):
        detect_aliased_seabed(_echogram(sv), _angles(along), cfg=_cfg(geometry_filter=True))


def test_geometry_filter_drops_regions_beyond_the_alias_period():
    sv, along = _small_scene()
    # block mean range 2.5 m; alias period c*I_T/2 = 3 m then 1.5 m
    keep = AliasGeometry(ping_interval=0.004, logging_range=5.0)
    drop = AliasGeometry(ping_interval=0.002, logging_range=5.0)
    kept = detect_aliased_seabed(_echogram(sv), _angles(along), cfg=_cfg(geometry_filter=True), geometry=keep)
    dropped = detect_aliased_seabed(_echogram(sv), _angles(along), cfg=_cfg(geometry_filter=True), geometry=drop)
    assert kept.mask.any()
    assert not dropped.mask.any()
    assert dropped.t_used is None


def test_filter_implausible_regions_direct():
    bits = np.zeros((10, 4), bool)
    bits[1, 0] = True
    bits[8, 2] = True
    g = AliasGeometry(ping_interval=0.008, logging_range=5.0)  # period 6 m
    out = filter_implausible_regions(Mask(bits), 1.0, g, 38.0)
    assert out.bits[1, 0]
    assert not out.bits[8, 2]


def test_detect_synthetic_scene_recall_and_layer_false_positives():
    bundle, truth = make_alias_scene(seed=1)
    result = detect_aliased_seabed(bundle.echogram, bundle.angles)
    mask = result.mask.bits
    recall = (mask & truth.band).sum() / truth.band.sum()
    layer_out = truth.layer & ~truth.crossing
    fp = (mask & layer_out).sum() / layer_out.sum()
    assert recall >= 0.9
    assert fp < 0.05
    assert result.t_used >= -70.0
    assert not np.any(result.m_angle.bits & ~mask)


def test_detect_is_identical_for_any_worker_count():
    bundle, _ = make_alias_scene(rows=200, cols=700, seed=2)
    one = detect_aliased_seabed(bundle.echogram, bundle.angles, cfg=DetectionConfig(workers=1))
    for workers in (2, 8):
        many = detect_aliased_seabed(bundle.echogram, bundle.angles, cfg=DetectionConfig(workers=workers))
        assert np.array_equal(one.mask.bits, many.mask.bits)
        assert np.array_equal(one.m_angle.bits, many.m_angle.bits)
        assert one.t_used == many.t_used


@pytest.mark.parametrize("seed", range(5))
def test_pipeline_invariants_on_damaged_scenes(seed):
    bundle, _ = make_alias_scene(rows=200, cols=300, seed=seed, band_height=30)
    rng = np.random.default_rng(seed)
    sv = np.array(bundle.echogram.sv)
    sv[rng.random(sv.shape) < 0.05] = NO_DATA
    e = Echogram(sv=sv, range_step=bundle.echogram.range_step, frequency=38.0)
    ranges = [None] * e.cols
    for j in rng.choice(e.cols, 20, replace=False):
        ranges[int(j)] = float(rng.uniform(1.0, e.rows * e.range_step))
    seabed = SeabedLine.from_optional(ranges)

    result = detect_aliased_seabed(e, bundle.angles, seabed)
    assert not np.any(result.m_angle.bits & ~result.mask.bits)
    assert not np.any(result.mask.bits & (sv == NO_DATA))
    assert not result.mask.bits[:, seabed.present].any()

    free = detect_aliased_seabed(e, bundle.angles)
    kept = ~seabed.present
    assert result.t_used == free.t_used
    assert np.array_equal(result.mask.bits[:, kept], free.mask.bits[:, kept])


def test_detect_empty_grid():
    e = Echogram(sv=np.zeros((0, 0)), range_step=1.0, frequency=38.0)
    z = np.zeros((0, 0), int)
    result = detect_aliased_seabed(e, AngleChannels(z, z))
    assert result.mask.shape == (0, 0)
    assert result.t_used is None


# ---- config file -----------------------------------------------------------------

def test_config_text_parses_known_keys():
    settings = parse_config_text("# defaults\nt_theta = 650\nt_min = none\nfill_holes = no\ntoken = '-500'\n")
    assert settings == {"t_theta": 650.0, "t_min": None, "fill_holes": False, "token": -500.0}


@pytest.mark.parametrize("text", ["t_theat = 702\n", "t_theta = lots\n", "fill_holes = maybe\n", "t_theta\n"])
def test_config_text_errors_are_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_load_config_flag_beats_file(tmp_path):
    path = tmp_path / "detect.config"
    path.write_text("t_theta = 650\nt_phi = 300\n", encoding="utf-8")
    cfg = load_config(path, t_theta=800.0, t_phi=None)
    assert (cfg.t_theta, cfg.t_phi, cfg.window_along) == (800.0, 300.0, 28)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.config")

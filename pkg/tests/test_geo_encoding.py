import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segdesicnet.errors import ConfigError, DegenerateVectorError, InvalidCoordinateError, ShapeError
from segdesicnet.geo_encoding import (
    EncoderSettings,
    GridConfig,
    GridEncoding,
    cosine_dissimilarity,
    encode_pipeline,
    grid_encode,
    normalize_encoding,
    scale_factor,
)
from segdesicnet.geodesy import Epsg2154Coord, center_coordinate, transform_2154_to_4326

BEST = GridConfig(0.01, 0.00001, 16)

vectors = st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=16).filter(lambda v: math.sqrt(sum(x * x for x in v)) > 1e-3)


class TestScales:
    def test_first_scale_is_lambda_min(self):
        assert scale_factor(BEST, 0) == 0.01

    def test_last_scale_is_lambda_max(self):
        assert scale_factor(BEST, 15) == 0.00001

    def test_two_scales(self):
        assert scale_factor(GridConfig(0.01, 1e-5, 2), 1) == pytest.approx(1e-5, rel=1e-15)

    @pytest.mark.parametrize("s", [-1, 16])
    def test_out_of_range(self, s):
        with pytest.raises(IndexError):
            scale_factor(BEST, s)

    def test_geometric_progression(self):
        a = BEST.scales()
        ratios = a[1:] / a[:-1]
        assert np.allclose(ratios, (1e-5 / 1e-2) ** (1 / 15), rtol=1e-12)

    @pytest.mark.parametrize("cfg", [BEST, GridConfig(0.0001, 0.1, 8)])
    def test_strictly_monotone(self, cfg):
        d = np.diff(cfg.scales())
        assert np.all(d < 0) if cfg.lambda_max < cfg.lambda_min else np.all(d > 0)

    @pytest.mark.parametrize(
        "kwargs",
        [dict(num_scales=1), dict(lambda_min=0.0), dict(lambda_max=-1.0), dict(lambda_min=1e-3, lambda_max=1e-3), dict(norm_kind="l3")],
    )
    def test_invalid_config(self, kwargs):
        with pytest.raises(ConfigError):
            GridConfig(**kwargs)


class TestGridEncode:
    def test_origin(self):
        enc = grid_encode(BEST, 0.0, 0.0)
        assert len(enc) == 64 and not enc.normalized
        assert np.array_equal(enc.values, np.tile([0.0, 1.0, 0.0, 1.0], 16))

    def test_against_high_precision(self):
        mpmath.mp.dps = 40
        cfg = GridConfig(0.01, 1e-5, 2)
        got = grid_encode(cfg, 0.005, 0.0).values
        u0 = mpmath.mpf("0.005") / mpmath.mpf("0.01")
        u1 = mpmath.mpf("0.005") / mpmath.mpf("0.00001")
        want = [mpmath.sin(u0), mpmath.cos(u0), 0, 1, mpmath.sin(u1), mpmath.cos(u1), 0, 1]
        assert np.allclose(got, [float(w) for w in want], atol=1e-12, rtol=0)

    def test_swap_symmetry(self):
        a = grid_encode(BEST, 1.25, -0.5).values.reshape(-1, 4)
        b = grid_encode(BEST, -0.5, 1.25).values.reshape(-1, 4)
        assert np.array_equal(a[:, :2], b[:, 2:]) and np.array_equal(a[:, 2:], b[:, :2])

    def test_radians_option(self):
        cfg = GridConfig(0.01, 1e-5, 4, angle_unit="radians")
        assert np.array_equal(grid_encode(cfg, 180.0, 0.0).values, grid_encode(GridConfig(0.01, 1e-5, 4), math.pi, 0.0).values)

    def test_non_finite(self):
        with pytest.raises(InvalidCoordinateError):
            grid_encode(BEST, math.nan, 0.0)

    @given(st.floats(-180, 180), st.floats(-90, 90))
    def test_unit_circle_per_block(self, lon, lat):
        blocks = grid_encode(BEST, lon, lat).values.reshape(-1, 4)
        assert np.allclose(blocks[:, 0] ** 2 + blocks[:, 1] ** 2, 1.0, atol=1e-12, rtol=0)
        assert np.allclose(blocks[:, 2] ** 2 + blocks[:, 3] ** 2, 1.0, atol=1e-12, rtol=0)


class TestNormalize:
    def test_l1(self):
        out = normalize_encoding(GridEncoding(np.tile([0.0, 1.0, 0.0, 1.0], 2)))
        assert out.normalized
        assert np.array_equal(out.values, np.tile([0.0, 0.25, 0.0, 0.25], 2))

    def test_idempotent(self):
        e = grid_encode(BEST, 0.3, 0.7)
        once = normalize_encoding(e)
        assert np.allclose(normalize_encoding(once).values, once.values, atol=1e-15, rtol=0)

    def test_sign_preserved(self):
        e = grid_encode(BEST, -1.36, -5.98)
        assert np.array_equal(np.sign(normalize_encoding(e).values), np.sign(e.values))

    def test_l2_option(self):
        out = normalize_encoding(grid_encode(BEST, 0.3, 0.7), "l2")
        assert np.linalg.norm(out.values) == pytest.approx(1.0, abs=1e-12)

    def test_zero_vector(self):
        with pytest.raises(DegenerateVectorError):
            normalize_encoding(GridEncoding(np.zeros(8)))


class TestCosineDissimilarity:
    def test_self(self):
        v = np.array([0.3, -1.2, 4.0])
        assert cosine_dissimilarity(v, v) == pytest.approx(0.0, abs=1e-15)

    def test_antipodal(self):
        v = np.array([0.3, -1.2, 4.0])
        assert cosine_dissimilarity(v, -v) == pytest.approx(2.0, abs=1e-15)

    def test_orthogonal(self):
        assert cosine_dissimilarity([1.0, 0.0], [0.0, 1.0]) == 1.0

    def test_errors(self):
        with pytest.raises(DegenerateVectorError):
            cosine_dissimilarity([0.0, 0.0], [1.0, 0.0])
        with pytest.raises(ShapeError):
            cosine_dissimilarity([1.0, 0.0], [1.0, 0.0, 0.0])

    @given(vectors, st.data())
    def test_symmetric_bounded_scale_invariant(self, a, data):
        b = data.draw(st.lists(st.floats(-1e3, 1e3), min_size=len(a), max_size=len(a)).filter(lambda v: math.sqrt(sum(x * x for x in v)) > 1e-3))
        k = data.draw(st.floats(1e-3, 1e3))
        d = cosine_dissimilarity(a, b)
        assert 0.0 <= d <= 2.0
        assert d == cosine_dissimilarity(b, a)
        assert abs(cosine_dissimilarity(np.multiply(a, k), b) - d) < 1e-12


class TestPipeline:
    def test_equals_manual_chain(self):
        raw = Epsg2154Coord(512345.0, 6612345.0)
        pos = transform_2154_to_4326(center_coordinate(raw))
        manual = normalize_encoding(grid_encode(BEST, *pos))
        assert np.array_equal(encode_pipeline(BEST, raw).values, manual.values)

    def test_median_point(self):
        from segdesicnet.geodesy import LAMBERT_93, lcc_inverse

        want = normalize_encoding(grid_encode(BEST, *lcc_inverse(LAMBERT_93, 0.0, 0.0))).values
        assert np.array_equal(encode_pipeline(BEST, Epsg2154Coord(489353.59, 6587552.20)).values, want)

    def test_deterministic(self):
        raw = Epsg2154Coord(600000.0, 6700000.0)
        assert encode_pipeline(BEST, raw).values.tobytes() == encode_pipeline(BEST, raw).values.tobytes()

    def test_center_after_transform_switch(self):
        s = EncoderSettings(grid=BEST, center_before_transform=False)
        enc = encode_pipeline(s, Epsg2154Coord(489353.59, 6587552.20))
        assert np.allclose(enc.values, np.tile([0.0, 1 / 32, 0.0, 1 / 32], 16), atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.0, 1.3e6), st.floats(6.0e6, 7.2e6))
    def test_fuzz_unit_l1(self, e, n):
        v = encode_pipeline(BEST, Epsg2154Coord(e, n)).values
        assert v.shape == (64,)
        assert abs(np.abs(v).sum() - 1.0) < 1e-9

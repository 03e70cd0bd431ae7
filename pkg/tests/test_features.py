import numpy as np
import pytest

from rfloc.errors import ValidationError
from rfloc.features import (
    ALL_KINDS,
    FeatureKind,
    FeatureRepr,
    build_feature,
    build_matrix,
    feature_dim,
    fit_scaling,
)

SCALAR = FeatureRepr(mode="scalar", max_lag=6)
SWEEP = FeatureRepr(mode="sweep", max_lag=6)

SCALAR_DIMS = {
    FeatureKind.RSS: 1,
    FeatureKind.CTF: 2,
    FeatureKind.FCF: 2,
    FeatureKind.RSS_CTF: 3,
    FeatureKind.RSS_FCF: 3,
    FeatureKind.CTF_FCF: 4,
    FeatureKind.RSS_CTF_FCF: 5,
}


@pytest.fixture(scope="module")
def measurements(tiny_sets):
    return tiny_sets["Lab"].measurements


class TestFeatureKind:
    def test_exactly_seven_kinds_in_column_order(self):
        assert [k.value for k in ALL_KINDS] == [
            "RSS", "CTF", "FCF", "RSS+CTF", "RSS+FCF", "CTF+FCF", "RSS+CTF+FCF",
        ]

    def test_parse_round_trip_and_normalization(self):
        for kind in ALL_KINDS:
            assert FeatureKind.parse(kind.value) is kind
        assert FeatureKind.parse("ctf + fcf") is FeatureKind.CTF_FCF
        with pytest.raises(ValidationError):
            FeatureKind.parse("CSI")

    def test_blocks_in_canonical_order(self):
        assert FeatureKind.RSS_CTF_FCF.blocks == ("rss", "ctf", "fcf")
        assert FeatureKind.CTF_FCF.blocks == ("ctf", "fcf")


class TestBuildFeature:
    def test_scalar_mode_dimensions(self, measurements):
        m = measurements[0]
        for kind, dim in SCALAR_DIMS.items():
            vec = build_feature(m, kind, SCALAR)
            assert len(vec) == dim
            assert feature_dim(kind, SCALAR, m.ctf.grid.n_points) == dim

    def test_full_hybrid_is_five_dimensional(self, measurements):
        assert len(build_feature(measurements[0], FeatureKind.RSS_CTF_FCF, SCALAR)) == 5

    def test_rss_kind_is_the_rss_value(self, measurements):
        m = measurements[0]
        vec = build_feature(m, FeatureKind.RSS, SCALAR)
        assert vec.values.tolist() == [m.rss_db]

    def test_sweep_mode_dimension_bookkeeping(self, measurements):
        # 32-point CTF and lags 0..6: 2*32 + 2*7 = 78
        m = measurements[0]
        vec = build_feature(m, FeatureKind.CTF_FCF, SWEEP)
        assert len(vec) == 2 * 32 + 2 * 7 == 78
        assert feature_dim(FeatureKind.CTF_FCF, SWEEP, 32) == 78

    def test_dim_additivity_for_hybrids(self, measurements):
        for repr_ in (SCALAR, SWEEP):
            dims = {k: feature_dim(k, repr_, 32) for k in ALL_KINDS}
            assert dims[FeatureKind.RSS_CTF] == dims[FeatureKind.RSS] + dims[FeatureKind.CTF]
            assert dims[FeatureKind.RSS_FCF] == dims[FeatureKind.RSS] + dims[FeatureKind.FCF]
            assert dims[FeatureKind.CTF_FCF] == dims[FeatureKind.CTF] + dims[FeatureKind.FCF]
            assert dims[FeatureKind.RSS_CTF_FCF] == (
                dims[FeatureKind.RSS] + dims[FeatureKind.CTF] + dims[FeatureKind.FCF]
            )

    def test_block_order_is_stable(self, measurements):
        # The RSS coordinate of the full hybrid equals the sole RSS coordinate.
        m = measurements[3]
        full = build_feature(m, FeatureKind.RSS_CTF_FCF, SWEEP)
        rss_only = build_feature(m, FeatureKind.RSS, SWEEP)
        assert full.values[0] == rss_only.values[0]
        ctf_only = build_feature(m, FeatureKind.CTF, SWEEP)
        assert np.array_equal(full.values[1 : 1 + len(ctf_only)], ctf_only.values)

    def test_scalar_values_come_from_center_bin(self, measurements):
        m = measurements[0]
        vec = build_feature(m, FeatureKind.CTF, SCALAR)
        center = m.ctf.values[16]
        assert vec.values.tolist() == [center.real, center.imag]
        shifted = build_feature(m, FeatureKind.CTF, FeatureRepr(mode="scalar", scalar_bin=2, max_lag=6))
        assert shifted.values.tolist() == [m.ctf.values[2].real, m.ctf.values[2].imag]

    def test_scalar_fcf_lag_clamps_to_max_lag(self, measurements):
        m = measurements[0]
        vec = build_feature(m, FeatureKind.FCF, SCALAR)  # center bin 16 clamps to lag 6
        assert vec.values.tolist() == [m.fcf.values[6].real, m.fcf.values[6].imag]

    def test_interleaving_is_real_imag_pairs(self, measurements):
        m = measurements[0]
        vec = build_feature(m, FeatureKind.CTF, SWEEP)
        assert vec.values[0] == m.ctf.values[0].real
        assert vec.values[1] == m.ctf.values[0].imag
        assert vec.values[2] == m.ctf.values[1].real

    def test_deterministic(self, measurements):
        m = measurements[0]
        a = build_feature(m, FeatureKind.RSS_CTF_FCF, SWEEP)
        b = build_feature(m, FeatureKind.RSS_CTF_FCF, SWEEP)
        assert np.array_equal(a.values, b.values)

    def test_errors_for_out_of_range_repr(self, measurements):
        m = measurements[0]
        with pytest.raises(ValidationError):
            build_feature(m, FeatureKind.CTF, FeatureRepr(mode="scalar", scalar_bin=32, max_lag=6))
        with pytest.raises(ValidationError):
            build_feature(m, FeatureKind.FCF, FeatureRepr(mode="sweep", max_lag=9))

    def test_repr_validation(self):
        with pytest.raises(ValidationError):
            FeatureRepr(mode="banana")
        with pytest.raises(ValidationError):
            FeatureRepr(mode="sweep", max_lag=-1)


class TestBuildMatrix:
    def test_raw_passthrough(self, measurements):
        vectors, params = build_matrix(measurements[:3], FeatureKind.RSS, SWEEP, scaling="raw")
        assert params is None
        assert [v.values[0] for v in vectors] == [m.rss_db for m in measurements[:3]]

    def test_zscore_normalizes_fit_set(self, measurements):
        vectors, params = build_matrix(measurements, FeatureKind.CTF_FCF, SWEEP, scaling="zscore")
        matrix = np.stack([v.values for v in vectors])
        assert np.max(np.abs(matrix.mean(axis=0))) < 1e-9
        assert np.max(np.abs(matrix.std(axis=0) - 1.0)) < 1e-9

    def test_zscore_refit_on_transformed_is_identity(self, measurements):
        vectors, _ = build_matrix(measurements, FeatureKind.CTF_FCF, SWEEP, scaling="zscore")
        matrix = np.stack([v.values for v in vectors])
        params2 = fit_scaling(matrix)
        assert np.max(np.abs(params2.mean)) < 1e-9
        assert np.max(np.abs(params2.std - 1.0)) < 1e-9
        again = np.stack([params2.apply(row) for row in matrix])
        assert np.allclose(again, matrix, atol=1e-9)

    def test_zero_variance_dimension_warns_and_uses_unit_scale(self, measurements):
        constant = np.ones((4, 3))
        constant[:, 1] = [1.0, 2.0, 3.0, 4.0]
        with pytest.warns(UserWarning, match="zero variance"):
            params = fit_scaling(constant)
        assert params.std[0] == 1.0
        assert params.std[2] == 1.0
        transformed = params.apply(constant[0])
        assert np.all(np.isfinite(transformed))

    def test_empty_input_rejected(self):
        with pytest.raises(ValidationError):
            build_matrix([], FeatureKind.RSS, SWEEP)
        with pytest.raises(ValidationError):
            build_matrix([], FeatureKind.RSS, SWEEP, scaling="weird")

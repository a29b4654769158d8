"""Estimator-surface forecasters and the model registry."""

import numpy as np
import pytest
from sklearn.base import clone

from peakcast.basis import SmoothTerm
from peakcast.forecasters import (
    ArForecaster,
    GamForecaster,
    NNForecaster,
    PersistenceForecaster,
    build_model,
    highres_terms,
    lowres_terms,
    multires_terms,
)


@pytest.fixture(scope="module")
def split(dataset):
    cut = dataset.dates[200]
    return dataset.restrict(dataset.dates[0], cut), dataset.restrict(cut, dataset.dates[-1])


SMALL_LR_TERMS = tuple(
    SmoothTerm("univariate", (c,), (8,)) for c in ("toy", "DP24", "tempMax")
)
SMALL_MR_TERMS = (
    SmoothTerm("univariate", ("toy",), (8,)),
    SmoothTerm("functional_tensor", ("matLag", "matInt"), (4, 4)),
)


class TestDefaultTermSets:
    def test_printed_basis_sizes(self):
        low = {t.covariates[0]: t.basis_sizes[0] for t in lowres_terms()}
        assert low == {"IP24": 10, "toy": 20, "DP24": 20, "tempMax": 20,
                       "temp95Max": 20, "tempMin": 20, "temp95Min": 20}
        multi = {t.covariates[0]: t.basis_sizes for t in multires_terms()}
        assert multi["matTem"] == (15, 10)
        assert multi["matTem95"] == (5, 5)
        assert multi["matLag"] == (5, 5)
        high = [t for t in highres_terms() if t.kind == "tensor2"]
        assert len(high) == 4
        assert all(t.basis_sizes == (5, 5) for t in high)

    def test_high_resolution_uses_slot_margin(self):
        assert all(t.covariates[1] == "t" for t in highres_terms()
                   if t.kind == "tensor2")


class TestPersistenceAndAr:
    def test_persistence(self, split):
        train, test = split
        model = PersistenceForecaster().fit(train)
        pred = model.predict(test)
        assert np.array_equal(pred["dp"].to_numpy(), test.daily["DP24"].to_numpy())
        assert model.targets == ("dp", "ip")

    def test_low_resolution_ar(self, split):
        train, test = split
        model = ArForecaster(resolution="low", max_p=3).fit(train)
        pred = model.predict(test)
        assert pred["dp"].notna().all()
        assert model.targets == ("dp",)

    def test_high_resolution_ar(self, split):
        train, test = split
        model = ArForecaster(resolution="high", max_p=2).fit(train)
        pred = model.predict(test)
        assert set(pred.columns) == {"dp", "ip"}
        assert pred["ip"].between(0, 47).all()


class TestGamForecaster:
    def test_low_resolution_beats_persistence(self, split):
        train, test = split
        model = GamForecaster(resolution="low", family="gaussian",
                              terms=SMALL_LR_TERMS).fit(train)
        pred = model.predict(test)
        gam_mae = float(np.abs(pred["dp"] - test.daily["DP"]).mean())
        persistence_mae = float(np.abs(test.daily["DP24"] - test.daily["DP"]).mean())
        assert gam_mae < persistence_mae

    def test_multi_resolution(self, split):
        train, test = split
        model = GamForecaster(resolution="multi", family="gaussian",
                              terms=SMALL_MR_TERMS).fit(train)
        pred = model.predict(test)
        assert np.isfinite(pred["dp"]).all()

    def test_high_resolution_extracts_peaks(self, split):
        train, test = split
        terms = (
            SmoothTerm("univariate", ("temp",), (8,)),
            SmoothTerm("tensor2", ("load24", "t"), (5, 5)),
        )
        model = GamForecaster(resolution="high", terms=terms).fit(train)
        pred = model.predict(test)
        assert model.targets == ("dp", "ip")
        assert pred["ip"].between(0, 47).all()
        assert len(pred) == len(test.daily)

    def test_ocat_targets_ip(self, split):
        train, test = split
        model = GamForecaster(resolution="low", family="ocat",
                              terms=(SmoothTerm("univariate", ("toy",), (6,)),
                                     SmoothTerm("univariate", ("IP24",), (6,))))
        assert model.targets == ("ip",)
        pred = model.fit(train).predict(test)
        assert pred["ip"].between(0, 47).all()

    def test_sklearn_clone_roundtrip(self):
        model = GamForecaster(resolution="low", family="gev", terms=SMALL_LR_TERMS)
        twin = clone(model)
        assert twin.get_params() == model.get_params()


class TestNNForecaster:
    CFG = dict(epochs=8, batch_size=32, learning_rate=1e-3, seed=0)

    def test_lowres_dp(self, split):
        train, test = split
        model = NNForecaster(architecture="lr_fcnn", target="dp", **self.CFG)
        pred = model.fit(train).predict(test)
        assert np.isfinite(pred["dp"]).all()
        assert (pred["dp"] >= 0).all()

    def test_lowres_ip(self, split):
        train, test = split
        model = NNForecaster(architecture="lr_fcnn", target="ip", **self.CFG)
        pred = model.fit(train).predict(test)
        assert pred["ip"].between(0, 47).all()

    def test_multires_cnn(self, split):
        train, test = split
        model = NNForecaster(architecture="mr_cnn", target="dp", **self.CFG)
        pred = model.fit(train).predict(test)
        assert np.isfinite(pred["dp"]).all()

    def test_highres_derives_both_targets(self, split):
        train, test = split
        model = NNForecaster(architecture="hr_fcnn", target="dp", epochs=2,
                             batch_size=256, learning_rate=1e-3, seed=1)
        pred = model.fit(train).predict(test)
        assert set(pred.columns) == {"dp", "ip"}
        assert len(pred) == len(test.daily)

    def test_seeded_determinism(self, split):
        train, test = split
        a = NNForecaster(architecture="lr_fcnn", target="dp", **self.CFG)
        b = NNForecaster(architecture="lr_fcnn", target="dp", **self.CFG)
        pred_a = a.fit(train).predict(test)
        pred_b = b.fit(train).predict(test)
        assert np.array_equal(pred_a["dp"].to_numpy(), pred_b["dp"].to_numpy())


class TestRegistry:
    def test_builds_each_class(self):
        assert isinstance(build_model({"class": "persistence"}), PersistenceForecaster)
        assert isinstance(build_model({"class": "ar", "resolution": "high"}), ArForecaster)
        assert isinstance(build_model({"class": "gam", "resolution": "low"}), GamForecaster)
        assert isinstance(build_model({"class": "nn", "architecture": "mr_cnn",
                                       "target": "ip"}), NNForecaster)

    def test_unknown_class(self):
        with pytest.raises(ValueError):
            build_model({"class": "prophet"})

    def test_term_configs(self):
        model = build_model({
            "class": "gam",
            "resolution": "multi",
            "terms": [
                {"smooth": {"cov": "toy", "k": 20}},
                {"tensor": {"cov1": "matTem", "cov2": "matInt",
                            "k1": 15, "k2": 10, "functional": True}},
            ],
        })
        assert model.terms[0].kind == "univariate"
        assert model.terms[1].kind == "functional_tensor"
        assert model.terms[1].basis_sizes == (15, 10)

import math
import warnings

import numpy as np
import pytest
from scipy.special import expit

from icutl import metrics, riskmodel as rm
from icutl.errors import DimensionMismatch, SchemaViolation, SingleClass
from icutl.features import HORIZONS, feature_dim, impute_and_standardize


def random_instance(rng, n=None, d=None):
    n = n or int(rng.integers(8, 60))
    d = d or int(rng.integers(1, 8))
    X = rng.normal(size=(n, d))
    y = rng.integers(0, 2, size=n)
    if y.sum() in (0, n):
        y[0], y[-1] = 0, 1
    lam = float(10 ** rng.uniform(-3, 2))
    w_pos = float(rng.uniform(0.5, 8.0))
    return X, y, lam, w_pos


def numerical_gradient(X, y, lam, w_pos, w, b, h=1e-5):
    d = len(w)
    grad = np.zeros(d + 1)
    for j in range(d + 1):
        def at(offset):
            wb = np.append(w, b)
            wb[j] += offset
            loss, _, _ = rm.loss_and_grad(wb[:d], wb[d], X, y, lam, w_pos)
            return loss
        grad[j] = (at(h) - at(-h)) / (2 * h)
    return grad


class TestLossAndGradient:
    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(12)
        for _ in range(25):
            X, y, lam, w_pos = random_instance(rng)
            w = rng.normal(size=X.shape[1])
            b = float(rng.normal())
            _, gw, gb = rm.loss_and_grad(w, b, X, y, lam, w_pos)
            analytic = np.append(gw, gb)
            numeric = numerical_gradient(X, y, lam, w_pos, w, b)
            rel = np.abs(analytic - numeric).max() / max(1.0, np.abs(analytic).max())
            assert rel < 1e-5

    def test_loss_at_origin(self):
        # with w=0, b=0 every z=0: cross entropy log(2) per weighted sample
        X = np.ones((4, 2))
        y = np.array([0, 1, 0, 1])
        loss, _, _ = rm.loss_and_grad(np.zeros(2), 0.0, X, y, 1.0, 3.0)
        assert loss == pytest.approx((2 * 1.0 + 2 * 3.0) * math.log(2.0))


class TestTrainLogreg:
    def test_huge_penalty_shrinks_weights(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(60, 4))
        y = (X[:, 0] > 0).astype(int)
        w, b = rm.train_logreg(X, y, 1e9, 1.0)
        assert np.linalg.norm(w) < 1e-3

    def test_separable_sign_matches_grid_search(self):
        x = np.array([[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]])
        y = np.array([0, 0, 0, 1, 1, 1])
        # coarse grid-search oracle over (w, b)
        best = None
        for w_try in np.linspace(-3, 3, 121):
            for b_try in np.linspace(-3, 3, 121):
                loss, _, _ = rm.loss_and_grad(np.array([w_try]), b_try, x, y, 1.0, 1.0)
                if best is None or loss < best[0]:
                    best = (loss, w_try, b_try)
        assert best[1] > 0
        w, b = rm.train_logreg(x, y, 1.0, 1.0)
        assert w[0] > 0

    def test_stationarity_at_solution(self):
        rng = np.random.default_rng(8)
        cfg = rm.TrainConfig(seed=0)
        for _ in range(10):
            X, y, lam, w_pos = random_instance(rng)
            w, b = rm.train_logreg(X, y, lam, w_pos, cfg)
            _, gw, gb = rm.loss_and_grad(w, b, X, y, lam, w_pos)
            assert max(np.abs(gw).max(), abs(gb)) < cfg.grad_tol

    def test_final_loss_not_above_origin(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            X, y, lam, w_pos = random_instance(rng)
            w, b = rm.train_logreg(X, y, lam, w_pos)
            loss_final, _, _ = rm.loss_and_grad(w, b, X, y, lam, w_pos)
            loss_origin, _, _ = rm.loss_and_grad(np.zeros(X.shape[1]), 0.0, X, y, lam, w_pos)
            assert loss_final <= loss_origin + 1e-9

    def test_single_class_raises(self):
        X = np.ones((5, 2))
        with pytest.raises(SingleClass):
            rm.train_logreg(X, np.ones(5), 1.0, 1.0)


class TestPlatt:
    def test_recovers_identity_on_sigmoid_labels(self):
        rng = np.random.default_rng(4)
        z = rng.normal(scale=2.0, size=10_000)
        y = (rng.uniform(size=10_000) < expit(z)).astype(int)
        a, b = rm.fit_platt(z, y)
        assert abs(a - (-1.0)) < 0.1
        assert abs(b) < 0.1

    def test_symmetric_scores_give_zero_offset(self):
        z = np.array([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0])
        y = np.array([0, 0, 0, 1, 1, 1])
        a, b = rm.fit_platt(z, y)
        assert abs(b) < 1e-8
        assert a < 0

    def test_single_class(self):
        with pytest.raises(SingleClass):
            rm.fit_platt(np.array([1.0, 2.0]), np.array([1, 1]))

    def test_slope_never_positive(self):
        rng = np.random.default_rng(5)
        # scores anti-correlated with labels would want a > 0; must be pinned at 0
        z = rng.normal(size=500)
        y = (rng.uniform(size=500) < expit(-2 * z)).astype(int)
        a, b = rm.fit_platt(z, y)
        assert a <= 0


class TestPredictScore:
    def _model(self, weights, intercept=0.0, platt_a=-1.0, platt_b=0.0):
        d = len(weights)
        assert d == 29
        return rm.HorizonModel(
            t_hours=12,
            feature_names=rm.column_names(12),
            means=np.zeros(d),
            stds=np.ones(d),
            weights=np.asarray(weights, dtype=float),
            intercept=intercept,
            platt_a=platt_a,
            platt_b=platt_b,
            lam=1.0,
        )

    def test_zero_model_gives_half(self):
        model = self._model(np.zeros(29))
        z, p = rm.predict_score(model, np.zeros(29))
        assert (z, p) == (0.0, 0.5)

    def test_identity_calibration_is_sigmoid(self):
        rng = np.random.default_rng(6)
        model = self._model(rng.normal(size=29), intercept=0.3)
        x = rng.normal(size=29)
        z, p = rm.predict_score(model, x)
        assert p == expit(z)

    def test_matches_manual_recomputation(self):
        # independent recomputation with pure-python arithmetic
        rng = np.random.default_rng(7)
        means = rng.normal(size=29)
        stds = rng.uniform(0.5, 2.0, size=29)
        weights = rng.normal(size=29)
        model = rm.HorizonModel(
            t_hours=12, feature_names=rm.column_names(12), means=means, stds=stds,
            weights=weights, intercept=0.7, platt_a=-1.3, platt_b=0.2, lam=0.1,
        )
        x = rng.normal(size=29)
        x[4] = np.nan  # one missing slot: single window, falls back to the mean
        z_manual = 0.7
        for j in range(29):
            value = means[j] if j == 4 else x[j]
            z_manual += weights[j] * ((value - means[j]) / stds[j])
        p_manual = 1.0 / (1.0 + math.exp(-1.3 * z_manual + 0.2))
        z, p = rm.predict_score(model, x)
        assert z == pytest.approx(z_manual, abs=1e-12)
        assert p == pytest.approx(p_manual, abs=1e-12)

    def test_dimension_mismatch(self):
        model = self._model(np.zeros(29))
        with pytest.raises(DimensionMismatch):
            rm.predict_score(model, np.zeros(30))

    def test_monotone_in_positive_weight_feature(self):
        model = self._model(np.eye(29)[0] * 2.0, platt_a=-0.8)
        base = np.zeros(29)
        probs = []
        for bump in (0.0, 0.5, 1.0, 2.0):
            x = base.copy()
            x[0] += bump
            probs.append(rm.predict_score(model, x)[1])
        assert all(a < b for a, b in zip(probs, probs[1:]))


class TestSelectLambda:
    def test_single_grid_point(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(60, 3))
        y = (X[:, 0] + rng.normal(scale=0.5, size=60) > 0).astype(int)
        cfg = rm.TrainConfig(lambda_grid=(0.25,), seed=1)
        assert rm.select_lambda(X, y, cfg) == 0.25

    def test_stratified_folds_balance(self):
        rng = np.random.default_rng(11)
        y = np.array([1] * 13 + [0] * 87)
        rng.shuffle(y)
        folds = rm.stratified_folds(y, 5, np.random.default_rng(0))
        pos_counts = [int(y[f].sum()) for f in folds]
        assert max(pos_counts) - min(pos_counts) <= 1
        all_indices = np.sort(np.concatenate(folds))
        assert np.array_equal(all_indices, np.arange(100))

    def test_deterministic(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(80, 4))
        y = (X[:, 0] > 0.2).astype(int)
        cfg = rm.TrainConfig(seed=9)
        assert rm.select_lambda(X, y, cfg) == rm.select_lambda(X, y, cfg)


@pytest.fixture(scope="module")
def trained(medium_store):
    cfg = rm.TrainConfig(seed=3, lambda_grid=(0.1, 10.0), bootstrap_resamples=200)
    with warnings.catch_warnings():
        warnings.simplefilter("error", category=UserWarning)
        bundle, report = rm.train_all_horizons(medium_store, cfg)
    return bundle, report


class TestTrainAllHorizons:
    def test_model_dims_follow_horizons(self, trained):
        bundle, _ = trained
        assert len(bundle.horizon_models) >= 1
        for model in bundle.horizon_models:
            assert model.dim == feature_dim(model.t_hours)

    def test_horizons_strictly_increasing(self, trained):
        bundle, _ = trained
        ts = [m.t_hours for m in bundle.horizon_models]
        assert ts == sorted(ts) and len(set(ts)) == len(ts)

    def test_skipped_horizons_recorded(self, trained):
        bundle, report = trained
        covered = {m.t_hours for m in bundle.horizon_models} | {t for t, _ in report.skipped}
        assert covered == set(HORIZONS)

    def test_calibration_preserves_ranking(self, medium_store, trained):
        from icutl.features import horizon_matrices

        bundle, _ = trained
        mats = horizon_matrices(medium_store, [m.t_hours for m in bundle.horizon_models])
        for model in bundle.horizon_models:
            ids, X_raw, y = mats[model.t_hours]
            if len(np.unique(y)) < 2:
                continue
            X_std, _ = impute_and_standardize(X_raw, (model.means, model.stds))
            z = X_std @ model.weights + model.intercept
            p = expit(-(model.platt_a * z + model.platt_b))
            assert metrics.auc(p, y) == pytest.approx(metrics.auc(z, y), abs=1e-12)

    def test_deterministic_bundle_bytes(self, medium_store):
        cfg = rm.TrainConfig(seed=3, lambda_grid=(0.1, 10.0), bootstrap_resamples=200)
        a, _ = rm.train_all_horizons(medium_store, cfg)
        b, _ = rm.train_all_horizons(medium_store, cfg)
        assert rm.bundle_to_json(a) == rm.bundle_to_json(b)

    def test_bundle_round_trip(self, trained, tmp_path):
        bundle, _ = trained
        path = tmp_path / "bundle.json"
        rm.write_bundle(bundle, path)
        again = rm.read_bundle(path)
        assert rm.bundle_to_json(again) == rm.bundle_to_json(bundle)

    def test_report_rows_match_models(self, trained):
        bundle, report = trained
        assert {h.t_hours for h in report.horizons} == {m.t_hours for m in bundle.horizon_models}
        for h in report.horizons:
            assert 0.0 <= h.auc <= 1.0
            assert h.auc_ci_lo <= h.auc_ci_hi
            assert sum(c for _, _, c in h.calibration_bins) == h.n_patients


class TestBundleValidation:
    def test_rejects_wrong_array_length(self, trained):
        bundle, _ = trained
        body = rm.bundle_to_json_dict(bundle)
        body["horizons"][0]["weights"] = body["horizons"][0]["weights"][:-1]
        with pytest.raises(SchemaViolation):
            rm.bundle_from_json_dict(body)

    def test_rejects_unknown_keys(self, trained):
        bundle, _ = trained
        body = rm.bundle_to_json_dict(bundle)
        body["extra"] = 1
        with pytest.raises(SchemaViolation):
            rm.bundle_from_json_dict(body)

    def test_rejects_nonincreasing_horizons(self, trained):
        bundle, _ = trained
        body = rm.bundle_to_json_dict(bundle)
        if len(body["horizons"]) >= 2:
            body["horizons"][1] = dict(body["horizons"][0])
            with pytest.raises(SchemaViolation):
                rm.bundle_from_json_dict(body)

    def test_rejects_bad_lambda(self, trained):
        bundle, _ = trained
        body = rm.bundle_to_json_dict(bundle)
        body["horizons"][0]["lambda"] = 0.0
        with pytest.raises(SchemaViolation):
            rm.bundle_from_json_dict(body)


class TestRiskTimeline:
    def test_points_at_elapsed_horizons(self, medium_store, trained):
        bundle, _ = trained
        # pick a stay of >= 30h: expect exactly the horizons <= elapsed
        for stay in medium_store.icustays.values():
            elapsed = (stay.outtime - stay.intime) // 3600
            if elapsed >= 30:
                series = rm.risk_timeline(bundle, medium_store, stay.icustay_id)
                expected = [m.t_hours for m in bundle.horizon_models if m.t_hours <= elapsed]
                got = [(t - stay.intime) // 3600 for t, _ in series.points]
                assert got == expected
                assert all(0.0 <= p <= 1.0 for _, p in series.points)
                break

    def test_short_stay_empty(self, small_store, trained, tmp_path):
        bundle, _ = trained
        from conftest import write_dataset
        from icutl.datastore import ingest

        store = ingest(
            write_dataset(
                tmp_path / "short",
                icustays=[(1011, 101, 1, "2150-01-01T06:00:00", "2150-01-01T13:00:00", "MICU")],
            )
        )
        series = rm.risk_timeline(bundle, store, 1011)
        assert series.points == []

    def test_unknown_stay(self, medium_store, trained):
        from icutl.errors import UnknownStay

        bundle, _ = trained
        with pytest.raises(UnknownStay):
            rm.risk_timeline(bundle, medium_store, 123456789)

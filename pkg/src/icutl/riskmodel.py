"""Horizon-indexed mortality models: class-weighted L2 logistic regression,
5-fold cross-validated regularization choice, and Platt-scaled probabilities.

One model is trained per 12-hour horizon over the first seven ICU days; each
sees the cumulative window means available at its horizon, so dimensionality
grows from 29 columns at 12 hours to 406 at 168 hours.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from . import metrics
from .datastore import HOUR, Datastore, ts_to_iso
from .errors import (
    DimensionMismatch,
    NotConvergedWarning,
    SchemaViolation,
    SingleClass,
    UnknownStay,
)
from .features import (
    FEATURE_NAMES,
    HORIZONS,
    extract_features,
    feature_dim,
    horizon_matrices,
    impute_and_standardize,
)
from .jsonutil import canonical_dumps
from .timeline import RiskSeries

DEFAULT_LAMBDA_GRID = tuple(10.0 ** k for k in range(-3, 4))


@dataclass(frozen=True)
class TrainConfig:
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    cv_folds: int = 5
    seed: int = 0
    max_iter: int = 10_000
    grad_tol: float = 1e-6
    test_fraction: float = 0.3
    bootstrap_resamples: int = 1000

    def __post_init__(self):
        if len(self.lambda_grid) == 0 or any(l <= 0 for l in self.lambda_grid):
            raise ValueError("lambda_grid must be nonempty and positive")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")


@dataclass
class HorizonModel:
    t_hours: int
    feature_names: list  # one per column, window-major
    means: np.ndarray
    stds: np.ndarray
    weights: np.ndarray
    intercept: float
    platt_a: float
    platt_b: float
    lam: float

    def __post_init__(self):
        d = feature_dim(self.t_hours)
        for name in ("feature_names", "means", "stds", "weights"):
            if len(getattr(self, name)) != d:
                raise SchemaViolation(f"t={self.t_hours}: {name} must have length {d}")

    @property
    def dim(self) -> int:
        return len(self.weights)


@dataclass
class RiskModelBundle:
    bundle_id: str
    created_at: str
    seed: int
    horizon_models: list = field(default_factory=list)  # ascending t_hours

    def model_for(self, t_hours: int):
        for m in self.horizon_models:
            if m.t_hours == t_hours:
                return m
        return None


def column_names(t_hours: int) -> list[str]:
    return [f"{name}@w{w}" for w in range(t_hours // 12) for name in FEATURE_NAMES]


# --- weighted L2 logistic regression -----------------------------------------


def loss_and_grad(w, b, X, y, lam, w_pos):
    """Weighted cross-entropy plus (lam/2)||w||^2; intercept unpenalized.

    Returns (loss, grad_w, grad_b). Positive rows carry cost w_pos, negative
    rows cost 1.
    """
    w = np.asarray(w, dtype=np.float64)
    z = X @ w + b
    c = np.where(y == 1, float(w_pos), 1.0)
    ce = np.logaddexp(0.0, z) - y * z
    loss = float(c @ ce) + 0.5 * lam * float(w @ w)
    r = c * (expit(z) - y)
    return loss, X.T @ r + lam * w, float(r.sum())


def _check_two_classes(y):
    if len(np.unique(y)) < 2:
        raise SingleClass("training labels contain a single class")


def train_logreg(X, y, lam, w_pos, cfg: TrainConfig = TrainConfig()):
    """Minimize the weighted penalized loss to ||grad||_inf < cfg.grad_tol.

    L-BFGS covers the bulk of the descent (it walks the long flat valleys of
    near-separable fits far better than pure second-order steps), then damped
    Newton polishing drives the gradient below the tolerance; the objective is
    strictly convex in w, so the certificate is global. Hitting cfg.max_iter
    first warns and returns the best iterate.
    """
    from scipy.optimize import minimize

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_two_classes(y)
    n, d = X.shape
    c = np.where(y == 1, float(w_pos), 1.0)

    def objective(wb):
        loss, gw, gb = loss_and_grad(wb[:d], wb[d], X, y, lam, w_pos)
        return loss, np.append(gw, gb)

    result = minimize(
        objective,
        np.zeros(d + 1),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": cfg.max_iter, "maxcor": 20, "ftol": 1e-15,
                 "gtol": 0.1 * cfg.grad_tol, "maxls": 60},
    )
    w, b = result.x[:d], float(result.x[d])

    loss, gw, gb = loss_and_grad(w, b, X, y, lam, w_pos)
    converged = False
    for _ in range(min(cfg.max_iter, 100)):
        gmax = max(np.abs(gw).max(initial=0.0), abs(gb))
        if gmax < cfg.grad_tol:
            converged = True
            break
        p = expit(X @ w + b)
        s = c * p * (1.0 - p)
        H = np.empty((d + 1, d + 1))
        H[:d, :d] = X.T @ (X * s[:, None])
        H[:d, :d][np.diag_indices(d)] += lam
        H[:d, d] = H[d, :d] = X.T @ s
        H[d, d] = s.sum()
        H[np.diag_indices(d + 1)] += 1e-10 * (1.0 + lam)
        g = np.append(gw, gb)
        step = np.linalg.solve(H, -g)
        t = 1.0
        descent = float(g @ step)
        accepted = False
        slack = 1e-10 * (1.0 + abs(loss))
        for _bt in range(60):
            w_new = w + t * step[:d]
            b_new = b + t * step[d]
            loss_new, gw_new, gb_new = loss_and_grad(w_new, b_new, X, y, lam, w_pos)
            # near the optimum the loss change sinks below float resolution;
            # a halved gradient norm at unchanged loss is still progress
            gmax_new = max(np.abs(gw_new).max(initial=0.0), abs(gb_new))
            if loss_new <= loss + 1e-4 * t * descent or (
                gmax_new < 0.5 * gmax and loss_new <= loss + slack
            ):
                accepted = True
                break
            t *= 0.5
        if not accepted and gmax_new >= gmax:
            break  # no representable improvement left
        w, b, loss, gw, gb = w_new, b_new, loss_new, gw_new, gb_new
    converged = converged or max(np.abs(gw).max(initial=0.0), abs(gb)) < cfg.grad_tol
    if not converged:
        warnings.warn("gradient tolerance not reached; returning best iterate", NotConvergedWarning)
    return w, float(b)


# --- Platt scaling ------------------------------------------------------------


def fit_platt(z_scores, labels, max_iter: int = 200):
    """Fit p = 1 / (1 + exp(a z + b)) by Newton on the smoothed-target NLL.

    Targets are (N+ + 1)/(N+ + 2) and 1/(N- + 2). The slope is constrained to
    a <= 0 so that calibration preserves the score ranking.
    """
    z = np.asarray(z_scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    _check_two_classes(y)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    t = np.where(y == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def nll(a, b):
        u = a * z + b
        return float(t @ np.logaddexp(0.0, u) + (1.0 - t) @ np.logaddexp(0.0, -u))

    def newton(a, b, fit_a=True):
        f = nll(a, b)
        for _ in range(max_iter):
            u = a * z + b
            p = expit(-u)
            resid = t - p
            ga = float(resid @ z)
            gb = float(resid.sum())
            gmax = max(abs(ga), abs(gb)) if fit_a else abs(gb)
            if gmax < 1e-10:
                break
            s = p * (1.0 - p)
            if fit_a:
                H = np.array([[float(s @ (z * z)), float(s @ z)], [float(s @ z), float(s.sum())]])
                H[np.diag_indices(2)] += 1e-12
                da, db = np.linalg.solve(H, [-ga, -gb])
            else:
                da, db = 0.0, -gb / (float(s.sum()) + 1e-12)
            step = 1.0
            for _bt in range(60):
                f_new = nll(a + step * da, b + step * db)
                if f_new <= f + 1e-4 * step * (ga * da + gb * db):
                    break
                step *= 0.5
            a, b, f = a + step * da, b + step * db, f_new
        return a, b

    a0 = 0.0
    b0 = float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    a, b = newton(a0, b0)
    if a > 0.0:  # anti-correlated scores: pin the slope, refit the offset
        a, b = newton(0.0, b0, fit_a=False)
    return float(a), float(b)


def predict_score(model: HorizonModel, x_raw):
    """(decision score, calibrated probability) for one raw feature vector."""
    x = np.asarray(x_raw, dtype=np.float64)
    if x.ndim != 1 or len(x) != model.dim:
        raise DimensionMismatch(f"expected vector of length {model.dim}, got {x.shape}")
    x_std, _ = impute_and_standardize(x, (model.means, model.stds))
    z = float(model.weights @ x_std + model.intercept)
    p = float(expit(-(model.platt_a * z + model.platt_b)))
    return z, p


# --- cross-validation ---------------------------------------------------------


def stratified_folds(y, n_folds: int, rng) -> list[np.ndarray]:
    """Index arrays per fold; per-fold positive counts differ by at most one."""
    y = np.asarray(y)
    folds: list[list[int]] = [[] for _ in range(n_folds)]
    for cls in (1, 0):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        for i, sample in enumerate(idx):
            folds[i % n_folds].append(int(sample))
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


def _oof_scores(X, y, lam, folds, cfg):
    """Out-of-fold decision scores, training on the remaining folds each time."""
    z = np.full(len(y), np.nan)
    fold_aucs = []
    for held in folds:
        train_idx = np.setdiff1d(np.arange(len(y)), held)
        y_tr = y[train_idx]
        n_pos = int(y_tr.sum())
        if n_pos == 0 or n_pos == len(y_tr):
            raise SingleClass("a cross-validation training split has a single class")
        w_pos = (len(y_tr) - n_pos) / n_pos
        w, b = train_logreg(X[train_idx], y_tr, lam, w_pos, cfg)
        z[held] = X[held] @ w + b
        if 0 < y[held].sum() < len(held):
            fold_aucs.append(metrics.auc(z[held], y[held]))
    return z, (float(np.mean(fold_aucs)) if fold_aucs else 0.5)


def select_lambda_with_oof(X, y, cfg: TrainConfig):
    """(lambda, out-of-fold scores at that lambda): grid point with the best
    mean out-of-fold AUC, ties resolved toward the smaller lambda."""
    _check_two_classes(y)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 211)))
    folds = stratified_folds(y, cfg.cv_folds, rng)
    best = None
    for lam in sorted(cfg.lambda_grid):
        z, mean_auc = _oof_scores(X, y, lam, folds, cfg)
        if best is None or mean_auc > best[0]:
            best = (mean_auc, lam, z)
    return best[1], best[2]


def select_lambda(X, y, cfg: TrainConfig) -> float:
    lam, _ = select_lambda_with_oof(np.asarray(X, dtype=np.float64), np.asarray(y), cfg)
    return lam


# --- whole-pipeline training ---------------------------------------------------


def _child_cfg(cfg: TrainConfig, t_hours: int) -> TrainConfig:
    child_seed = int(np.random.SeedSequence((cfg.seed, t_hours)).generate_state(1)[0])
    return replace(cfg, seed=child_seed)


def _stratified_split(y, test_fraction, rng):
    test_idx = []
    for cls in (1, 0):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        n_test = int(round(test_fraction * len(idx)))
        test_idx.extend(idx[:n_test].tolist())
    test = np.sort(np.array(test_idx, dtype=np.int64))
    train = np.setdiff1d(np.arange(len(y)), test)
    return train, test


def train_all_horizons(store: Datastore, cfg: TrainConfig = TrainConfig()):
    """Train every 12h..168h horizon; returns (bundle, held-out evaluation report).

    Per horizon: build the cohort, split 70/30 stratified, pick lambda by
    5-fold CV on the training split, train on it, fit Platt scaling on the
    out-of-fold CV scores, and evaluate on the untouched test split. Horizons
    that cannot support training are recorded as skipped, not fatal.
    """
    bundle = RiskModelBundle(bundle_id="", created_at="", seed=cfg.seed)
    report = metrics.EvaluationReport()
    matrices = horizon_matrices(store)
    for t in HORIZONS:
        child = _child_cfg(cfg, t)
        try:
            ids, X_raw, y = matrices[t]
            n_pos = int(y.sum())
            n_neg = len(y) - n_pos
            if min(n_pos, n_neg) < child.cv_folds:
                raise SingleClass(
                    f"cohort has {n_pos} positives / {n_neg} negatives; "
                    f"need at least {child.cv_folds} of each"
                )
            rng = np.random.default_rng(np.random.SeedSequence((child.seed, 101)))
            train_idx, test_idx = _stratified_split(y, child.test_fraction, rng)
            if len(np.unique(y[test_idx])) < 2 or len(np.unique(y[train_idx])) < 2:
                raise SingleClass("stratified split left a single-class side")
            X_train, stats = impute_and_standardize(X_raw[train_idx])
            X_test, _ = impute_and_standardize(X_raw[test_idx], stats)
            y_train, y_test = y[train_idx], y[test_idx]

            lam, z_oof = select_lambda_with_oof(X_train, y_train, child)
            w_pos = float(np.sum(y_train == 0)) / float(np.sum(y_train == 1))
            w, b = train_logreg(X_train, y_train, lam, w_pos, child)
            platt_a, platt_b = fit_platt(z_oof, y_train)

            model = HorizonModel(
                t_hours=t,
                feature_names=column_names(t),
                means=stats[0],
                stds=stats[1],
                weights=w,
                intercept=b,
                platt_a=platt_a,
                platt_b=platt_b,
                lam=lam,
            )
            bundle.horizon_models.append(model)

            z_test = X_test @ w + b
            p_test = expit(-(platt_a * z_test + platt_b))
            ci_seed = int(np.random.SeedSequence((child.seed, 303)).generate_state(1)[0])
            lo, hi = metrics.bootstrap_auc_ci(p_test, y_test, child.bootstrap_resamples, seed=ci_seed)
            hl_chi2, hl_dof, hl_p = metrics.hosmer_lemeshow(p_test, y_test)
            report.horizons.append(
                metrics.HorizonEvaluation(
                    t_hours=t,
                    n_patients=len(y_test),
                    n_events=int(y_test.sum()),
                    auc=metrics.auc(p_test, y_test),
                    auc_ci_lo=lo,
                    auc_ci_hi=hi,
                    hl_chi2=hl_chi2,
                    hl_dof=hl_dof,
                    hl_p=hl_p,
                    calibration_bins=metrics.calibration_deciles(p_test, y_test),
                )
            )
        except (SingleClass, metrics.TooFew) as exc:
            report.skipped.append((t, str(exc)))
    if store.admissions:
        bundle.created_at = ts_to_iso(max(a.dischtime for a in store.admissions.values()))
    digest = hashlib.sha256(canonical_dumps(_horizons_json(bundle)).encode()).hexdigest()[:12]
    bundle.bundle_id = f"bundle-{cfg.seed}-{digest}"
    return bundle, report


def evaluate_bundle(bundle: RiskModelBundle, store: Datastore, seed: int = 0,
                    n_resamples: int = 1000):
    """Evaluate an existing bundle against every eligible stay of a dataset."""
    report = metrics.EvaluationReport()
    matrices = horizon_matrices(store, [m.t_hours for m in bundle.horizon_models])
    features_by_horizon = {}
    for model in bundle.horizon_models:
        t = model.t_hours
        ids, X_raw, y = matrices[t]
        features_by_horizon[t] = (ids, X_raw, y)
        if len(y) < 10 or len(np.unique(y)) < 2:
            report.skipped.append((t, f"cohort of {len(y)} with single class or too few rows"))
            continue
        X_std, _ = impute_and_standardize(X_raw, (model.means, model.stds))
        z = X_std @ model.weights + model.intercept
        p = expit(-(model.platt_a * z + model.platt_b))
        ci_seed = int(np.random.SeedSequence((seed, t)).generate_state(1)[0])
        lo, hi = metrics.bootstrap_auc_ci(p, y, n_resamples, seed=ci_seed)
        hl_chi2, hl_dof, hl_p = metrics.hosmer_lemeshow(p, y)
        report.horizons.append(
            metrics.HorizonEvaluation(
                t_hours=t,
                n_patients=len(y),
                n_events=int(y.sum()),
                auc=metrics.auc(p, y),
                auc_ci_lo=lo,
                auc_ci_hi=hi,
                hl_chi2=hl_chi2,
                hl_dof=hl_dof,
                hl_p=hl_p,
                calibration_bins=metrics.calibration_deciles(p, y),
            )
        )
    return report, features_by_horizon


def risk_timeline(bundle: RiskModelBundle, store: Datastore, icustay_id: int) -> RiskSeries:
    """Dynamic per-stay risk: one calibrated point per horizon already elapsed,
    placed at intime + t. Stays under 12 hours yield an empty series."""
    stay = store.icustays.get(int(icustay_id))
    if stay is None:
        raise UnknownStay(icustay_id)
    elapsed_hours = (stay.outtime - stay.intime) // HOUR
    eligible = [m for m in sorted(bundle.horizon_models, key=lambda m: m.t_hours)
                if m.t_hours <= elapsed_hours]
    if not eligible:
        return RiskSeries(model_id=bundle.bundle_id, points=[])
    # one extraction at the largest horizon; shorter vectors are its prefixes
    x_full = extract_features(store, icustay_id, eligible[-1].t_hours)
    points = []
    for model in eligible:
        _, p = predict_score(model, x_full[:model.dim])
        points.append((stay.intime + model.t_hours * HOUR, p))
    return RiskSeries(model_id=bundle.bundle_id, points=points)


# --- bundle (de)serialization ---------------------------------------------------


def _horizons_json(bundle: RiskModelBundle) -> list:
    out = []
    for m in sorted(bundle.horizon_models, key=lambda m: m.t_hours):
        out.append(
            {
                "t_hours": m.t_hours,
                "feature_names": list(m.feature_names),
                "means": [float(v) for v in m.means],
                "stds": [float(v) for v in m.stds],
                "weights": [float(v) for v in m.weights],
                "intercept": float(m.intercept),
                "platt_a": float(m.platt_a),
                "platt_b": float(m.platt_b),
                "lambda": float(m.lam),
            }
        )
    return out


def bundle_to_json_dict(bundle: RiskModelBundle) -> dict:
    return {
        "bundle_id": bundle.bundle_id,
        "created_at": bundle.created_at,
        "seed": bundle.seed,
        "horizons": _horizons_json(bundle),
    }


def bundle_to_json(bundle: RiskModelBundle) -> str:
    return canonical_dumps(bundle_to_json_dict(bundle))


def _require(cond, message):
    if not cond:
        raise SchemaViolation(message)


def bundle_from_json_dict(body) -> RiskModelBundle:
    """Validate and load a bundle dict (shared by file loads and the import API)."""
    _require(isinstance(body, dict), "bundle must be a JSON object")
    required = {"bundle_id", "created_at", "seed", "horizons"}
    _require(set(body) == required, f"bundle keys must be exactly {sorted(required)}")
    _require(isinstance(body["bundle_id"], str) and body["bundle_id"], "bundle_id must be a nonempty string")
    _require(isinstance(body["created_at"], str), "created_at must be a string")
    _require(isinstance(body["seed"], int), "seed must be an integer")
    _require(isinstance(body["horizons"], list) and body["horizons"], "horizons must be a nonempty array")
    _require(len(body["horizons"]) <= len(HORIZONS), f"at most {len(HORIZONS)} horizon models")
    bundle = RiskModelBundle(
        bundle_id=body["bundle_id"], created_at=body["created_at"], seed=body["seed"]
    )
    previous_t = 0
    for entry in body["horizons"]:
        _require(isinstance(entry, dict), "each horizon must be an object")
        keys = {"t_hours", "feature_names", "means", "stds", "weights",
                "intercept", "platt_a", "platt_b", "lambda"}
        _require(set(entry) == keys, f"horizon keys must be exactly {sorted(keys)}")
        t = entry["t_hours"]
        _require(isinstance(t, int) and t in HORIZONS, f"t_hours must be one of {list(HORIZONS)}")
        _require(t > previous_t, "horizons must be strictly increasing in t_hours")
        previous_t = t
        d = feature_dim(t)
        for name in ("feature_names", "means", "stds", "weights"):
            _require(isinstance(entry[name], list) and len(entry[name]) == d,
                     f"t={t}: {name} must be an array of length {d}")
        _require(all(isinstance(v, str) for v in entry["feature_names"]),
                 f"t={t}: feature_names must be strings")
        arrays = {}
        for name in ("means", "stds", "weights"):
            try:
                arr = np.asarray(entry[name], dtype=np.float64)
            except (TypeError, ValueError):
                raise SchemaViolation(f"t={t}: {name} must be numeric") from None
            _require(np.isfinite(arr).all(), f"t={t}: {name} must be finite")
            arrays[name] = arr
        for name in ("intercept", "platt_a", "platt_b", "lambda"):
            _require(isinstance(entry[name], (int, float)) and np.isfinite(entry[name]),
                     f"t={t}: {name} must be a finite number")
        _require(entry["lambda"] > 0, f"t={t}: lambda must be positive")
        bundle.horizon_models.append(
            HorizonModel(
                t_hours=t,
                feature_names=list(entry["feature_names"]),
                means=arrays["means"],
                stds=arrays["stds"],
                weights=arrays["weights"],
                intercept=float(entry["intercept"]),
                platt_a=float(entry["platt_a"]),
                platt_b=float(entry["platt_b"]),
                lam=float(entry["lambda"]),
            )
        )
    return bundle


def write_bundle(bundle: RiskModelBundle, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(bundle_to_json(bundle))
        fh.write("\n")


def read_bundle(path) -> RiskModelBundle:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        return bundle_from_json_dict(json.load(fh))

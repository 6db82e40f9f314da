"""Full-reference quality prediction from appearance-encoder statistics.

Each image is described by the channel means and standard deviations of the
four appearance-encoder stage outputs, at full and half resolution.  The
quality feature of a (reference, test) pair is the absolute difference of
the two descriptors, mapped to opinion scores by a linear regressor.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy import stats
from sklearn.cross_decomposition import PLSRegression
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LassoLars, Ridge
from sklearn.model_selection import KFold
from sklearn.svm import LinearSVR

from .errors import ConfigError, DataError, ShapeError
from .network import DualHeadUNet, image_to_tensor
from .pixelcore import Image, read_image

log = logging.getLogger(__name__)

SCALES = (1.0, 0.5)
POOLS = ("mean", "std")
METHODS = ("PLS_SVR", "LASSO", "RIDGE")

PLS_COMPONENTS = (16, 32, 64, 128)
SVR_C = (0.1, 1.0, 10.0)
SVR_EPSILON = (0.1, 0.5)
LASSO_ALPHA = (1e-4, 1e-3, 1e-2, 1e-1)
RIDGE_ALPHA = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0)


# -- features --------------------------------------------------------------------------

@dataclass
class QualityFeatures:
    z: np.ndarray
    scale_tags: np.ndarray
    pool_tags: np.ndarray


def feature_tags(block_channels: list[int]) -> tuple[np.ndarray, np.ndarray]:
    """Scale and pool tag of every coordinate, in extraction order."""
    n = sum(block_channels)
    scale = np.concatenate([np.full(2 * n, s) for s in SCALES])
    pool = np.tile(np.repeat(np.array(POOLS), n), len(SCALES))
    return scale, pool


def feature_length(block_channels: list[int]) -> int:
    return len(SCALES) * len(POOLS) * sum(block_channels)


def pad_to_multiple(px: np.ndarray, multiple: int = 32) -> np.ndarray:
    h, w = px.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return px
    return np.pad(px, ((0, ph), (0, pw), (0, 0)), mode="symmetric")


def downscale_half(img: Image) -> Image:
    """Antialiased bilinear downscaling by two."""
    t = image_to_tensor(img, torch.float64)
    h, w = max(img.height // 2, 1), max(img.width // 2, 1)
    out = F.interpolate(t, size=(h, w), mode="bilinear", antialias=True, align_corners=False)
    return img.with_pixels(out[0].numpy().transpose(1, 2, 0))


def _pooled_stats(model: DualHeadUNet, img: Image) -> tuple[np.ndarray, np.ndarray]:
    dtype = next(model.parameters()).dtype
    x = image_to_tensor(pad_to_multiple(img.pixels), dtype)
    with torch.no_grad():
        maps = model.appearance_maps(x)
    mean = torch.cat([m.mean(dim=(2, 3))[0] for m in maps])
    std = torch.cat([m.std(dim=(2, 3), unbiased=False)[0] for m in maps])
    return mean.double().numpy(), std.double().numpy()


def extract_features(img: Image, model: DualHeadUNet | None) -> QualityFeatures:
    """Concatenate [mean, std] at full scale then [mean, std] at half scale."""
    if model is None:
        raise ConfigError("no model loaded")
    parts = []
    for scale in SCALES:
        src = img if scale == 1.0 else downscale_half(img)
        parts.extend(_pooled_stats(model, src))
    tags = feature_tags(model.config.block_channels)
    return QualityFeatures(np.concatenate(parts), *tags)


def fr_feature(z_ref: np.ndarray, z_dis: np.ndarray) -> np.ndarray:
    z_ref, z_dis = np.asarray(z_ref, dtype=np.float64), np.asarray(z_dis, dtype=np.float64)
    if z_ref.shape != z_dis.shape:
        raise ShapeError(f"feature lengths differ: {z_ref.shape} vs {z_dis.shape}")
    return np.abs(z_ref - z_dis)


def video_features(frames: list[np.ndarray]) -> np.ndarray:
    if len(frames) == 0:
        raise DataError("no frames to average")
    return np.mean(np.stack([np.asarray(f, dtype=np.float64) for f in frames]), axis=0)


# -- metrics ------------------------------------------------------------------------------

def metrics(pred, truth) -> tuple[float, float, float]:
    """Pearson, Spearman (average ranks for ties) and RMSE."""
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ShapeError("prediction and truth must be equal-length vectors")
    if len(pred) < 3:
        raise DataError("need at least three scores")
    if np.ptp(pred) == 0 or np.ptp(truth) == 0:
        raise DataError("correlation undefined for a constant vector")
    pcc = float(np.corrcoef(pred, truth)[0, 1])
    rp, rt = stats.rankdata(pred), stats.rankdata(truth)
    n = len(pred)
    if len(np.unique(pred)) == n and len(np.unique(truth)) == n:
        # distinct ranks: the rank-difference form is exact in integer arithmetic
        d2 = int(np.sum((rp - rt).astype(np.int64) ** 2))
        srocc = 1 - 6 * d2 / (n * (n * n - 1))
    else:
        srocc = float(np.corrcoef(rp, rt)[0, 1])
    rmse = float(np.sqrt(np.mean((pred - truth) ** 2)))
    return pcc, srocc, rmse


def _selection_score(pred, truth) -> float:
    try:
        pcc, srocc, _ = metrics(pred, truth)
    except DataError:
        return -1.0
    return 0.5 * (pcc + srocc)


# -- regressors ---------------------------------------------------------------------------

@dataclass
class LinearModel:
    """A fitted regressor collapsed to ``score = X @ weights + bias``."""

    weights: np.ndarray
    bias: float
    method: str
    params: dict = field(default_factory=dict)
    cv_score: float = float("nan")

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.bias


def _standardize(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd < 1e-12] = 1.0
    return mu, sd


def _pls_stage(Xs, ys, n_components: int):
    pls = PLSRegression(n_components=n_components, scale=False).fit(Xs, ys)
    T = pls.transform(Xs)
    mt, st = _standardize(T)
    return pls, T, mt, st


def _fit_once(X, y, method: str, params: dict, seed: int = 0, pls_stage=None) -> LinearModel:
    """Fit one regressor and collapse it to a linear model on raw features.

    ``pls_stage`` may carry a PLS projection already fitted on the same data,
    which the SVR hyperparameter grid shares.
    """
    mu, sd = _standardize(X)
    Xs = (X - mu) / sd
    my, sy = y.mean(), y.std()
    ys = (y - my) / sy
    if method == "RIDGE":
        reg = Ridge(alpha=params["alpha"]).fit(Xs, ys)
        u, c = reg.coef_, reg.intercept_
    elif method == "LASSO":
        # LARS solves the same objective exactly; coordinate descent stalls on correlated features
        reg = LassoLars(alpha=params["alpha"]).fit(Xs, ys)
        u, c = reg.coef_, reg.intercept_
    elif method == "PLS_SVR":
        pls, T, mt, st = pls_stage or _pls_stage(Xs, ys, params["n_components"])
        svr = LinearSVR(C=params["C"], epsilon=params["epsilon"], loss="epsilon_insensitive",
                        max_iter=20000, random_state=seed, dual=True)
        svr.fit((T - mt) / st, ys)
        v = svr.coef_ / st
        u = pls.x_rotations_ @ v
        c = float(svr.intercept_[0]) - mt @ v - pls._x_mean @ u
    else:
        raise ConfigError(f"unknown regression method {method!r}")
    w = sy * u / sd
    b = float(sy * (c - (mu / sd) @ u) + my)
    return LinearModel(w, b, method, dict(params))


def _pls_cache(X, y):
    """Memoised PLS stages keyed by (row subset, component count)."""
    cache = {}

    def get(rows, k):
        key = (rows.tobytes(), k)
        if key not in cache:
            Xr, yr = X[rows], y[rows]
            mu, sd = _standardize(Xr)
            cache[key] = _pls_stage((Xr - mu) / sd, (yr - yr.mean()) / yr.std(), k)
        return cache[key]

    return get


def _grid(method: str, n_train: int, n_features: int) -> list[dict]:
    if method == "RIDGE":
        return [{"alpha": a} for a in RIDGE_ALPHA]
    if method == "LASSO":
        return [{"alpha": a} for a in LASSO_ALPHA]
    if method == "PLS_SVR":
        cap = max(1, min(n_features, n_train - 1))
        comps = sorted({min(k, cap) for k in PLS_COMPONENTS})
        return [{"n_components": k, "C": C, "epsilon": e}
                for k in comps for C in SVR_C for e in SVR_EPSILON]
    raise ConfigError(f"unknown regression method {method!r}")


def fit_regressor(X, y, method: str = "RIDGE", inner_folds: int = 5, seed: int = 0) -> LinearModel:
    """Select hyperparameters by inner k-fold CV on mean(PCC, SROCC), then refit."""
    import warnings

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) != len(y):
        raise ShapeError("feature rows and targets differ in count")
    if len(y) < 2 * inner_folds:
        raise DataError(f"need at least {2 * inner_folds} records, got {len(y)}")
    if np.ptp(y) == 0:
        raise DataError("constant targets cannot be regressed")
    n_inner = len(y) - -(-len(y) // inner_folds)
    kf = KFold(inner_folds, shuffle=True, random_state=seed)
    best, best_score = None, -np.inf
    pls = _pls_cache(X, y) if method == "PLS_SVR" else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for params in _grid(method, n_inner, X.shape[1]):
            scores = []
            for tr, va in kf.split(X):
                if np.ptp(y[tr]) == 0:
                    continue
                stage = pls(tr, params["n_components"]) if pls else None
                m = _fit_once(X[tr], y[tr], method, params, seed, stage)
                scores.append(_selection_score(m.predict(X[va]), y[va]))
            score = float(np.mean(scores)) if scores else -1.0
            if score > best_score:
                best, best_score = params, score
        model = _fit_once(X, y, method, best, seed)
    model.cv_score = best_score
    return model


# -- cross-validation ------------------------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    n_train: int
    n_test: int
    method: str
    params: dict
    pcc: float
    srocc: float
    rmse: float


@dataclass
class EvalReport:
    folds: list[FoldResult]
    median: dict
    mean: dict

    def to_json(self) -> str:
        return json.dumps({"folds": [asdict(f) for f in self.folds], "median": self.median,
                           "mean": self.mean}, indent=2, sort_keys=True)

    def table(self) -> str:
        lines = [f"{'fold':>4} {'method':>8} {'n_tr':>5} {'n_te':>5} {'PCC':>7} {'SROCC':>7} {'RMSE':>9}"]
        for f in self.folds:
            lines.append(f"{f.fold:>4} {f.method:>8} {f.n_train:>5} {f.n_test:>5} "
                         f"{f.pcc:>7.4f} {f.srocc:>7.4f} {f.rmse:>9.4f}")
        for name, agg in (("median", self.median), ("mean", self.mean)):
            lines.append(f"{name:>4} {'':>8} {'':>5} {'':>5} {agg['pcc']:>7.4f} "
                         f"{agg['srocc']:>7.4f} {agg['rmse']:>9.4f}")
        return "\n".join(lines)


def split_indices(n: int, rng: np.random.Generator, split: float = 0.8,
                  content_ids=None) -> tuple[np.ndarray, np.ndarray]:
    """Random train/test split; grouped by content when ids are given."""
    if content_ids is None:
        perm = rng.permutation(n)
        k = math.ceil(split * n)
        return np.sort(perm[:k]), np.sort(perm[k:])
    content_ids = np.asarray(content_ids)
    groups = np.unique(content_ids)
    perm = rng.permutation(len(groups))
    k = math.ceil(split * len(groups))
    train_groups = set(groups[perm[:k]].tolist())
    mask = np.array([c in train_groups for c in content_ids])
    return np.flatnonzero(mask), np.flatnonzero(~mask)


def cross_validate(X, y, content_ids=None, folds: int = 10, split: float = 0.8, seed: int = 0,
                   methods=METHODS, inner_folds: int = 5) -> EvalReport:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 10:
        raise DataError(f"need at least 10 records, got {len(y)}")
    rng = np.random.default_rng(seed)
    results = []
    for k in range(folds):
        tr, te = split_indices(len(y), rng, split, content_ids)
        if len(te) < 3:
            raise DataError("test split has fewer than three records")
        fitted = [fit_regressor(X[tr], y[tr], m, inner_folds, seed + k) for m in methods]
        best = max(fitted, key=lambda m: m.cv_score)
        pred = best.predict(X[te])
        try:
            pcc, srocc, rmse = metrics(pred, y[te])
        except DataError:
            pcc, srocc = 0.0, 0.0
            rmse = float(np.sqrt(np.mean((pred - y[te]) ** 2)))
        results.append(FoldResult(k, len(tr), len(te), best.method, best.params, pcc, srocc, rmse))
    agg = lambda fn: {m: float(fn([getattr(r, m) for r in results])) for m in ("pcc", "srocc", "rmse")}
    return EvalReport(results, agg(np.median), agg(np.mean))


# -- ablation --------------------------------------------------------------------------------

ABLATION_VARIANTS = (
    ("Single-Scale, Mean Pooling", (1.0,), ("mean",)),
    ("Multi-Scale, Mean Pooling", (1.0, 0.5), ("mean",)),
    ("Single-Scale, Mean+Std Pooling", (1.0,), ("mean", "std")),
    ("Multi-Scale, Mean+Std Pooling", (1.0, 0.5), ("mean", "std")),
)


def ablation_mask(scale_tags, pool_tags, scales, pools) -> np.ndarray:
    return np.isin(scale_tags, scales) & np.isin(pool_tags, pools)


def ablate(X, y, scale_tags, pool_tags, content_ids=None, **cv_kw) -> list[tuple[str, EvalReport]]:
    """Evaluate the four scale x pool variants by slicing one feature matrix."""
    rows = []
    for name, scales, pools in ABLATION_VARIANTS:
        mask = ablation_mask(scale_tags, pool_tags, scales, pools)
        rows.append((name, cross_validate(np.asarray(X)[:, mask], y, content_ids, **cv_kw)))
    return rows


def ablation_table(rows) -> str:
    lines = [f"{'variant':<32} {'PCC':>7} {'SROCC':>7} {'RMSE':>9}"]
    for name, rep in rows:
        m = rep.median
        lines.append(f"{name:<32} {m['pcc']:>7.4f} {m['srocc']:>7.4f} {m['rmse']:>9.4f}")
    return "\n".join(lines)


# -- records & cache --------------------------------------------------------------------------

@dataclass
class QualityRecord:
    ref_id: str
    dis_id: str
    mos: float
    content_id: str | None = None
    z: np.ndarray | None = None


def read_records(path: str | Path) -> list[QualityRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"records file not found: {path}")
    out = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"ref_path", "dis_path", "mos"} - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"records file lacks columns {sorted(missing)}")
        for row in reader:
            try:
                mos = float(row["mos"])
            except ValueError:
                raise DataError(f"bad mos value {row['mos']!r}") from None
            out.append(QualityRecord(row["ref_path"], row["dis_path"], mos,
                                     row.get("content_id") or None))
    return out


class FeatureCache:
    """Per-image pooled features in an ``.npz`` keyed by image, model, scale and pool."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self.data: dict[str, np.ndarray] = {}
        if self.path and self.path.exists():
            with np.load(self.path) as f:
                self.data = {k: f[k] for k in f.files}

    @staticmethod
    def key(image_id: str, checksum: str, scale: float, pool: str) -> str:
        return f"{image_id}|{checksum}|{scale}|{pool}"

    def get(self, image_id, checksum, block_channels) -> np.ndarray | None:
        parts = []
        for scale in SCALES:
            for pool in POOLS:
                k = self.key(image_id, checksum, scale, pool)
                if k not in self.data:
                    return None
                parts.append(self.data[k])
        return np.concatenate(parts)

    def put(self, image_id, checksum, z: np.ndarray, block_channels) -> None:
        n = sum(block_channels)
        i = 0
        for scale in SCALES:
            for pool in POOLS:
                self.data[self.key(image_id, checksum, scale, pool)] = z[i:i + n]
                i += n

    def save(self) -> None:
        if self.path:
            np.savez(self.path, **self.data)


def record_features(records: list[QualityRecord], model: DualHeadUNet, root: Path | None = None,
                    cache: FeatureCache | None = None, checksum: str = "") -> np.ndarray:
    """FR feature matrix for a list of records, reusing cached per-image features."""
    chans = model.config.block_channels
    memo: dict[str, np.ndarray] = {}

    def image_feature(ident):
        if ident in memo:
            return memo[ident]
        z = cache.get(ident, checksum, chans) if cache else None
        if z is None:
            p = Path(ident)
            if root is not None and not p.is_absolute():
                p = root / p
            z = extract_features(read_image(p), model).z
            if cache:
                cache.put(ident, checksum, z, chans)
        memo[ident] = z
        return z

    rows = []
    for r in records:
        r.z = fr_feature(image_feature(r.ref_id), image_feature(r.dis_id))
        rows.append(r.z)
    return np.stack(rows)

"""Gaze regressors: ridge regression and gradient-boosted regression trees.

Both consume flattened, channel-major instance features (see
:meth:`echogaze.echo.GazeInstance.features`) and predict screen pixels.
Each model carries an affine output correction that :func:`calibrate`
fits per session.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

try:
    from numba import njit
except ImportError:                                     # pragma: no cover
    njit = None

from .errors import ConfigError, ContractError, UnsupportedOperationError

MAGIC = b"GZMD"
VERSION = 1
KINDS = ("linear", "gbrt")
FLATTEN_ORDER = "channel-major: channel, frame, range-row"


@dataclass
class Calibration:
    matrix: np.ndarray = field(default_factory=lambda: np.eye(2))
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    offset_only: bool = False          # fell back to an offset on degenerate anchors
    form: str = "identity"             # "identity", "offset" or "affine"

    def apply(self, raw: np.ndarray) -> np.ndarray:
        return raw @ self.matrix.T + self.offset


@dataclass
class ModelArtifact:
    kind: str
    n_features: int
    params: dict                       # arrays; layout depends on kind
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None
    calibration: Calibration = field(default_factory=Calibration)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")

    def normalize(self, X: np.ndarray) -> np.ndarray:
        if self.feature_mean is None:
            return X
        return (X - self.feature_mean) / self.feature_std

    # -- serialization -------------------------------------------------
    def to_bytes(self) -> bytes:
        arrays = {f"p_{k}": v for k, v in self.params.items()}
        if self.feature_mean is not None:
            arrays["feature_mean"] = self.feature_mean
            arrays["feature_std"] = self.feature_std
        arrays["cal_matrix"] = self.calibration.matrix
        arrays["cal_offset"] = self.calibration.offset
        payload = io.BytesIO()
        np.savez(payload, **arrays)
        meta = dict(self.meta, offset_only=self.calibration.offset_only,
                    calibration_form=self.calibration.form,
                    flatten_order=FLATTEN_ORDER)
        meta_b = json.dumps(meta, sort_keys=True).encode()
        head = struct.pack("<4sHBII", MAGIC, VERSION, KINDS.index(self.kind),
                           self.n_features, len(meta_b))
        return head + meta_b + payload.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes, expect_hash: str | None = None) -> "ModelArtifact":
        n_head = struct.calcsize("<4sHBII")
        if len(blob) < n_head:
            raise ContractError("model file is truncated")
        magic, version, kind, n_feat, n_meta = struct.unpack("<4sHBII", blob[:n_head])
        if magic != MAGIC:
            raise ContractError("not a model file (bad magic)")
        if version != VERSION:
            raise ContractError(f"unsupported model file version {version}")
        meta = json.loads(blob[n_head:n_head + n_meta])
        if expect_hash is not None and meta.get("config_hash") != expect_hash:
            raise ContractError("model config hash does not match the expected run")
        arrays = np.load(io.BytesIO(blob[n_head + n_meta:]))
        params = {k[2:]: arrays[k] for k in arrays.files if k.startswith("p_")}
        cal = Calibration(arrays["cal_matrix"], arrays["cal_offset"],
                          bool(meta.pop("offset_only", False)),
                          meta.pop("calibration_form", "identity"))
        meta.pop("flatten_order", None)
        has_norm = "feature_mean" in arrays.files
        return cls(KINDS[kind], int(n_feat), params,
                   arrays["feature_mean"] if has_norm else None,
                   arrays["feature_std"] if has_norm else None, cal, meta)

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path, expect_hash: str | None = None) -> "ModelArtifact":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read(), expect_hash)


def _as_xy(instances):
    """Accept a list of GazeInstance or an ``(X, Y)`` pair."""
    if isinstance(instances, tuple) and len(instances) == 2:
        X, Y = instances
        return np.asarray(X), np.asarray(Y, dtype=np.float64)
    instances = list(instances)
    if not instances:
        return np.empty((0, 0)), np.empty((0, 2))
    X = np.stack([i.features() for i in instances])
    Y = np.array([i.label for i in instances], dtype=np.float64)
    return X, Y


def _standardize_stats(X: np.ndarray, chunk: int = 4096):
    mean = np.zeros(X.shape[1])
    sq = np.zeros(X.shape[1])
    for s in range(0, X.shape[1], chunk):
        block = X[:, s:s + chunk].astype(np.float64)
        mean[s:s + chunk] = block.mean(axis=0)
        sq[s:s + chunk] = block.var(axis=0)
    std = np.sqrt(sq)
    # constant features: std 1 so they normalise to exactly zero
    std[std <= 1e-12 * max(1.0, float(np.abs(mean).max(initial=0.0)))] = 1.0
    return mean, std


# ---------------------------------------------------------------------------
# ridge regression

def fit_linear(train, l2: float = 1.0) -> ModelArtifact:
    """Ridge regression on standardised features with an unpenalised intercept.

    Solves the normal equations with a Cholesky factorisation, in the primal
    (features x features) or dual (instances x instances) form, whichever is
    smaller. With ``l2 == 0`` a minimum-norm least-squares solution is used.
    """
    if l2 < 0:
        raise ConfigError("l2 must be non-negative")
    X, Y = _as_xy(train)
    if X.shape[0] < 1:
        raise ContractError("need at least one training instance")
    mean, std = _standardize_stats(X)
    dtype = np.float32 if X.dtype == np.float32 else np.float64
    Xn = ((X - mean.astype(dtype)) / std.astype(dtype)).astype(dtype)
    y_mean = Y.mean(axis=0)
    Yc = Y - y_mean
    n, d = Xn.shape
    if d <= n:
        A = (Xn.T @ Xn).astype(np.float64)
        rhs = Xn.T.astype(np.float64) @ Yc
    else:
        A = (Xn @ Xn.T).astype(np.float64)
        rhs = Yc
    A[np.diag_indices_from(A)] += l2
    if l2 > 0:
        sol = linalg.solve(A, rhs, assume_a="pos")
    else:
        sol = linalg.lstsq(A, rhs)[0]
    W = sol if d <= n else (Xn.T.astype(np.float64) @ sol)
    return ModelArtifact("linear", d, {"weights": W, "intercept": y_mean}, mean, std,
                         meta={"l2": l2})


# ---------------------------------------------------------------------------
# regression trees

@dataclass(frozen=True)
class GBRTParams:
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    subsample: float = 0.8
    max_features: float = 0.1      # fraction of features drawn per tree
    min_samples_leaf: int = 1
    n_bins: int = 64
    method: str = "hist"           # "hist" or "exact"
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.learning_rate <= 0:
            raise ConfigError("need n_trees >= 1, max_depth >= 1 and learning_rate > 0")
        if not 0 < self.subsample <= 1 or not 0 < self.max_features <= 1:
            raise ConfigError("subsample and max_features must lie in (0, 1]")
        if self.method not in ("hist", "exact") or not 2 <= self.n_bins <= 256:
            raise ConfigError("method must be 'hist' or 'exact', n_bins in [2, 256]")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be >= 1")


@dataclass(frozen=True)
class TreeNode:
    feature_index: int
    threshold: float
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float | None = None     # set on leaves

    @property
    def is_leaf(self) -> bool:
        return self.value is not None


class RegressionTree:
    """Depth-limited CART tree stored as a complete binary array.

    Internal slot ``i`` has children ``2i + 1`` and ``2i + 2``; a slot with
    feature -1 does not split and sends everything left, so every sample
    walks exactly ``depth`` steps and lands on one of ``2**depth`` leaves.
    """

    def __init__(self, depth: int):
        self.depth = depth
        n_int = 2**depth - 1
        self.feature = np.full(n_int, -1, dtype=np.int64)
        self.threshold = np.zeros(n_int)
        self.split_bin = np.zeros(n_int, dtype=np.int64)
        self.gain = np.zeros(n_int)
        self.value = np.zeros(2**depth)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for every row of raw features."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            f = self.feature[node]
            right = (f >= 0) & (X[rows, np.maximum(f, 0)] > self.threshold[node])
            node = 2 * node + 1 + right
        return node - (2**self.depth - 1)

    def apply_binned(self, codes: np.ndarray) -> np.ndarray:
        node = np.zeros(codes.shape[0], dtype=np.int64)
        rows = np.arange(codes.shape[0])
        for _ in range(self.depth):
            f = self.feature[node]
            right = (f >= 0) & (codes[rows, np.maximum(f, 0)] > self.split_bin[node])
            node = 2 * node + 1 + right
        return node - (2**self.depth - 1)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def root(self) -> TreeNode:
        """Nested node view with pass-through slots collapsed."""
        def build(i, level):
            if level == self.depth:
                return TreeNode(-1, 0.0, value=float(self.value[i - (2**self.depth - 1)]))
            if self.feature[i] < 0:
                return build(2 * i + 1, level + 1)
            return TreeNode(int(self.feature[i]), float(self.threshold[i]),
                            build(2 * i + 1, level + 1), build(2 * i + 2, level + 1))
        return build(0, 0)


def _best_from_sums(sum_l, cnt_l, total, n, min_leaf):
    """Squared-error reduction for left-prefix sums; rows are candidate splits."""
    sum_r = total - sum_l
    cnt_r = n - cnt_l
    ok = (cnt_l >= min_leaf) & (cnt_r >= min_leaf)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = sum_l**2 / cnt_l + sum_r**2 / cnt_r - total**2 / n
    return np.where(ok, gain, -np.inf)


def best_split_exact(X: np.ndarray, r: np.ndarray, cols: np.ndarray, min_leaf: int = 1):
    """Exhaustive best split over ``cols``; thresholds at midpoints of sorted unique values.

    Returns ``(gain, feature, threshold)``, or ``None`` if no split is possible.
    Ties go to the lowest feature index, then the lowest threshold.
    """
    n = X.shape[0]
    if n < 2 * min_leaf:
        return None
    Xs = X[:, cols].astype(np.float64)
    order = np.argsort(Xs, axis=0, kind="stable")
    vals = np.take_along_axis(Xs, order, axis=0)
    csum = np.cumsum(r[order], axis=0)[:-1]                  # (n-1, F)
    cnt = np.arange(1, n, dtype=np.float64)[:, None]
    gain = _best_from_sums(csum, cnt, r.sum(), n, min_leaf)
    gain[vals[1:] <= vals[:-1]] = -np.inf                    # no split between equal values
    flat = gain.T.ravel()                                    # feature-major order
    k = int(np.argmax(flat))
    if not np.isfinite(flat[k]):
        return None
    fi, i = divmod(k, n - 1)
    thr = 0.5 * (vals[i, fi] + vals[i + 1, fi])
    return float(flat[k]), int(cols[fi]), float(thr)


class FeatureBins:
    """Per-feature quantile edges; ``code = #edges strictly below x``.

    A split at bin k sends ``code <= k`` left, which is ``x <= edges[k]``.
    Features with at most ``n_bins`` distinct values get midpoint edges, so
    histogram splits coincide with exact ones.
    """

    def __init__(self, X: np.ndarray, n_bins: int = 64, chunk: int = 2048):
        n, d = X.shape
        self.n_bins = n_bins
        self.edges = np.full((d, n_bins - 1), np.inf)
        pos = np.linspace(0, n, n_bins + 1)[1:-1].astype(np.int64)
        pos = np.clip(pos, 1, n - 1) if n > 1 else pos
        for s in range(0, d, chunk):
            block = np.sort(X[:, s:s + chunk].astype(np.float64), axis=0)
            for j in range(block.shape[1]):
                col = block[:, j]
                u = np.unique(col)
                if u.size <= n_bins:
                    e = 0.5 * (u[:-1] + u[1:])
                else:
                    e = np.unique(0.5 * (col[pos - 1] + col[pos]))
                self.edges[s + j, :e.size] = e
        self.n_edges = np.isfinite(self.edges).sum(axis=1)

    def transform(self, X: np.ndarray) -> np.ndarray:
        codes = np.empty(X.shape, dtype=np.uint8)
        for j in range(X.shape[1]):
            codes[:, j] = np.searchsorted(self.edges[j, :self.n_edges[j]], X[:, j], side="left")
        return codes


def _split_from_hist(sums, cnts, total, n, cols, n_bins, min_leaf):
    """Best (gain, feature, bin) from per-feature histograms shaped (F, n_bins)."""
    sum_l = np.cumsum(sums, axis=1)[:, :-1]
    cnt_l = np.cumsum(cnts, axis=1)[:, :-1]
    gain = _best_from_sums(sum_l, cnt_l, total, n, min_leaf)
    # a split on an empty bin repeats the previous partition; keep the first
    gain[:, 1:][cnt_l[:, 1:] == cnt_l[:, :-1]] = -np.inf
    k = int(np.argmax(gain))
    if not np.isfinite(gain.ravel()[k]):
        return None
    fi, b = divmod(k, n_bins - 1)
    return float(gain.ravel()[k]), int(cols[fi]), int(b)


def _numpy_level_hist(codes, rows, node_of_row, cols, r, n_nodes, n_bins, codes_t=None):
    live = node_of_row >= 0
    rows, node = rows[live], node_of_row[live].astype(np.int64)
    sub = codes[np.ix_(rows, cols)].astype(np.int64)
    sub += (np.arange(cols.size) * n_bins)[None, :] + (node * cols.size * n_bins)[:, None]
    size = n_nodes * cols.size * n_bins
    sums = np.bincount(sub.ravel(), weights=np.repeat(r[rows], cols.size), minlength=size)
    cnts = np.bincount(sub.ravel(), minlength=size).astype(np.float64)
    shape = (n_nodes, cols.size, n_bins)
    return sums.reshape(shape), cnts.reshape(shape)


if njit is not None:
    @njit(cache=True, nogil=True)
    def _jit_level_hist(codes_t, rows, node_of_row, cols, rr, n_nodes, n_bins):
        sums = np.zeros((n_nodes, cols.size, n_bins))
        cnts = np.zeros((n_nodes, cols.size, n_bins))
        hs = np.zeros(n_nodes * n_bins)
        hc = np.zeros(n_nodes * n_bins)
        key = node_of_row * n_bins
        for j in range(cols.size):
            col = codes_t[cols[j]]
            hs[:] = 0.0
            hc[:] = 0.0
            for i in range(rows.size):
                if key[i] >= 0:
                    q = key[i] + col[rows[i]]
                    hs[q] += rr[i]
                    hc[q] += 1.0
            for nd in range(n_nodes):
                for b in range(n_bins):
                    sums[nd, j, b] = hs[nd * n_bins + b]
                    cnts[nd, j, b] = hc[nd * n_bins + b]
        return sums, cnts

    def _level_hist(codes, rows, node_of_row, cols, r, n_nodes, n_bins, codes_t=None):
        if codes_t is None:
            codes_t = np.ascontiguousarray(codes.T)
        rows = rows.astype(np.int64)
        return _jit_level_hist(codes_t, rows, node_of_row.astype(np.int64),
                               cols.astype(np.int64), r[rows].astype(np.float64), n_nodes, n_bins)
else:                                                   # pragma: no cover
    _level_hist = _numpy_level_hist


def build_tree(r: np.ndarray, rows: np.ndarray, cols: np.ndarray, depth: int,
               min_leaf: int = 1, X: np.ndarray | None = None,
               codes: np.ndarray | None = None, bins: FeatureBins | None = None,
               codes_t: np.ndarray | None = None) -> RegressionTree:
    """Fit one tree to targets ``r`` on the sample subset ``rows``.

    Uses exact greedy search on raw ``X`` unless binned ``codes`` are given;
    ``codes_t`` is an optional feature-major copy of ``codes`` for speed.
    Leaves hold the mean target of their rows (0 for an empty leaf).
    """
    tree = RegressionTree(depth)
    cols = np.sort(cols)
    level = [(0, rows)]
    for _ in range(depth):
        hist = None
        if codes is not None:
            # one histogram pass for every node of this level
            all_rows = np.concatenate([idx for _, idx in level])
            node_of_row = np.repeat(np.arange(len(level)), [idx.size for _, idx in level])
            hist = _level_hist(codes, all_rows, node_of_row, cols, r, len(level), bins.n_bins,
                               codes_t)
        nxt = []
        for j, (node, idx) in enumerate(level):
            split = None
            if idx.size >= max(2, 2 * min_leaf) and np.ptp(r[idx]) > 0:
                if codes is not None:
                    split = _split_from_hist(hist[0][j], hist[1][j], r[idx].sum(), idx.size,
                                             cols, bins.n_bins, min_leaf)
                else:
                    split = best_split_exact(X[idx], r[idx], cols, min_leaf)
            if split is None or split[0] <= 1e-12 * max(1.0, float(np.sum(r[idx] ** 2))):
                nxt += [(2 * node + 1, idx), (2 * node + 2, idx[:0])]
                continue
            gain, f, t = split
            tree.feature[node] = f
            tree.gain[node] = gain
            if codes is not None:
                tree.split_bin[node] = t
                tree.threshold[node] = bins.edges[f, t]
                go_left = codes[idx, f] <= t
            else:
                tree.threshold[node] = t
                go_left = X[idx, f] <= t
            nxt += [(2 * node + 1, idx[go_left]), (2 * node + 2, idx[~go_left])]
        level = nxt
    offset = 2**depth - 1
    for node, idx in level:
        tree.value[node - offset] = r[idx].mean() if idx.size else 0.0
    return tree


def _stack_trees(trees: list[RegressionTree]) -> dict:
    return {
        "feature": np.stack([t.feature for t in trees]),
        "threshold": np.stack([t.threshold for t in trees]),
        "value": np.stack([t.value for t in trees]),
        "gain": np.stack([t.gain for t in trees]),
    }


def _unstack_trees(p: dict, coord: int) -> list[RegressionTree]:
    feat, thr, val, gain = (p[f"{k}_{coord}"] for k in ("feature", "threshold", "value", "gain"))
    depth = int(np.log2(val.shape[1]))
    out = []
    for i in range(feat.shape[0]):
        t = RegressionTree(depth)
        t.feature, t.threshold, t.value, t.gain = feat[i], thr[i], val[i], gain[i]
        out.append(t)
    return out


def fit_gbrt(train, params: GBRTParams | None = None, return_history: bool = False):
    """Squared-error gradient boosting, one ensemble per output coordinate.

    Each stage fits a tree to the current residuals on a row subsample and a
    per-tree feature subsample; predictions start at the training-label mean.
    With ``return_history`` the per-stage training MSE is returned as well.
    """
    params = params or GBRTParams()
    X, Y = _as_xy(train)
    n, d = X.shape
    if n < 2:
        raise ContractError("GBRT needs at least two training instances")
    rng = np.random.default_rng(params.seed)
    codes = bins = codes_t = None
    if params.method == "hist":
        bins = FeatureBins(X, params.n_bins)
        codes = bins.transform(X)
        codes_t = np.ascontiguousarray(codes.T)
    n_rows = max(1, int(round(params.subsample * n)))
    n_cols = max(1, int(round(params.max_features * d)))
    stored = {}
    history = np.zeros((params.n_trees + 1, 2))
    for c in range(2):
        f = np.full(n, Y[:, c].mean())
        history[0, c] = np.mean((Y[:, c] - f) ** 2)
        trees = []
        for m in range(params.n_trees):
            resid = Y[:, c] - f
            rows = np.sort(rng.choice(n, n_rows, replace=False)) if n_rows < n else np.arange(n)
            cols = rng.choice(d, n_cols, replace=False) if n_cols < d else np.arange(d)
            tree = build_tree(resid, rows, cols, params.max_depth, params.min_samples_leaf,
                              X=X, codes=codes, bins=bins, codes_t=codes_t)
            leaf = tree.apply_binned(codes) if codes is not None else tree.apply(X)
            f = f + params.learning_rate * tree.value[leaf]
            trees.append(tree)
            history[m + 1, c] = np.mean((Y[:, c] - f) ** 2)
        for k, v in _stack_trees(trees).items():
            stored[f"{k}_{c}"] = v
        stored[f"init_{c}"] = np.array(Y[:, c].mean())
    stored["learning_rate"] = np.array(params.learning_rate)
    model = ModelArtifact("gbrt", d, stored, meta={"gbrt_params": asdict(params)})
    return (model, history) if return_history else model


def gbrt_trees(model: ModelArtifact, coord: int) -> list[RegressionTree]:
    return _unstack_trees(model.params, coord)


# ---------------------------------------------------------------------------
# prediction and calibration

def raw_predict(model: ModelArtifact, X) -> np.ndarray:
    """Uncalibrated predictions for a feature matrix (n, d)."""
    X = np.atleast_2d(np.asarray(X))
    if X.shape[1] != model.n_features:
        raise ContractError(f"expected {model.n_features} features, got {X.shape[1]}")
    p = model.params
    if model.kind == "linear":
        Xn = model.normalize(X.astype(np.float64))
        return Xn @ p["weights"] + p["intercept"]
    out = np.empty((X.shape[0], 2))
    lr = float(p["learning_rate"])
    rows = np.arange(X.shape[0])[:, None]
    for c in range(2):
        feat, thr, val = p[f"feature_{c}"], p[f"threshold_{c}"], p[f"value_{c}"]
        depth = int(np.log2(val.shape[1]))
        tidx = np.arange(feat.shape[0])[None, :]
        node = np.zeros((X.shape[0], feat.shape[0]), dtype=np.int64)
        for _ in range(depth):
            f = feat[tidx, node]
            right = (f >= 0) & (X[rows, np.maximum(f, 0)] > thr[tidx, node])
            node = 2 * node + 1 + right
        leaves = val[tidx, node - (2**depth - 1)]
        out[:, c] = float(p[f"init_{c}"]) + lr * leaves.sum(axis=1)
    return out


def predict_features(model: ModelArtifact, X) -> np.ndarray:
    return model.calibration.apply(raw_predict(model, X))


def predict(model: ModelArtifact, inst) -> tuple[float, float]:
    """Calibrated (x_px, y_px) for one :class:`GazeInstance` or feature vector."""
    x = inst.features() if hasattr(inst, "features") else np.asarray(inst)
    xy = predict_features(model, x.reshape(1, -1))[0]
    return float(xy[0]), float(xy[1])


def _non_collinear(points: np.ndarray, tol: float = 1e-9) -> bool:
    u = np.unique(np.round(points, 9), axis=0)
    if u.shape[0] < 3:
        return False
    s = np.linalg.svd(u - u.mean(axis=0), compute_uv=False)
    return s[-1] > tol * max(1.0, s[0])


CALIBRATION_METHODS = ("affine", "offset")


def _fit_correction(raw: np.ndarray, Y: np.ndarray, form: str) -> Calibration:
    if form == "offset":
        return Calibration(np.eye(2), (Y - raw).mean(axis=0), False, "offset")
    design = np.hstack([raw, np.ones((raw.shape[0], 1))])
    coef = linalg.lstsq(design, Y)[0]                           # (3, 2)
    return Calibration(coef[:2].T.copy(), coef[2].copy(), False, "affine")


def calibrate(model: ModelArtifact, calib_instances, method: str = "affine") -> ModelArtifact:
    """Copy of ``model`` with an output correction fitted on calibration data.

    ``affine`` maps raw predictions to true labels by least squares. If the
    anchor labels or raw predictions are degenerate (fewer than three
    non-collinear points) only an offset is fitted and ``offset_only`` is set.
    ``offset`` fits a translation only.
    Base parameters are shared with the input model, not copied.
    """
    if method not in CALIBRATION_METHODS:
        raise ConfigError(f"unknown calibration method {method!r}")
    X, Y = _as_xy(calib_instances)
    if X.shape[0] < 1:
        raise ContractError("calibration needs at least one instance")
    raw = raw_predict(model, X)
    degenerate = not (X.shape[0] >= 3 and _non_collinear(Y) and _non_collinear(raw))
    if method == "affine":
        cal = _fit_correction(raw, Y, "offset" if degenerate else "affine")
        cal.offset_only = degenerate
    else:
        cal = _fit_correction(raw, Y, "offset")
    return ModelArtifact(model.kind, model.n_features, model.params, model.feature_mean,
                         model.feature_std, cal, dict(model.meta))


def feature_importance(model: ModelArtifact, n_channels: int | None = None,
                       n_mics: int | None = None, scaled: bool = True) -> dict:
    """Impurity-based importance aggregated per (mic, band) channel.

    Sums the squared-error reduction of every split over both ensembles and
    groups features by channel (channel-major flattening). With ``scaled`` the
    strongest channel is 100.
    """
    if model.kind != "gbrt":
        raise UnsupportedOperationError("feature importance is defined for GBRT models only")
    n_channels = n_channels or int(model.meta.get("n_channels", 16))
    n_mics = n_mics or int(model.meta.get("n_mics", 8))
    per_feature = per_feature_importance(model)
    per_channel = per_feature.reshape(n_channels, -1).sum(axis=1)
    if scaled and per_channel.max() > 0:
        per_channel = 100.0 * per_channel / per_channel.max()
    return {(c % n_mics + 1, c // n_mics + 1): float(v) for c, v in enumerate(per_channel)}


def per_feature_importance(model: ModelArtifact) -> np.ndarray:
    imp = np.zeros(model.n_features)
    for c in range(2):
        feat = model.params[f"feature_{c}"].ravel()
        gain = model.params[f"gain_{c}"].ravel()
        live = feat >= 0
        np.add.at(imp, feat[live], gain[live])
    return imp

"""Node classification protocol, Macro-F1 and 2-D projections."""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .graph import TextNetwork
from .training import TrainConfig, embed_all, train
from .walker import WalkConfig

logger = logging.getLogger(__name__)

MODES = ("joint", "structure_only", "label_only")


class ConvergenceWarning(UserWarning):
    pass


def ratio_count(ratio: float, n: int) -> int:
    """Number of items a ratio selects: ``n - floor((1 - ratio) * n)``."""
    return n - int(math.floor((1.0 - ratio) * n + 1e-9))


@dataclass(frozen=True)
class SplitSpec:
    training_ratio: float
    labelled_ratio: float | None = None
    repeat_seed: int = 0

    @property
    def labelled(self) -> float:
        return self.training_ratio if self.labelled_ratio is None else self.labelled_ratio

    def validate(self) -> None:
        if not 0.0 < self.training_ratio < 1.0:
            raise ValueError(f"training ratio {self.training_ratio} outside (0, 1)")
        if not 0.0 < self.labelled:
            raise ValueError("labelled ratio must be positive")
        if self.labelled > self.training_ratio + 1e-12:
            raise ValueError(f"labelled ratio {self.labelled} exceeds training ratio "
                             f"{self.training_ratio}: labelled nodes must come from the training set")


def split_nodes(network: TextNetwork, spec: SplitSpec, rng: np.random.Generator):
    """Shuffle the labelled nodes into ``(train, test, visible)``.

    ``visible`` is a uniform subsample of ``train``. For a given rng state the
    train/test split does not depend on the labelled ratio, and smaller
    labelled ratios give subsets of larger ones.
    """
    spec.validate()
    nodes = network.labelled_nodes()
    n = len(nodes)
    perm = rng.permutation(nodes)
    n_train = ratio_count(spec.training_ratio, n)
    train_nodes, test_nodes = perm[:n_train], perm[n_train:]
    shuffled = rng.permutation(train_nodes)
    n_vis = min(n_train, ratio_count(spec.labelled, n))
    visible = shuffled[:n_vis]
    return np.sort(train_nodes), np.sort(test_nodes), np.sort(visible)


def balance_resample(x, y, rng: np.random.Generator, num_classes: int | None = None):
    """Oversample every present class with replacement up to the majority count."""
    x = np.asarray(x)
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    if num_classes is not None:
        missing = sorted(set(range(num_classes)) - set(classes.tolist()))
        if missing:
            warnings.warn(f"classes {missing} have no training examples", stacklevel=2)
    target = counts.max()
    idx = []
    for c, k in zip(classes, counts):
        members = np.flatnonzero(y == c)
        idx.append(members)
        if k < target:
            idx.append(rng.choice(members, size=target - k, replace=True))
    idx = np.concatenate(idx)
    return x[idx], y[idx]


@dataclass
class LinearClassifier:
    """Multinomial logistic regression on standardized features."""

    weights: np.ndarray  # (C, d)
    bias: np.ndarray  # (C,)
    mean: np.ndarray
    scale: np.ndarray
    history: list = field(default_factory=list)
    grad_norm: float = 0.0
    converged: bool = True

    def scores(self, x):
        return ((np.asarray(x) - self.mean) / self.scale) @ self.weights.T + self.bias

    def predict(self, x):
        return np.argmax(self.scores(x), axis=1)


def _lr_objective(theta, z, onehot, reg):
    n, d = z.shape
    c = onehot.shape[1]
    w = theta[:c * d].reshape(c, d)
    b = theta[c * d:]
    logits = z @ w.T + b
    lse = logsumexp(logits, axis=1)
    loss = (lse - (logits * onehot).sum(axis=1)).mean() + 0.5 * reg * (w * w).sum()
    resid = (np.exp(logits - lse[:, None]) - onehot) / n
    gw = resid.T @ z + reg * w
    gb = resid.sum(axis=0)
    return loss, np.concatenate([gw.ravel(), gb])


def train_linear_classifier(x, y, reg: float = 1e-3, num_classes: int | None = None,
                            tol: float = 1e-6, max_iter: int = 5000) -> LinearClassifier:
    """L2-regularized multinomial logistic regression, fitted with L-BFGS.

    The objective is mean cross-entropy plus ``reg / 2 * ||W||^2`` (biases are
    not penalized). Starts from zero, so the fit is deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if reg <= 0:
        raise ValueError("reg must be positive")
    c = int(num_classes if num_classes is not None else y.max() + 1)
    if len(x) < len(np.unique(y)):
        raise ValueError("need at least one example per class")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-12] = 1.0
    z = (x - mean) / scale
    onehot = np.zeros((len(y), c))
    onehot[np.arange(len(y)), y] = 1.0
    theta0 = np.zeros(c * x.shape[1] + c)
    history = [_lr_objective(theta0, z, onehot, reg)[0]]

    res = minimize(_lr_objective, theta0, args=(z, onehot, reg), jac=True, method="L-BFGS-B",
                   callback=lambda th: history.append(_lr_objective(th, z, onehot, reg)[0]),
                   options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-15, "maxcor": 20})
    grad_norm = float(np.linalg.norm(_lr_objective(res.x, z, onehot, reg)[1]))
    converged = grad_norm < tol * 10
    if not converged:
        warnings.warn(f"classifier stopped with gradient norm {grad_norm:.3g} ({res.message})",
                      ConvergenceWarning, stacklevel=2)
    d = x.shape[1]
    return LinearClassifier(res.x[:c * d].reshape(c, d), res.x[c * d:], mean, scale,
                            history, grad_norm, converged)


def macro_f1(pred, gold, num_classes: int) -> float:
    """Unweighted mean of per-class F1 over ``0..num_classes-1``.

    A class absent from both predictions and gold labels scores 0.
    """
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    if len(pred) != len(gold):
        raise ValueError("pred and gold differ in length")
    if len(gold) == 0:
        raise ValueError("empty input")
    scores = []
    for c in range(num_classes):
        tp = np.sum((pred == c) & (gold == c))
        denom = np.sum(pred == c) + np.sum(gold == c)
        scores.append(2.0 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


# experiments ----------------------------------------------------------

@dataclass
class ExperimentReport:
    mode: str
    records: list = field(default_factory=list)  # dicts: training_ratio, labelled_ratio, repeat, macro_f1
    skipped: list = field(default_factory=list)  # (training_ratio, labelled_ratio, reason)

    def cells(self):
        seen = []
        for r in self.records:
            key = (r["training_ratio"], r["labelled_ratio"])
            if key not in seen:
                seen.append(key)
        return seen

    def scores(self, training_ratio, labelled_ratio=None) -> list[float]:
        lab = training_ratio if labelled_ratio is None else labelled_ratio
        return [r["macro_f1"] for r in self.records
                if math.isclose(r["training_ratio"], training_ratio)
                and math.isclose(r["labelled_ratio"], lab)]

    def mean(self, training_ratio, labelled_ratio=None) -> float:
        s = self.scores(training_ratio, labelled_ratio)
        if not s:
            raise KeyError((training_ratio, labelled_ratio))
        return float(np.mean(s))

    def records_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mode", "training_ratio", "labelled_ratio", "repeat", "macro_f1"])
        for r in self.records:
            w.writerow([self.mode, r["training_ratio"], r["labelled_ratio"], r["repeat"],
                        f"{r['macro_f1']:.6f}"])
        return buf.getvalue()

    def table_csv(self) -> str:
        """Mean Macro-F1 with labelled ratios as rows and training ratios as columns."""
        trs = sorted({t for t, _ in self.cells()} | {s[0] for s in self.skipped})
        lrs = sorted({l for _, l in self.cells()} | {s[1] for s in self.skipped})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["labelled_ratio"] + [f"{t:g}" for t in trs])
        for lab in lrs:
            row = [f"{lab:g}"]
            for t in trs:
                s = self.scores(t, lab)
                row.append(f"{np.mean(s):.4f}" if s else "-")
            w.writerow(row)
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"mode: {self.mode}"]
        for t, lab in self.cells():
            s = self.scores(t, lab)
            lines.append(f"training {t:.0%} labelled {lab:.0%}: macro-F1 {np.mean(s):.4f} "
                         f"(sd {np.std(s):.4f}, {len(s)} repeats)")
        for t, lab, why in self.skipped:
            lines.append(f"training {t:.0%} labelled {lab:.0%}: skipped ({why})")
        return "\n".join(lines)


def _mode_config(cfg: TrainConfig, mode: str) -> TrainConfig:
    if mode == "structure_only":
        return replace(cfg, beta=0.0, objective="structure_only")
    if mode == "label_only":
        return replace(cfg, objective="label_only")
    return replace(cfg, objective="joint")


def classify(embeddings, network: TextNetwork, train_nodes, test_nodes, rng, reg: float = 1e-3) -> float:
    """Balanced-resample the training nodes, fit the classifier, score the test nodes."""
    c = network.num_classes
    xb, yb = balance_resample(embeddings[train_nodes], network.labels[train_nodes], rng, c)
    clf = train_linear_classifier(xb, yb, reg=reg, num_classes=c)
    return macro_f1(clf.predict(embeddings[test_nodes]), network.labels[test_nodes], c)


def run_experiment(network: TextNetwork, vocab_size: int, grid, walk_cfg: WalkConfig,
                   train_cfg: TrainConfig, mode: str = "joint", repeats: int = 5,
                   reg: float = 1e-3, seed: int = 0, progress=None) -> ExperimentReport:
    """Train, embed, classify and score every valid (training, labelled) cell.

    Repeat ``r`` uses the same walk/encoder seed and the same train/test split
    for every cell with the same training ratio, so cells differ only in the
    labels the encoder sees. Invalid cells are recorded in ``skipped``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if repeats < 5:
        logger.warning("fewer than 5 repeats per cell (%d)", repeats)
    cfg = _mode_config(train_cfg, mode)
    report = ExperimentReport(mode)
    cache = {}
    for spec in grid:
        try:
            spec.validate()
        except ValueError as exc:
            report.skipped.append((spec.training_ratio, spec.labelled, str(exc)))
            continue
        for r in range(repeats):
            split_ss, clf_ss = np.random.SeedSequence([seed, r, round(spec.training_ratio * 1e6)]).spawn(2)
            train_nodes, test_nodes, visible = split_nodes(network, spec, np.random.default_rng(split_ss))
            run_seed = int(np.random.SeedSequence([seed, r]).generate_state(1)[0])
            # structure-only embeddings ignore labels, so one run per repeat suffices
            key = (r,) if mode == "structure_only" else (r, tuple(visible))
            if key not in cache:
                result = train(network, vocab_size, replace(walk_cfg, seed=run_seed),
                               replace(cfg, seed=run_seed),
                               visible=() if mode == "structure_only" else visible)
                cache[key] = embed_all(network, result.encoder)
            emb = cache[key]
            score = classify(emb, network, train_nodes, test_nodes, np.random.default_rng(clf_ss), reg)
            rec = {"training_ratio": spec.training_ratio, "labelled_ratio": spec.labelled,
                   "repeat": r, "macro_f1": score}
            report.records.append(rec)
            if progress:
                progress(rec)
    return report


def ratio_grid(training_ratios, labelled_ratios=None):
    """Cartesian grid of SplitSpecs; ``None`` labelled ratios means 'equal to training'."""
    if labelled_ratios is None:
        return [SplitSpec(t) for t in training_ratios]
    return [SplitSpec(t, lab) for lab in labelled_ratios for t in training_ratios]


# projections ----------------------------------------------------------

def _pca(x):
    x = np.asarray(x, dtype=np.float64)
    z = x - x.mean(axis=0)
    u, s, vt = np.linalg.svd(z, full_matrices=False)
    coords = np.zeros((len(x), 2))
    k = min(2, len(s))
    coords[:, :k] = u[:, :k] * s[:k]
    tol = max(s[0] if len(s) else 0.0, 1.0) * 1e-10
    if len(s) < 2 or s[1] <= tol:
        warnings.warn("degenerate covariance: second principal axis set to zero", stacklevel=3)
        coords[:, 1] = 0.0
    # deterministic sign: largest-magnitude coordinate on each axis is positive
    for j in range(2):
        i = np.argmax(np.abs(coords[:, j]))
        if coords[i, j] < 0:
            coords[:, j] *= -1
    return coords


def _row_affinities(dist2, perplexity, tol=1e-5, max_iter=100):
    """Gaussian conditional affinities with per-row precision matched to ``perplexity``."""
    n = len(dist2)
    target = np.log(perplexity)
    p = np.zeros((n, n))
    for i in range(n):
        d = np.delete(dist2[i], i)
        lo, hi, beta = 0.0, np.inf, 1.0
        for _ in range(max_iter):
            w = np.exp(-(d - d.min()) * beta)
            s = w.sum()
            h = np.log(s) + beta * np.sum(d * w) / s - beta * d.min()
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = (beta + lo) / 2
        p[i, np.arange(n) != i] = w / s
    return p


def tsne(x, rng: np.random.Generator, perplexity: float = 30.0, n_iter: int = 1000,
         learning_rate: float = 200.0, exaggeration: float = 12.0, exaggeration_iters: int = 250):
    """Exact t-SNE (dense O(n^2) gradients) to two dimensions."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    perplexity = min(perplexity, (n - 1) / 3.0)
    sq = (x * x).sum(axis=1)
    dist2 = np.maximum(sq[:, None] + sq[None, :] - 2 * x @ x.T, 0.0)
    p = _row_affinities(dist2, perplexity)
    p = np.maximum((p + p.T) / (2 * n), 1e-12)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    for it in range(n_iter):
        pe = p * exaggeration if it < exaggeration_iters else p
        momentum = 0.5 if it < exaggeration_iters else 0.8
        ys = (y * y).sum(axis=1)
        num = 1.0 / (1.0 + ys[:, None] + ys[None, :] - 2 * y @ y.T)
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        coef = (pe - q) * num
        grad = 4.0 * (np.diag(coef.sum(axis=1)) - coef) @ y
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - learning_rate * gains * grad
        y = y + update
        y -= y.mean(axis=0)
    return y


def project_2d(embeddings, method: str = "pca", rng: np.random.Generator | None = None, **kw):
    """2-D coordinates by PCA or exact t-SNE."""
    embeddings = np.asarray(embeddings)
    if len(embeddings) < 3:
        raise ValueError("need at least 3 points to project")
    if method == "pca":
        return _pca(embeddings)
    if method == "tsne":
        return tsne(embeddings, rng if rng is not None else np.random.default_rng(0), **kw)
    raise ValueError(f"unknown projection method {method!r}")


# exports --------------------------------------------------------------

def embeddings_text(names, emb) -> str:
    return "".join(f"{n}\t{' '.join(f'{v:.8g}' for v in row)}\n" for n, row in zip(names, emb))


def projection_text(names, coords, classes) -> str:
    return "".join(f"{n}\t{x:.8g}\t{y:.8g}\t{c}\n" for n, (x, y), c in zip(names, coords, classes))

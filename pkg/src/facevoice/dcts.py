"""Diversity-consistency trade-off score over labeled embeddings.

The score joins a probabilistic ratio (intra-class vs inter-class total
correlation, RIR) and a geometric ratio (inter-class vs intra-class cosine
distance, RCR)::

    dcts = sqrt(rir / (rir + 1) * rcr / (rcr + 1))

It equals 0.5 when intra- and inter-class structure cannot be told apart.
"""

import io
import csv
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import ValidationError, check_nonnegative
from .density import estimate_independence
from .embedding import EmbeddingSet, RandomSource, as_random_source

__all__ = [
    "DctsConfig",
    "DctsReport",
    "CosineRatio",
    "DCTSScorer",
    "build_intra_tuples",
    "build_inter_tuples",
    "relative_independence_ratio",
    "relative_cosine_ratio",
    "combine_dcts",
    "evaluate_dcts",
    "render_report",
    "parse_report_csv",
]

COLUMNS = ("i_intra", "i_inter", "rir", "d_intra", "d_inter", "rcr", "dcts")


@dataclass(frozen=True)
class DctsConfig:
    tuple_size: int = 2
    estimator: str = "kde"
    gmm_components: int = 4
    bandwidth: str = "scott"
    projection_dims: int = 1
    epsilon: float = 1e-8
    n_intra_tuples: int = 1000
    n_inter_tuples: int = 1000
    n_pairs: int = 2000
    n_eval: int = 20000
    seed: int = 0

    def __post_init__(self):
        if self.tuple_size < 2:
            raise ValidationError("dcts.tuple_size must be >= 2")
        if not self.epsilon > 0:
            raise ValidationError("dcts.epsilon must be positive")
        if min(self.n_intra_tuples, self.n_inter_tuples) < 30:
            raise ValidationError("dcts tuple counts must be >= 30")
        if self.n_pairs < 1 or self.n_eval < 1:
            raise ValidationError("dcts.n_pairs and dcts.n_eval must be positive")
        if self.estimator not in ("kde", "gmm"):
            raise ValidationError(f"dcts.estimator must be 'kde' or 'gmm', got {self.estimator!r}")


@dataclass(frozen=True)
class DctsReport:
    i_intra: float
    i_inter: float
    rir: float
    d_intra: float
    d_inter: float
    rcr: float
    dcts: float
    per_class: dict = field(default_factory=dict)
    rir_saturated: bool = False
    rcr_saturated: bool = False
    config: DctsConfig = field(default_factory=DctsConfig)


class CosineRatio(tuple):
    """``(rcr, d_intra, d_inter)`` with a ``saturated`` flag for d_intra == 0."""

    def __new__(cls, rcr, d_intra, d_inter, saturated):
        obj = super().__new__(cls, (rcr, d_intra, d_inter))
        obj.saturated = saturated
        return obj

    rcr = property(lambda self: self[0])
    d_intra = property(lambda self: self[1])
    d_inter = property(lambda self: self[2])


def build_intra_tuples(emb, K, n, rng=None):
    """``(n, K)`` record indices; each row holds distinct members of one class.

    Classes are drawn uniformly among those with at least ``K`` members.
    """
    rng = as_random_source(rng)
    groups = [idx for idx in emb.class_indices().values() if idx.size >= K]
    if not groups:
        raise ValidationError(f"no class has at least K={K} members for intra-class tuples")
    out = np.empty((n, K), dtype=np.int64)
    for row, c in enumerate(rng.integers(0, len(groups), size=n)):
        out[row] = rng.choice(groups[c], size=K, replace=False)
    return out


def build_inter_tuples(emb, K, n, rng=None):
    """``(n, K)`` record indices whose members come from K distinct classes."""
    rng = as_random_source(rng)
    groups = list(emb.class_indices().values())
    if len(groups) < K:
        raise ValidationError(f"inter-class tuples need at least K={K} classes, found {len(groups)}")
    out = np.empty((n, K), dtype=np.int64)
    for row in range(n):
        classes = rng.choice(len(groups), size=K, replace=False)
        out[row] = [groups[c][rng.integers(0, groups[c].size)] for c in classes]
    return out


def relative_independence_ratio(i_intra, i_inter, epsilon=1e-8):
    i_intra = check_nonnegative(i_intra, "i_intra")
    i_inter = check_nonnegative(i_inter, "i_inter")
    return i_intra / (i_inter + epsilon)


def _unit_rows(X):
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValidationError("cosine distance is undefined for zero-norm embeddings")
    return X / norms


def _mean_pair_distance(U, pairs):
    return float(np.mean(1.0 - np.clip(np.sum(U[pairs[:, 0]] * U[pairs[:, 1]], axis=1), -1.0, 1.0)))


def relative_cosine_ratio(emb, n_pairs=2000, epsilon=1e-8, rng=None):
    """Mean inter-class over mean intra-class cosine distance of sampled pairs."""
    rng = as_random_source(rng)
    if len(emb.counts) < 2:
        raise ValidationError("the cosine ratio needs at least 2 classes")
    if max(emb.counts.values()) < 2:
        raise ValidationError("the cosine ratio needs a class with at least 2 members")
    intra_rng, inter_rng = rng.spawn(2)
    U = _unit_rows(emb.vectors)
    d_intra = _mean_pair_distance(U, build_intra_tuples(emb, 2, n_pairs, intra_rng))
    d_inter = _mean_pair_distance(U, build_inter_tuples(emb, 2, n_pairs, inter_rng))
    # rounding can leave a hair below zero for collapsed classes
    d_intra = max(d_intra, 0.0)
    d_inter = max(d_inter, 0.0)
    return CosineRatio(d_inter / (d_intra + epsilon), d_intra, d_inter, saturated=d_intra == 0.0)


def combine_dcts(rir, rcr):
    rir = check_nonnegative(rir, "rir")
    rcr = check_nonnegative(rcr, "rcr")
    return float(np.sqrt((rir / (rir + 1.0)) * (rcr / (rcr + 1.0))))


def _per_class(emb):
    U = _unit_rows(emb.vectors)
    out = {}
    for label, idx in emb.class_indices().items():
        if idx.size < 2:
            out[label] = (float("nan"), int(idx.size))
            continue
        G = U[idx] @ U[idx].T
        iu = np.triu_indices(idx.size, k=1)
        out[label] = (float(np.mean(1.0 - np.clip(G[iu], -1.0, 1.0))), int(idx.size))
    return out


def evaluate_dcts(emb, config=None):
    """Full metric: tuple sampling, total correlation, cosine ratio, combination."""
    config = config or DctsConfig()
    if not isinstance(emb, EmbeddingSet):
        raise ValidationError("evaluate_dcts expects an EmbeddingSet")
    K = config.tuple_size
    if len(emb.counts) < K:
        raise ValidationError(
            f"DCTS needs at least K={K} classes for inter-class tuples, found {len(emb.counts)}"
        )
    if max(emb.counts.values()) < K:
        raise ValidationError(f"DCTS needs a class with at least K={K} members for intra-class tuples")
    if config.projection_dims > emb.dim:
        raise ValidationError("dcts.projection_dims exceeds the embedding dimension")
    root = RandomSource(config.seed)
    intra_rng, inter_rng, mc_seed, pair_rng = root.spawn(4)
    mc_seed = int(mc_seed.integers(0, 2**63))

    intra = build_intra_tuples(emb, K, config.n_intra_tuples, intra_rng)
    inter = build_inter_tuples(emb, K, config.n_inter_tuples, inter_rng)
    kwargs = dict(
        estimator=config.estimator,
        projection_dims=config.projection_dims,
        n_eval=config.n_eval,
        gmm_components=config.gmm_components,
        bandwidth=config.bandwidth,
    )
    # identical Monte Carlo streams for both estimates keep their noise correlated
    i_intra = estimate_independence(emb.vectors[intra], rng=RandomSource(mc_seed), **kwargs)
    i_inter = estimate_independence(emb.vectors[inter], rng=RandomSource(mc_seed), **kwargs)
    rir = relative_independence_ratio(i_intra.value, i_inter.value, config.epsilon)
    ratio = relative_cosine_ratio(emb, config.n_pairs, config.epsilon, pair_rng)
    return DctsReport(
        i_intra=i_intra.value,
        i_inter=i_inter.value,
        rir=rir,
        d_intra=ratio.d_intra,
        d_inter=ratio.d_inter,
        rcr=ratio.rcr,
        dcts=combine_dcts(rir, ratio.rcr),
        per_class=_per_class(emb),
        rir_saturated=i_inter.value == 0.0,
        rcr_saturated=ratio.saturated,
        config=config,
    )


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{x:.4f}"


def render_report(report, format="text"):
    """Render a report as aligned text or as CSV; output is byte-stable."""
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("scope",) + COLUMNS + ("count",))
        writer.writerow(
            ("aggregate",) + tuple(_fmt(getattr(report, c)) for c in COLUMNS) + ("",)
        )
        for label in sorted(report.per_class):
            d_intra, count = report.per_class[label]
            writer.writerow((f"class:{label}", "", "", "", _fmt(d_intra), "", "", "", count))
        return buf.getvalue()
    if format != "text":
        raise ValidationError(f"unknown report format {format!r}")
    lines = ["DCTS report"]
    for col in COLUMNS:
        lines.append(f"  {col:<8} {_fmt(getattr(report, col))}")
    flags = [name for name, on in (("rir_saturated", report.rir_saturated), ("rcr_saturated", report.rcr_saturated)) if on]
    lines.append(f"  flags    {','.join(flags) if flags else 'none'}")
    lines.append("config")
    for key, value in asdict(report.config).items():
        lines.append(f"  {key} = {value}")
    lines.append("per-class intra distance")
    for label in sorted(report.per_class):
        d_intra, count = report.per_class[label]
        lines.append(f"  {label:<16} {_fmt(d_intra):>8}  n={count}")
    return "\n".join(lines) + "\n"


def parse_report_csv(text):
    """Aggregate row of a CSV report as a dict of floats."""
    rows = list(csv.DictReader(io.StringIO(text)))
    for row in rows:
        if row.get("scope") == "aggregate":
            try:
                return {c: float(row[c]) for c in COLUMNS}
            except (KeyError, ValueError) as exc:
                raise ValidationError(f"malformed aggregate row in report: {exc}") from None
    raise ValidationError("report CSV has no aggregate row")


class DCTSScorer(BaseEstimator):
    """Estimator-style wrapper: ``fit(X, y)`` evaluates the metric on labeled rows."""

    def __init__(self, tuple_size=2, estimator="kde", projection_dims=1, epsilon=1e-8,
                 n_intra_tuples=1000, n_inter_tuples=1000, n_pairs=2000, n_eval=20000,
                 gmm_components=4, random_state=0):
        self.tuple_size = tuple_size
        self.estimator = estimator
        self.projection_dims = projection_dims
        self.epsilon = epsilon
        self.n_intra_tuples = n_intra_tuples
        self.n_inter_tuples = n_inter_tuples
        self.n_pairs = n_pairs
        self.n_eval = n_eval
        self.gmm_components = gmm_components
        self.random_state = random_state

    def _config(self):
        params = self.get_params()
        params["seed"] = params.pop("random_state")
        return DctsConfig(**params)

    def fit(self, X, y):
        self.report_ = evaluate_dcts(EmbeddingSet(X, tuple(y)), self._config())
        self.score_ = self.report_.dcts
        return self

    def score(self, X, y):
        return evaluate_dcts(EmbeddingSet(X, tuple(y)), self._config()).dcts

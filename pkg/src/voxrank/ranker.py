"""Linear re-ranker over eight query/product/user features.

Training minimizes the weighted pairwise logistic loss

    sum_pairs weight * log(1 + exp(-(w.x_pos - w.x_neg))) + (lambda / 2) * |w|^2

with one SGD step per pair, pair order reshuffled every epoch.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, NamedTuple, Optional, Sequence

import numpy as np

from .catalog import Product
from .errors import EmptyTrainingSet, NonFiniteLoss
from .query import ParsedQuery
from .retrieval import Candidate

if TYPE_CHECKING:
    from .feedback import UserProfile

EPS = 1e-12
SIZE_TOLERANCE = 0.1
WEIGHT_LIMIT = 1e6
N_FEATURES = 8


class FeatureVector(NamedTuple):
    lexical_score_norm: float
    facet_match_ratio: float
    brand_match: float
    size_match: float
    user_product_affinity: float
    user_brand_affinity: float
    user_facet_cosine: float
    popularity_norm: float


FEATURE_NAMES = FeatureVector._fields


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.05
    epochs: int = 20
    l2_lambda: float = 1e-4
    seed: int = 42

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")


@dataclass(frozen=True)
class RankingModel:
    weights: tuple
    version: Optional[int] = None
    trained_at: float = 0.0
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    training_pair_count: int = 0

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if len(w) != N_FEATURES or not all(math.isfinite(x) for x in w):
            raise ValueError(f"weights must be {N_FEATURES} finite reals")
        object.__setattr__(self, "weights", w)

    def with_version(self, version: int) -> "RankingModel":
        return RankingModel(self.weights, version, self.trained_at, self.hyperparams, self.training_pair_count)

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "weights": list(self.weights),
            "trained_at": self.trained_at,
            "hyperparams": asdict(self.hyperparams),
            "training_pair_count": self.training_pair_count,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RankingModel":
        return cls(
            weights=tuple(obj["weights"]),
            version=obj.get("version"),
            trained_at=obj.get("trained_at", 0.0),
            hyperparams=Hyperparams(**obj.get("hyperparams", {})),
            training_pair_count=obj.get("training_pair_count", 0),
        )


def bootstrap_model(trained_at: float = 0.0) -> RankingModel:
    """Lexical-only model: reproduces retrieval order."""
    return RankingModel((1.0,) + (0.0,) * (N_FEATURES - 1), version=1, trained_at=trained_at)


@dataclass(frozen=True)
class TrainingPair:
    x_pos: FeatureVector
    x_neg: FeatureVector
    weight: float = 1.0
    session_id: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError("pair weight must be positive")


def _squash(x: float) -> float:
    return x / (1.0 + abs(x))


def extract_features(
    pq: ParsedQuery,
    cand: Candidate,
    product: Product,
    profile: Optional["UserProfile"],
    candidate_set_max_lexical: float,
    catalog_max_popularity: int,
) -> FeatureVector:
    f1 = cand.lexical_score / max(candidate_set_max_lexical, EPS)

    if pq.facets:
        f2 = len(pq.facets & product.facets) / len(pq.facets)
    else:
        f2 = 1.0

    f3 = 1.0 if pq.brand is not None and product.brand is not None and pq.brand == product.brand else 0.0

    f4 = 0.0
    qs, ps = pq.size, product.size
    if qs is not None and ps is not None and qs.unit == ps.unit:
        if abs(ps.magnitude / qs.magnitude - 1.0) <= SIZE_TOLERANCE:
            f4 = 1.0

    f5 = f6 = f7 = 0.0
    if profile is not None:
        f5 = _squash(profile.product_affinity.get(product.product_id, 0.0))
        if product.brand is not None:
            f6 = _squash(profile.brand_affinity.get(product.brand, 0.0))
        norm = profile.facet_norm
        if norm > 0 and product.facets:
            dot = sum(profile.facet_affinity.get(f, 0.0) for f in product.facets)
            f7 = dot / (norm * math.sqrt(len(product.facets)))
            f7 = min(1.0, max(-1.0, f7))

    if catalog_max_popularity > 0:
        f8 = math.log1p(product.purchase_count) / math.log1p(catalog_max_popularity)
    else:
        f8 = 0.0

    return FeatureVector(f1, f2, f3, f4, f5, f6, f7, f8)


def score(model: RankingModel, x: Sequence[float]) -> float:
    w = model.weights
    return (
        w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + w[3] * x[3]
        + w[4] * x[4] + w[5] * x[5] + w[6] * x[6] + w[7] * x[7]
    )


@dataclass(frozen=True)
class RankedItem:
    product_id: str
    score: float
    rank: int
    lexical_score: float


def rank(model: RankingModel, items: Sequence[tuple]) -> list:
    """Order ``(Candidate, FeatureVector)`` pairs by model score.

    Ties fall back to lexical score (descending), then product_id.
    """
    scored = [(score(model, x), c.lexical_score, c.product_id) for c, x in items]
    scored.sort(key=lambda t: (-t[0], -t[1], t[2]))
    return [RankedItem(pid, s, i, lex) for i, (s, lex, pid) in enumerate(scored, start=1)]


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def pair_loss(w: np.ndarray, pair: TrainingPair, l2_lambda: float) -> float:
    delta = float(np.dot(w, np.subtract(pair.x_pos, pair.x_neg)))
    return pair.weight * float(np.logaddexp(0.0, -delta)) + 0.5 * l2_lambda * float(np.dot(w, w))


def pair_gradient(w: np.ndarray, pair: TrainingPair, l2_lambda: float) -> np.ndarray:
    d = np.subtract(pair.x_pos, pair.x_neg)
    delta = float(np.dot(w, d))
    return -pair.weight * _sigmoid(-delta) * d + l2_lambda * w


def training_loss(weights, pairs: Sequence[TrainingPair], l2_lambda: float) -> float:
    w = np.asarray(weights, dtype=float)
    if not pairs:
        return 0.5 * l2_lambda * float(w @ w)
    diffs = np.array([np.subtract(p.x_pos, p.x_neg) for p in pairs])
    pw = np.array([p.weight for p in pairs])
    return float(pw @ np.logaddexp(0.0, -(diffs @ w))) + 0.5 * l2_lambda * float(w @ w)


def train(
    pairs: Sequence[TrainingPair],
    hp: Optional[Hyperparams] = None,
    init: Optional[RankingModel] = None,
    trained_at: Optional[float] = None,
) -> RankingModel:
    """Pairwise-logistic SGD; returns an unversioned model."""
    hp = hp or Hyperparams()
    if not pairs:
        raise EmptyTrainingSet("no training pairs")
    w = np.array(init.weights if init is not None else (0.0,) * N_FEATURES, dtype=float)
    diffs = np.array([np.subtract(p.x_pos, p.x_neg) for p in pairs], dtype=float)
    pair_w = [float(p.weight) for p in pairs]
    rng = np.random.default_rng(hp.seed)
    lr, lam = hp.learning_rate, hp.l2_lambda
    order = np.arange(len(pairs))
    for _ in range(hp.epochs):
        rng.shuffle(order)
        for i in order:
            d = diffs[i]
            delta = float(d @ w)
            w = w + lr * (pair_w[i] * _sigmoid(-delta) * d - lam * w)
        if not np.all(np.isfinite(w)) or np.max(np.abs(w)) > WEIGHT_LIMIT:
            raise NonFiniteLoss("weights diverged")
    return RankingModel(
        weights=tuple(w.tolist()),
        version=None,
        trained_at=time.time() if trained_at is None else trained_at,
        hyperparams=hp,
        training_pair_count=len(pairs),
    )

"""Rating-based recommender: lexicon sentiment turns entity mentions into
sparse ±1 ratings; an autoencoder scores the full catalog; the top unmentioned
items come back as recommendations.

The autoencoder is the classic one-hidden-layer reconstruction model:
``scores = W2 @ sigmoid(W1 @ r + b1) + b2`` with the squared error masked to
observed entries.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, ClassVar, Iterable

import numpy as np

from .artifacts import LoadContext
from .core import BaseModule, ModuleConfig, ModuleOutput, RecList, register_module
from .monitor import monitored
from .protocol import Dialog, EntitySpan, Role, Utterance
from .tokenization import CompositeTokenizer, EncodedInputs, EntityCatalog, word_tokenize_with_offsets

logger = logging.getLogger(__name__)

SENTIMENT_FILE = "sentiment.json"
DEFAULT_WINDOW = 5


class ShapeMismatchError(ValueError):
    pass


class EmptyBatchError(ValueError):
    pass


class DivergenceDetectedError(RuntimeError):
    pass


@dataclass(frozen=True)
class SentimentLexicon:
    """Lowercase word -> polarity in {-1, +1}."""

    polarity: dict[str, int]

    def __post_init__(self) -> None:
        for word, pol in self.polarity.items():
            if word != word.lower():
                raise ValueError(f"lexicon words must be lowercase: {word!r}")
            if pol not in (-1, 1):
                raise ValueError(f"polarity must be -1 or +1, got {pol} for {word!r}")

    def save(self, path: Path) -> None:
        path.write_text(json.dumps(self.polarity, sort_keys=True, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "SentimentLexicon":
        return cls(json.loads(path.read_text(encoding="utf-8")))


@dataclass(frozen=True)
class RatingVector:
    """Sparse item_id -> rating in {-1, +1}."""

    ratings: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for item, value in self.ratings.items():
            if item < 0:
                raise ValueError(f"negative item id {item}")
            if value not in (-1, 1):
                raise ValueError(f"rating must be -1 or +1, got {value}")

    def dense(self, n_items: int) -> np.ndarray:
        if self.ratings and max(self.ratings) >= n_items:
            raise ShapeMismatchError(
                f"item id {max(self.ratings)} outside catalog of size {n_items}"
            )
        vec = np.zeros(n_items, dtype=np.float64)
        for item, value in self.ratings.items():
            vec[item] = value
        return vec

    def __len__(self) -> int:
        return len(self.ratings)


@dataclass(frozen=True)
class AutoRecParams:
    """Weights of the one-hidden-layer autoencoder (hidden size d, catalog N)."""

    W1: np.ndarray  # d x N
    b1: np.ndarray  # d
    W2: np.ndarray  # N x d
    b2: np.ndarray  # N

    def __post_init__(self) -> None:
        d, n = self.W1.shape
        if self.b1.shape != (d,) or self.W2.shape != (n, d) or self.b2.shape != (n,):
            raise ShapeMismatchError(
                f"inconsistent shapes: W1 {self.W1.shape}, b1 {self.b1.shape}, "
                f"W2 {self.W2.shape}, b2 {self.b2.shape}"
            )
        for name in ("W1", "b1", "W2", "b2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def hidden_size(self) -> int:
        return self.W1.shape[0]

    @property
    def n_items(self) -> int:
        return self.W1.shape[1]

    def copy(self) -> "AutoRecParams":
        return AutoRecParams(
            self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy()
        )


def init_params(n_items: int, hidden_size: int = 32, seed: int = 0) -> AutoRecParams:
    rng = np.random.default_rng(seed)
    scale1 = 1.0 / np.sqrt(max(n_items, 1))
    scale2 = 1.0 / np.sqrt(max(hidden_size, 1))
    return AutoRecParams(
        W1=rng.normal(0.0, scale1, size=(hidden_size, n_items)),
        b1=np.zeros(hidden_size),
        W2=rng.normal(0.0, scale2, size=(n_items, hidden_size)),
        b2=np.zeros(n_items),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def autorec_forward(p: AutoRecParams, r: RatingVector | np.ndarray) -> np.ndarray:
    """Score all items from one sparse rating vector."""
    vec = r.dense(p.n_items) if isinstance(r, RatingVector) else np.asarray(r, dtype=np.float64)
    if vec.shape != (p.n_items,):
        raise ShapeMismatchError(f"rating vector shape {vec.shape}, expected ({p.n_items},)")
    hidden = _sigmoid(p.W1 @ vec + p.b1)
    return p.W2 @ hidden + p.b2


def autorec_loss_grad(
    p: AutoRecParams, batch: list[RatingVector], l2: float = 1e-4
) -> tuple[float, dict[str, np.ndarray]]:
    """Masked reconstruction loss and analytic gradients.

    Loss is the mean squared error over observed entries across the whole
    batch plus ``l2 * (||W1||^2 + ||W2||^2)``.
    """
    if not batch:
        raise EmptyBatchError("loss needs at least one rating vector")
    n = p.n_items
    R = np.stack([rv.dense(n) for rv in batch])  # B x N
    M = np.zeros_like(R)
    for row, rv in zip(M, batch):
        for item in rv.ratings:
            row[item] = 1.0
    count = M.sum()

    # overflow here just produces inf/nan, which train() reports as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        Z = R @ p.W1.T + p.b1  # B x d
        H = _sigmoid(Z)
        S = H @ p.W2.T + p.b2  # B x N
        E = M * (S - R)

        data_loss = float((E**2).sum() / count) if count else 0.0
        reg = l2 * (float((p.W1**2).sum()) + float((p.W2**2).sum()))
        loss = data_loss + reg

        dS = (2.0 / count) * E if count else np.zeros_like(E)
        grads = {
            "W2": dS.T @ H + 2.0 * l2 * p.W2,
            "b2": dS.sum(axis=0),
        }
        dH = dS @ p.W2
        dZ = dH * H * (1.0 - H)
        grads["W1"] = dZ.T @ R + 2.0 * l2 * p.W1
        grads["b1"] = dZ.sum(axis=0)
    return loss, grads


def train(
    p: AutoRecParams,
    dataset: list[RatingVector],
    epochs: int = 200,
    lr: float = 0.05,
    l2: float = 1e-4,
    on_epoch: Callable[[int, float], None] | None = None,
) -> AutoRecParams:
    """Full-batch gradient descent; returns the final parameters."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    W1, b1, W2, b2 = p.W1.copy(), p.b1.copy(), p.W2.copy(), p.b2.copy()
    for epoch in range(epochs):
        if not all(np.all(np.isfinite(a)) for a in (W1, b1, W2, b2)):
            raise DivergenceDetectedError(f"non-finite parameters at epoch {epoch}")
        current = AutoRecParams(W1, b1, W2, b2)
        loss, grads = autorec_loss_grad(current, dataset, l2=l2)
        if not np.isfinite(loss):
            raise DivergenceDetectedError(f"non-finite loss at epoch {epoch}")
        logger.debug("epoch %d loss %.6f", epoch, loss)
        if on_epoch is not None:
            on_epoch(epoch, loss)
        W1 -= lr * grads["W1"]
        b1 -= lr * grads["b1"]
        W2 -= lr * grads["W2"]
        b2 -= lr * grads["b2"]
    if not all(np.all(np.isfinite(a)) for a in (W1, b1, W2, b2)):
        raise DivergenceDetectedError("non-finite parameters after final update")
    return AutoRecParams(W1, b1, W2, b2)


# -- dialog -> ratings --------------------------------------------------------


def mention_sentiment(
    utterance: Utterance,
    span: EntitySpan,
    lexicon: SentimentLexicon,
    window: int = DEFAULT_WINDOW,
) -> int:
    """Sign of the lexicon-polarity sum within ``window`` tokens of the span.

    A zero sum (no sentiment words nearby) defaults to +1: mentioning an item
    weakly signals interest.
    """
    tokens = word_tokenize_with_offsets(utterance.text)
    inside = [
        i for i, (_, start, end) in enumerate(tokens) if start < span.end and end > span.start
    ]
    if inside:
        lo, hi = inside[0], inside[-1]
    else:
        # span between tokens; window around the insertion point
        lo = hi = next((i for i, (_, s, _) in enumerate(tokens) if s >= span.start), len(tokens))
        lo, hi = lo, hi - 1
    neighborhood = tokens[max(0, lo - window) : lo] + tokens[hi + 1 : hi + 1 + window]
    total = sum(lexicon.polarity.get(tok, 0) for tok, _, _ in neighborhood)
    return -1 if total < 0 else 1


def extract_ratings(
    dialog: Dialog,
    catalog: EntityCatalog,
    lexicon: SentimentLexicon,
    window: int = DEFAULT_WINDOW,
) -> RatingVector:
    """User-turn mentions as ratings; the last mention of an item wins."""
    ratings: dict[int, int] = {}
    for utt in dialog.utterances:
        if utt.role is not Role.USER:
            continue
        for span in utt.spans:
            item = catalog.entity_to_id.get(span.surface)
            if item is None:
                continue
            ratings[item] = mention_sentiment(utt, span, lexicon, window=window)
    return RatingVector(ratings)


def rank_items(scores: np.ndarray, k: int, exclude: Iterable[int] = ()) -> RecList:
    """Top-k by descending score, ties broken by ascending item id."""
    if k < 0:
        raise ValueError("k must be non-negative")
    excluded = set(exclude)
    order = np.lexsort((np.arange(len(scores)), -scores))
    picked = [(int(i), float(scores[i])) for i in order if int(i) not in excluded]
    return RecList(tuple(picked[:k]))


@register_module
class RatingRecommender(BaseModule):
    """Recommender module: sentiment-derived ratings in, ranked catalog out."""

    module_type: ClassVar[str] = "rating-autorec"
    kind: ClassVar[str] = "rec"

    def __init__(
        self,
        params: AutoRecParams,
        tokenizer: CompositeTokenizer,
        lexicon: SentimentLexicon,
        window: int = DEFAULT_WINDOW,
        default_top_k: int = 3,
    ):
        if params.n_items != len(tokenizer.catalog):
            raise ShapeMismatchError(
                f"params cover {params.n_items} items, catalog has {len(tokenizer.catalog)}"
            )
        self.params = params
        self.tokenizer = tokenizer
        self.lexicon = lexicon
        self.window = window
        self.default_top_k = default_top_k

    @property
    def config(self) -> ModuleConfig:
        return ModuleConfig(
            module_type=self.module_type,
            params={
                "hidden_size": self.params.hidden_size,
                "n_items": self.params.n_items,
                "window": self.window,
                "default_top_k": self.default_top_k,
                "sub_tokenizers": list(self.tokenizer.sub_tokenizers),
            },
        )

    def state_tensors(self) -> dict[str, np.ndarray]:
        return {
            "W1": self.params.W1,
            "b1": self.params.b1,
            "W2": self.params.W2,
            "b2": self.params.b2,
        }

    def save_extra_assets(self, art_dir: Path) -> list[Path]:
        tok_dir = art_dir / "tokenizer"
        tok_dir.mkdir(parents=True, exist_ok=True)
        path = tok_dir / SENTIMENT_FILE
        self.lexicon.save(path)
        return [path]

    @monitored("forward")
    def forward(
        self, inputs: EncodedInputs, labels: dict[str, np.ndarray] | None = None
    ) -> dict[str, np.ndarray]:
        """Rating reconstruction. ``labels['ratings']`` supplies the dense
        rating vector; without it, every mentioned entity counts as +1."""
        if labels and "ratings" in labels:
            ratings = np.asarray(labels["ratings"], dtype=np.float64)
        else:
            ratings = RatingVector({i: 1 for i in inputs.entity_ids}).dense(self.params.n_items)
        return {"scores": autorec_forward(self.params, ratings)}

    @monitored("respond")
    def response(
        self,
        dialog: Dialog,
        tokenizer: CompositeTokenizer | None = None,
        top_k: int | None = None,
        exclude_mentioned: bool = True,
        **kwargs: Any,
    ) -> ModuleOutput:
        tok = tokenizer or self.tokenizer
        k = self.default_top_k if top_k is None else int(top_k)
        encoded = tok.encode(dialog)
        ratings = extract_ratings(dialog, tok.catalog, self.lexicon, window=self.window)
        scores = self.forward(encoded, labels={"ratings": ratings.dense(self.params.n_items)})[
            "scores"
        ]
        exclude = set(encoded.entity_ids) if exclude_mentioned else set()
        return ModuleOutput(recommendations=rank_items(scores, k, exclude))

    @classmethod
    def load_artifact(
        cls, config: ModuleConfig, art_dir: Path, ctx: LoadContext
    ) -> "RatingRecommender":
        from .artifacts import load_weights

        tokenizer = CompositeTokenizer.load_assets(
            art_dir / "tokenizer", config.params.get("sub_tokenizers", ["word"])
        )
        lexicon = SentimentLexicon.load(art_dir / "tokenizer" / SENTIMENT_FILE)
        weights = load_weights(art_dir)
        if weights is None:
            raise FileNotFoundError(f"{art_dir} has no weights.bin")
        params = AutoRecParams(
            W1=weights.tensors["W1"].astype(np.float64),
            b1=weights.tensors["b1"].astype(np.float64),
            W2=weights.tensors["W2"].astype(np.float64),
            b2=weights.tensors["b2"].astype(np.float64),
        )
        return cls(
            params,
            tokenizer,
            lexicon,
            window=config.params.get("window", DEFAULT_WINDOW),
            default_top_k=config.params.get("default_top_k", 3),
        )

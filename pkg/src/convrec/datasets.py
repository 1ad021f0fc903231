"""Synthetic data for training and evaluating the rating recommender at desk
scale, plus the small demo catalog and sentiment lexicon used by the bundled
artifacts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autorec import AutoRecParams, RatingVector, SentimentLexicon, autorec_forward
from .tokenization import EntityCatalog

DEMO_MOVIES = [
    "Billy Madison (1995)",
    "Happy Gilmore (1996)",
    "The Wedding Singer (1998)",
    "The Waterboy (1998)",
    "Big Daddy (1999)",
    "Little Nicky (2000)",
    "Mr. Deeds (2002)",
    "Anger Management (2003)",
    "50 First Dates (2004)",
    "Click (2006)",
    "Forever My Girl (2018)",
    "The Notebook (2004)",
    "Up (2009)",
    "La La Land (2016)",
    "Pride & Prejudice (2005)",
    "About Time (2013)",
    "Notting Hill (1999)",
    "The Proposal (2009)",
    "Crazy Rich Asians (2018)",
    "Me Before You (2016)",
]

POSITIVE_WORDS = [
    "like", "liked", "likes", "love", "loved", "enjoy", "enjoyed", "great",
    "good", "awesome", "amazing", "fun", "funny", "favorite", "best", "fantastic",
]
NEGATIVE_WORDS = [
    "hate", "hated", "dislike", "disliked", "boring", "bad", "awful",
    "terrible", "worst", "meh", "dull",
]


def demo_catalog() -> EntityCatalog:
    return EntityCatalog({name: i for i, name in enumerate(DEMO_MOVIES)})


def demo_lexicon() -> SentimentLexicon:
    polarity = {w: 1 for w in POSITIVE_WORDS}
    polarity.update({w: -1 for w in NEGATIVE_WORDS})
    return SentimentLexicon(polarity)


@dataclass
class TwoClusterDataset:
    """Users split into two preference clusters over a small item catalog.

    Each user likes most of their own cluster's items (+1) and dislikes a few
    items from the other cluster (-1). Exactly one liked own-cluster item per
    user is held out of the training vector as the retrieval target.
    """

    n_items: int
    train: list[RatingVector]
    heldout: list[int]  # per user, the held-out liked item

    def eligible(self, user: int) -> list[int]:
        observed = set(self.train[user].ratings)
        return [i for i in range(self.n_items) if i not in observed]


def make_two_cluster_dataset(
    n_items: int = 20,
    n_users: int = 40,
    seed: int = 0,
    disliked_per_user: int = 3,
) -> TwoClusterDataset:
    if n_items % 2:
        raise ValueError("n_items must be even (two equal clusters)")
    rng = np.random.default_rng(seed)
    half = n_items // 2
    clusters = (list(range(half)), list(range(half, n_items)))
    train: list[RatingVector] = []
    heldout: list[int] = []
    for user in range(n_users):
        own, other = clusters[user % 2], clusters[1 - user % 2]
        own_perm = rng.permutation(own)
        target = int(own_perm[0])
        liked = [int(i) for i in own_perm[1:]]
        disliked = [int(i) for i in rng.permutation(other)[:disliked_per_user]]
        ratings = {i: 1 for i in liked}
        ratings.update({i: -1 for i in disliked})
        train.append(RatingVector(ratings))
        heldout.append(target)
    return TwoClusterDataset(n_items=n_items, train=train, heldout=heldout)


def recall_at_1(params: AutoRecParams, ds: TwoClusterDataset) -> float:
    """Fraction of users whose top-scored unobserved item is their held-out
    liked item."""
    hits = 0
    for user, rv in enumerate(ds.train):
        scores = autorec_forward(params, rv)
        eligible = ds.eligible(user)
        top = max(eligible, key=lambda i: (scores[i], -i))
        hits += top == ds.heldout[user]
    return hits / len(ds.train)


def random_recall_baseline(ds: TwoClusterDataset) -> float:
    """Expected recall@1 of a uniformly random ranker over eligible items."""
    return float(np.mean([1.0 / len(ds.eligible(u)) for u in range(len(ds.train))]))

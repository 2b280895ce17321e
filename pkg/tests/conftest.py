"""Shared fixtures: a small corpus and quickly trained checkpoints.

The corpus here is deliberately smaller than the default (4 speakers x 4
contents) so that unit tests exercising trained artifacts stay fast; the
full-size default corpus is reserved for the acceptance tests.
"""

import dataclasses

import numpy as np
import pytest

from stylemotion import (
    CorpusConfig,
    ExpertConfig,
    SemanticConfig,
    StyleConfig,
    DiffusionConfig,
    build_corpus,
    train_expert,
    train_semantic_encoder,
    train_sdse,
    train_diffusion,
)

TINY_CORPUS = CorpusConfig(
    n_speakers=4,
    n_contents=4,
    num_frames=64,
    n_held_out_speakers=1,
    n_held_out_contents=1,
    val_fraction=0.25,
)

TINY_EXPERT = ExpertConfig(steps=60, batch_size=32)
TINY_SEMANTIC = SemanticConfig(steps=150, bank_size=64, batch_size=16)
TINY_STYLE = StyleConfig(steps=40, batch_triplets=8)
TINY_DIFFUSION = DiffusionConfig(
    d_model=32, blocks=2, heads=2, steps=60, batch_size=8, crop_len=32, eval_every=30
)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_corpus")
    return build_corpus(TINY_CORPUS, out)


@pytest.fixture(scope="session")
def tiny_expert(tiny_corpus):
    return train_expert(tiny_corpus, TINY_EXPERT)


@pytest.fixture(scope="session")
def tiny_semantic(tiny_corpus, tiny_expert):
    return train_semantic_encoder(tiny_corpus, tiny_expert, TINY_SEMANTIC)


@pytest.fixture(scope="session")
def tiny_style(tiny_corpus, tiny_semantic):
    return train_sdse(tiny_corpus, tiny_semantic, TINY_STYLE)


@pytest.fixture(scope="session")
def tiny_diffusion(tiny_corpus, tiny_style):
    return train_diffusion(tiny_corpus, tiny_style, TINY_DIFFUSION)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)

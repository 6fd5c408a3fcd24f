from pathlib import Path

import pytest

from smtlab.grammar import GrammarConfig, generate_piece


@pytest.fixture(scope="session")
def fixture_docs():
    """50+ structurally valid documents across both styles."""
    docs = []
    for style, pieces in (("grandstaff", 9), ("quartet", 5)):
        cfg = GrammarConfig(style=style, bars_per_excerpt=1, excerpts_per_piece=4)
        for p in range(pieces):
            docs.extend(generate_piece(p, cfg, seed=1234))
    assert len(docs) >= 50
    return docs


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Small rendered corpus on disk, shared by trainer/eval/CLI tests."""
    from smtlab.corpus import CorpusConfig, make_corpus

    out = tmp_path_factory.mktemp("corpus")
    cfg = CorpusConfig(
        n_pieces=6, excerpts_per_piece=2, bars_per_excerpt=1, image_height=64, seed=7
    )
    rows = make_corpus(out, cfg)
    return Path(out), rows

"""Bi-encoder index: brute-force agreement, recall arithmetic, persistence."""

import numpy as np
import pytest

from entsel.errors import DataError
from entsel.pairing import OptionSpace, SelectionInstance
from entsel.retrieval import (EmbeddingIndex, build_index, embed_text,
                              load_index, option_text, rank_all, recall_at_k,
                              recall_from_rankings, retrieve_candidates,
                              save_index, top_k, train_bi_encoder)
from entsel.encoder import EncoderModel

from conftest import TINY, small_instances, small_space, vocab_for


@pytest.fixture(scope="module")
def setup():
    space = small_space(n=10)
    instances = small_instances(space, n=8, seed=3)
    vocab = vocab_for(space, instances)
    model = EncoderModel(TINY, len(vocab))
    return space, instances, vocab, model, build_index(model, space, vocab)


def test_option_text_uses_template_only_with_entity():
    plain = OptionSpace(options=("cat", "dog"), template="about [LABEL]")
    assert option_text(plain, 1) == "about dog"
    ent = OptionSpace(options=("cat",), template="[ENTITY] is a [LABEL]")
    assert option_text(ent, 0) == "cat"  # entity templates index the bare label


def test_index_shape_and_unit_rows(setup):
    space, _, _, _, index = setup
    assert index.matrix.shape == (len(space), TINY.model_dim)
    norms = np.linalg.norm(index.matrix, axis=1)
    assert np.abs(norms - 1.0).max() < 1e-9


def test_index_rebuild_bitwise(setup):
    space, _, vocab, model, index = setup
    again = build_index(model, space, vocab)
    assert np.array_equal(index.matrix, again.matrix)


def test_non_unit_rows_rejected():
    with pytest.raises(DataError):
        EmbeddingIndex(matrix=np.ones((2, 4)))


def test_option_query_ranks_itself_first(setup):
    space, _, vocab, model, index = setup
    for i in range(len(space)):
        got = top_k(index, model, vocab, option_text(space, i), 1)
        assert got[0].index == i and got[0].score == pytest.approx(1.0)


def test_top_k_matches_brute_force(setup):
    space, instances, vocab, model, index = setup
    for inst in instances[:4]:
        q = embed_text(model, vocab, inst.premise)
        scores = index.matrix @ q
        full_order = sorted(range(len(space)), key=lambda i: (-scores[i], i))
        for k in range(1, len(space) + 1):
            got = top_k(index, model, vocab, inst.premise, k)
            assert [s.index for s in got] == full_order[:k]
            assert all(s.score == scores[s.index] for s in got)


def test_top_k_tie_break_to_smaller_index():
    # duplicate rows force exact score ties
    v = np.array([1.0, 0.0, 0.0, 0.0])
    w = np.array([0.0, 1.0, 0.0, 0.0])
    index = EmbeddingIndex(matrix=np.stack([w, v, v, w]))
    order = np.lexsort((np.arange(4), -(index.matrix @ v)))
    assert list(order) == [1, 2, 0, 3]


def test_top_k_validates_k(setup):
    space, _, vocab, model, index = setup
    with pytest.raises(DataError):
        top_k(index, model, vocab, "x", 0)
    with pytest.raises(DataError):
        top_k(index, model, vocab, "x", len(space) + 1)


def test_rank_all_and_retrieve_agree_with_top_k(setup):
    space, instances, vocab, model, index = setup
    rankings = rank_all(index, model, vocab, instances)
    cands = retrieve_candidates(index, model, vocab, instances, 4)
    for inst in instances:
        want = [s.index for s in top_k(index, model, vocab, inst.premise, len(space))]
        assert rankings[inst.id] == want
        assert cands[inst.id] == want[:4]


def test_recall_arithmetic():
    insts = [SelectionInstance(id="a", premise="p", gold=frozenset([0, 5])),
             SelectionInstance(id="b", premise="q", gold=frozenset([2]))]
    rankings = {"a": [0, 1, 2, 3, 4, 5], "b": [9, 2, 0, 1, 3, 4]}
    # k=1: only a's gold 0 is in; 1 of 3 gold pairs
    assert recall_from_rankings(rankings, insts, 1) == pytest.approx(1 / 3)
    assert recall_from_rankings(rankings, insts, 2) == pytest.approx(2 / 3)
    assert recall_from_rankings(rankings, insts, 6) == 1.0


def test_recall_monotone_in_k(setup):
    space, instances, vocab, model, index = setup
    values = [recall_at_k(index, model, vocab, instances, k)
              for k in range(1, len(space) + 1)]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert values[-1] == 1.0  # full ranking always contains the gold


def test_index_save_load_round_trip(setup, tmp_path):
    _, _, _, _, index = setup
    path = tmp_path / "index.bin"
    save_index(path, index)
    loaded = load_index(path, space_name=index.space_name)
    assert np.array_equal(loaded.matrix, index.matrix)
    assert loaded.space_name == index.space_name


def test_index_load_rejects_truncation(setup, tmp_path):
    _, _, _, _, index = setup
    path = tmp_path / "index.bin"
    save_index(path, index)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(DataError):
        load_index(path)
    path.write_bytes(blob[:4])
    with pytest.raises(DataError):
        load_index(path)


def test_train_bi_encoder_improves_separation(setup):
    space, instances, vocab, _, _ = setup
    model = EncoderModel(TINY, len(vocab))
    before = recall_at_k(build_index(model, space, vocab), model, vocab, instances, 2)
    losses = train_bi_encoder(model, instances, space, vocab,
                              epochs=8, batch_size=8, lr=3e-3, seed=0)
    after = recall_at_k(build_index(model, space, vocab), model, vocab, instances, 2)
    assert losses[-1] < losses[0]
    assert after >= before
    with pytest.raises(DataError):
        train_bi_encoder(model, [], space, vocab)

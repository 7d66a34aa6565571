import numpy as np
import pytest

from entsel.encoder import EncoderConfig, EncoderModel
from entsel.pairing import OptionSpace, SelectionInstance
from entsel.text import build_vocab
from entsel.workbench.synth import space_corpus

TINY = EncoderConfig(layers=2, heads=2, model_dim=8, ff_dim=16, max_len=64,
                     dropout=0.0, use_positions=True, seed=0)


def small_space(n=6, template="[LABEL]"):
    return OptionSpace(options=tuple(f"opt{i}x" for i in range(n)), template=template)


def small_instances(space, n=4, golds_per=1, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        gold = sorted(int(g) for g in rng.choice(len(space), size=golds_per, replace=False))
        words = [space.options[g] for g in gold] + ["filler"] * 3
        out.append(SelectionInstance(id=f"i{i}", premise=" ".join(words),
                                     gold=frozenset(gold)))
    return out


def vocab_for(space, instances):
    return build_vocab([inst.premise for inst in instances] + space_corpus(space))


@pytest.fixture(scope="session")
def tiny_setup():
    """Small space + instances + vocab + untrained tiny model, shared read-only."""
    space = small_space()
    instances = small_instances(space, n=6)
    vocab = vocab_for(space, instances)
    model = EncoderModel(TINY, len(vocab))
    return space, instances, vocab, model

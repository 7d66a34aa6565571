"""Seed-deterministic synthetic selection tasks.

Every option owns a unique signature pseudo-word; premises are noisy token
bags containing exactly the gold options' signatures plus fillers from a
disjoint pool. That makes gold recoverable by a brute-force membership rule,
which the generator checks on every instance before returning.

Three profiles stand in for the usual regimes: a medium single-label space,
a large multi-label space with entity mentions, and a long-premise task
with a handful of options.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from ..pairing import OptionSpace, SelectionInstance
from ..text import tokenize

# filler pool kept small so each distractor type recurs often enough for a
# from-scratch encoder to learn it is uninformative within a few epochs
N_FILLERS = 64


@dataclass(frozen=True)
class Profile:
    gold_low: int
    gold_high: int
    premise_low: int
    premise_high: int
    template: str
    default_options: int
    with_entity: bool = False


PROFILES = {
    "single_small": Profile(1, 1, 5, 9, "about [LABEL]", 40),
    "multi_large": Profile(1, 4, 8, 16, "[ENTITY] is a [LABEL]", 1000, with_entity=True),
    "longdoc": Profile(1, 1, 100, 200, "the answer is [LABEL]", 4),
}


def signature(option_index):
    return f"sig{option_index}z"


def brute_force_gold(text, space):
    """The rule the generator guarantees: options whose label occurs in the text."""
    present = set(tokenize(text))
    return frozenset(i for i, opt in enumerate(space.options) if opt in present)


def _make_instance(inst_id, profile, space, fillers, rng):
    n_opts = len(space)
    n_gold = int(rng.integers(profile.gold_low, profile.gold_high + 1))
    gold = sorted(int(g) for g in rng.choice(n_opts, size=n_gold, replace=False))
    length = int(rng.integers(profile.premise_low, profile.premise_high + 1))
    tokens = [space.options[g] for g in gold]
    entity = None
    if profile.with_entity:
        entity = f"ent{inst_id.replace('-', '')}m"
        tokens.append(entity)
    n_fill = max(1, length - len(tokens))
    fill_ids = rng.integers(len(fillers), size=n_fill)
    tokens.extend(fillers[int(j)] for j in fill_ids)
    order = rng.permutation(len(tokens))
    text = " ".join(tokens[int(i)] for i in order)
    return SelectionInstance(id=inst_id, premise=text, gold=frozenset(gold), entity=entity)


def synth(profile_name, n_options=None, n_train=200, n_dev=50, n_test=50, seed=0):
    """Generate (splits, space); label-consistent and byte-stable per seed."""
    if profile_name not in PROFILES:
        raise DataError(f"unknown profile {profile_name!r}; pick from {sorted(PROFILES)}")
    profile = PROFILES[profile_name]
    if n_options is None:
        n_options = profile.default_options
    if min(n_options, n_train, n_dev, n_test) < 1:
        raise DataError("all sizes must be positive")
    if n_options <= profile.gold_high:
        raise DataError(f"{profile_name} needs more than {profile.gold_high} options")
    options = tuple(signature(i) for i in range(n_options))
    if len(set(options)) != n_options:
        raise DataError("option signature collision")  # unreachable with this scheme
    fillers = [f"pad{j}q" for j in range(N_FILLERS)]
    assert not set(fillers) & set(options)
    space = OptionSpace(options=options, template=profile.template, name=profile_name)
    rng = np.random.default_rng(seed)
    splits = {}
    for split, count in (("train", n_train), ("dev", n_dev), ("test", n_test)):
        instances = []
        for i in range(count):
            inst = _make_instance(f"{split}-{i:05d}", profile, space, fillers, rng)
            if brute_force_gold(inst.premise, space) != inst.gold:
                raise DataError(f"generator self-check failed on {inst.id}")
            instances.append(inst)
        splits[split] = instances
    return splits, space


def space_corpus(space):
    """Lines whose tokens must be in-vocabulary for this space's hypotheses."""
    template_words = [t for t in tokenize(space.template) if t not in ("[entity]", "[label]")]
    lines = list(space.options)
    if template_words:
        lines.append(" ".join(template_words))
    return lines

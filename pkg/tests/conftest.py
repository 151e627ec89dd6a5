import pytest

from condfilter.model import SampleRecord, ScoredGeneration


def make_record(sid, emb, surrogates, golds=None, label="a"):
    golds = golds if golds is not None else [None] * len(surrogates)
    gens = tuple(
        ScoredGeneration(f"{sid}-g{k}", float(s), None if g is None else float(g))
        for k, (s, g) in enumerate(zip(surrogates, golds))
    )
    return SampleRecord(sid, tuple(emb), label, gens)


@pytest.fixture
def example_record():
    # three generations, only the middle one below the 0.5 gold threshold
    return make_record("r0", (0.0, 0.0), [0.9, 0.6, 0.3], [0.7, 0.4, 0.8])

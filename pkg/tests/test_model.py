import math

import pytest
from hypothesis import given, strategies as st

from condfilter.model import (
    ConfigError,
    DatasetError,
    FilterConfig,
    FilterDecision,
    decide,
    validate_dataset,
)

from conftest import make_record


def three_records():
    return [
        make_record(f"s{i}", (i, -i), [0.1, 0.3, 0.5, 0.7, 0.9], [0.2, 0.4, 0.6, 0.8, 1.0])
        for i in range(3)
    ]


def test_well_formed_passes():
    recs = validate_dataset(three_records(), require_gold=True)
    assert [len(r.generations) for r in recs] == [5, 5, 5]


def test_surrogate_out_of_range():
    bad = [make_record("x", (0, 0), [1.3, 0.2])]
    with pytest.raises(DatasetError, match="score out of range"):
        validate_dataset(bad)


def test_dimension_mismatch():
    recs = [make_record("a", (0, 0), [0.5]), make_record("b", (0, 0, 0), [0.5])]
    with pytest.raises(DatasetError, match="dimension mismatch"):
        validate_dataset(recs)


def test_missing_gold_and_duplicates_all_reported():
    a = make_record("a", (0,), [0.5, 0.4])
    dup = make_record("a", (1,), [0.5, 0.4], [0.2, 0.9])
    with pytest.raises(DatasetError) as exc:
        validate_dataset([a, dup], require_gold=True)
    text = " ".join(exc.value.violations)
    assert "missing gold" in text
    assert "duplicate sample_id" in text


def test_duplicate_gen_ids_rejected():
    rec = make_record("a", (0,), [0.5, 0.4])
    from dataclasses import replace

    rec = replace(rec, generations=(rec.generations[0], rec.generations[0]))
    with pytest.raises(DatasetError, match="duplicate gen_id"):
        validate_dataset([rec])


def test_empty_dataset_rejected():
    with pytest.raises(DatasetError):
        validate_dataset([])


def test_gold_out_of_range_and_nan():
    with pytest.raises(DatasetError, match="gold score out of range"):
        validate_dataset([make_record("a", (0,), [0.5], [-0.1])])
    with pytest.raises(DatasetError, match="surrogate"):
        validate_dataset([make_record("a", (0,), [math.nan])])


unit = st.floats(0, 1)


@given(st.lists(st.lists(unit, min_size=1, max_size=6), min_size=1, max_size=5))
def test_validation_idempotent(surr_lists):
    recs = [make_record(f"r{i}", (float(i),), s, s) for i, s in enumerate(surr_lists)]
    once = validate_dataset(recs, require_gold=True)
    assert validate_dataset(once, require_gold=True) == once == recs


@pytest.mark.parametrize(
    "kwargs",
    [dict(alpha=0.0), dict(alpha=1.0), dict(gamma=0), dict(rho=-1), dict(rho=0.5),
     dict(bandwidth=-1.0), dict(bandwidth="wide"), dict(randomization="sometimes"),
     dict(bisection_tol=0), dict(lam=1.5)],
)
def test_config_invariants(kwargs):
    with pytest.raises(ConfigError):
        FilterConfig(**kwargs)


def test_decide_partitions(example_record):
    d = decide(example_record, 0.5)
    assert d.kept == ("r0-g0", "r0-g1") and d.dropped == ("r0-g2",)
    assert set(d.kept) | set(d.dropped) == set(example_record.gen_ids)


def test_decision_json_roundtrip_with_infinite_cutoff():
    d = FilterDecision("s", math.inf, (), ("g",), None)
    back = FilterDecision.from_json(d.to_json())
    assert back == d and d.to_json()["cutoff"] == "inf"

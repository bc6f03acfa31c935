import json
from collections import Counter

import pytest

from smartintent.dataset import (
    INTENT_CATEGORIES,
    NUM_CLASSES,
    DatasetError,
    SourceContract,
    balanced_sample,
    ingest_jsonl,
    split,
    write_jsonl,
)


def _contract(cid: str, labels=None, source="contract T { }") -> SourceContract:
    bits = [0] * NUM_CLASSES
    for c in labels or []:
        bits[c] = 1
    return SourceContract(id=cid, source=source, labels=tuple(bits))


def _write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


class TestIngest:
    def test_schema_echo(self, tmp_path):
        path = tmp_path / "data.jsonl"
        _write_lines(
            path,
            ['{"id":"0xA","source":"contract T { }","labels":[0,0,0,0,0,0,0,0,0,0]}'],
        )
        contracts = ingest_jsonl(path)
        assert len(contracts) == 1
        assert contracts[0].id == "0xA"
        assert contracts[0].source == "contract T { }"
        assert contracts[0].labels == (0,) * 10

    def test_label_arity_error(self, tmp_path):
        path = tmp_path / "data.jsonl"
        _write_lines(path, ['{"id":"0xA","source":"x","labels":[0,0,0,0,0,0,0,0,0]}'])
        with pytest.raises(DatasetError, match="label arity"):
            ingest_jsonl(path)

    def test_duplicate_id_error(self, tmp_path):
        path = tmp_path / "data.jsonl"
        line = '{"id":"0xA","source":"x","labels":[0,0,0,0,0,0,0,0,0,0]}'
        _write_lines(path, [line, line])
        with pytest.raises(DatasetError, match="duplicate id"):
            ingest_jsonl(path)

    def test_malformed_json_reports_line_number(self, tmp_path):
        path = tmp_path / "data.jsonl"
        _write_lines(
            path,
            ['{"id":"0xA","source":"x","labels":[0,0,0,0,0,0,0,0,0,0]}', "{nope"],
        )
        with pytest.raises(DatasetError, match="line 2"):
            ingest_jsonl(path)

    def test_empty_source_rejected(self, tmp_path):
        path = tmp_path / "data.jsonl"
        _write_lines(path, ['{"id":"0xA","source":"","labels":[0,0,0,0,0,0,0,0,0,0]}'])
        with pytest.raises(DatasetError, match="source"):
            ingest_jsonl(path)

    def test_roundtrip_identity(self, tmp_path):
        contracts = [
            _contract("0xA", [0, 3], source="contract A { function f() public {} }"),
            _contract("0xB", [9], source='contract B { string s = "über"; }'),
        ]
        path = tmp_path / "out.jsonl"
        write_jsonl(contracts, path)
        assert ingest_jsonl(path) == contracts


class TestSplit:
    def test_cardinality(self):
        data = [_contract(f"0x{i}") for i in range(10)]
        result = split(data, 0.2, seed=7)
        assert len(result.train) == 8
        assert len(result.eval) == 2
        assert {c.id for c in result.train}.isdisjoint({c.id for c in result.eval})

    def test_determinism(self):
        data = [_contract(f"0x{i}") for i in range(25)]
        a = split(data, 0.3, seed=11)
        b = split(data, 0.3, seed=11)
        assert a == b

    def test_partition_by_id(self):
        data = [_contract(f"0x{i}") for i in range(17)]
        for seed in range(20):
            result = split(data, 0.4, seed=seed)
            ids = sorted(c.id for c in result.train) + sorted(c.id for c in result.eval)
            assert sorted(ids) == sorted(c.id for c in data)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.5, 2.0])
    def test_fraction_out_of_range(self, fraction):
        with pytest.raises(DatasetError):
            split([_contract("0xA")], fraction, seed=0)


class TestBalancedSample:
    def test_exact_positives_all_drawn(self):
        # 10 positives per class, per_class=10: each positive must appear.
        data = []
        for c in range(NUM_CLASSES):
            for j in range(10):
                data.append(_contract(f"0x{c}_{j}", [c]))
        drawn = balanced_sample(data, per_class=10, seed=5)
        assert len(drawn) == 100
        assert {d.id for d in drawn} == {d.id for d in data}

    def test_zero_positive_class_reports_name(self):
        data = [_contract(f"0x{i}", [i]) for i in range(NUM_CLASSES) if i != 6]
        with pytest.raises(DatasetError, match="Honeypot"):
            balanced_sample(data, per_class=10, seed=0)
        assert INTENT_CATEGORIES[6] == "Honeypot"

    def test_scarce_class_samples_with_replacement(self):
        data = [_contract(f"0x{c}_{j}", [c]) for c in range(NUM_CLASSES) for j in range(10)]
        scarce = [_contract(f"0xS{j}", [0]) for j in range(3)]
        only_scarce = scarce + [c for c in data if c.labels[0] == 0]
        drawn = balanced_sample(only_scarce, per_class=10, seed=3)
        tally = Counter(d.id for d in drawn if d.labels[0] == 1)
        assert sum(tally.values()) == 10
        assert set(tally) <= {s.id for s in scarce}

    def test_draw_count_for_all_seeds(self):
        data = [_contract(f"0x{c}_{j}", [c]) for c in range(NUM_CLASSES) for j in range(4)]
        for seed in range(25):
            for per_class in (1, 3, 7):
                assert len(balanced_sample(data, per_class, seed)) == NUM_CLASSES * per_class

    def test_per_class_must_be_positive(self):
        with pytest.raises(DatasetError):
            balanced_sample([_contract("0xA", [0])], per_class=0, seed=0)

    def test_deterministic_per_seed(self):
        data = [_contract(f"0x{c}_{j}", [c]) for c in range(NUM_CLASSES) for j in range(5)]
        a = balanced_sample(data, 4, seed=9)
        b = balanced_sample(data, 4, seed=9)
        assert [x.id for x in a] == [x.id for x in b]


def test_categories_are_fixed_order():
    assert INTENT_CATEGORIES == (
        "Fee",
        "DisableTrading",
        "Blacklist",
        "Reflect",
        "MaxTX",
        "Mint",
        "Honeypot",
        "Reward",
        "Rebase",
        "MaxSell",
    )
    assert NUM_CLASSES == 10

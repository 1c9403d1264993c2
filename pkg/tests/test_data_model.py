import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from recal import io
from recal.data import (
    GLOBAL_TRANSFORM_INDEX,
    CalibrationIteration,
    CalibrationMap,
    FitConfig,
    GroupPartition,
    ImageTensorSet,
    LogitsTable,
    TransformationKind,
    TransformationPool,
    TransformationSpec,
)
from recal.exceptions import ContractError, DomainError, FormatError, ParseError

from .conftest import random_table

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@st.composite
def logits_tables(draw, max_n=12, max_k=6):
    n = draw(st.integers(1, max_n))
    k = draw(st.integers(2, max_k))
    logits = draw(arrays(np.float64, (n, k), elements=finite))
    labeled = draw(st.booleans())
    labels = draw(arrays(np.int64, n, elements=st.integers(0, k - 1))) if labeled else None
    return LogitsTable(logits, labels)


def _iteration(rng, n=10, index=0):
    raw = tuple(float(x) for x in rng.uniform(0.2, 5.0, size=4))
    sizes = rng.multinomial(n, [0.25] * 4)
    temps = tuple((1 - s / n) + s / n * r for s, r in zip(sizes, raw))
    return CalibrationIteration(index, temps, raw, tuple(int(s) for s in sizes),
                                float(rng.uniform()))


def _pool(count=5, seed=3):
    params = np.linspace(0.1, 0.9, count)
    return TransformationPool(tuple(TransformationSpec("zoom_out", p) for p in params),
                              seed=seed, range_low=0.1, range_high=0.9)


class TestLogitsTable:
    def test_rejects_non_finite(self):
        with pytest.raises(DomainError):
            LogitsTable([[0.0, np.nan]])
        with pytest.raises(DomainError):
            LogitsTable([[np.inf, 0.0]])

    def test_rejects_bad_shapes(self):
        with pytest.raises(ContractError):
            LogitsTable([[1.0]])
        with pytest.raises(ContractError):
            LogitsTable(np.zeros((0, 3)))
        with pytest.raises(ContractError):
            LogitsTable([1.0, 2.0])

    @pytest.mark.parametrize("labels", [[2], [-1], [0, 1], [0.5]])
    def test_rejects_bad_labels(self, labels):
        with pytest.raises(ContractError):
            LogitsTable([[0.0, 1.0]], labels)

    def test_is_immutable(self, small_table):
        with pytest.raises(ValueError):
            small_table.logits[0, 0] = 1.0
        with pytest.raises(AttributeError):
            small_table.logits = None

    def test_copies_input(self):
        raw = np.zeros((2, 2))
        t = LogitsTable(raw)
        raw[0, 0] = 5.0
        assert t.logits[0, 0] == 0.0

    def test_take_and_require_labels(self, small_table):
        sub = small_table.take(np.array([0, 2]))
        assert sub.n_samples == 2
        np.testing.assert_array_equal(sub.labels, small_table.labels[[0, 2]])
        with pytest.raises(ContractError):
            LogitsTable([[0.0, 1.0]]).require_labels()


class TestValueTypes:
    @pytest.mark.parametrize("p", [0.0, -0.1, 1.5])
    def test_spec_parameter_range(self, p):
        with pytest.raises(DomainError):
            TransformationSpec("zoom_out", p)

    def test_kind_aliases(self):
        assert TransformationKind.parse("z") is TransformationKind.ZOOM_OUT
        assert TransformationKind.parse("b") is TransformationKind.BRIGHTNESS
        with pytest.raises(ContractError):
            TransformationKind.parse("blur")

    def test_pool_invariants(self):
        with pytest.raises(ContractError):
            TransformationPool((), seed=0, range_low=0.1, range_high=0.9)
        with pytest.raises(ContractError):
            TransformationPool((TransformationSpec("z", 0.95),), 0, 0.1, 0.9)
        with pytest.raises(ContractError):
            TransformationPool((TransformationSpec("z", 0.5),), 0, 0.6, 0.4)
        with pytest.raises(ContractError):
            TransformationPool((TransformationSpec("z", 0.5), TransformationSpec("b", 0.5)),
                               0, 0.1, 0.9)

    def test_partition_invariants(self):
        part = GroupPartition([[0, 3], [], [1], [2]], 4)
        assert part.sizes == (2, 0, 1, 1)
        np.testing.assert_array_equal(part.group_numbers(), [1, 3, 4, 1])
        with pytest.raises(ContractError):
            GroupPartition([[0, 1], [1], [2], [3]], 4)
        with pytest.raises(ContractError):
            GroupPartition([[0], [1], [2], []], 4)

    def test_iteration_temperature_between_one_and_raw(self):
        with pytest.raises(ContractError):
            CalibrationIteration(0, (1.0, 1.0, 1.0, 2.5), (1.0, 1.0, 1.0, 2.0), (0, 0, 0, 5), 0.1)
        with pytest.raises(DomainError):
            CalibrationIteration(0, (1.0, 1.0, 1.0, -1.0), (1.0,) * 4, (0, 0, 0, 5), 0.1)

    def test_map_invariants(self, rng):
        it = _iteration(rng, index=7)
        with pytest.raises(ContractError):
            CalibrationMap(_pool(5), (it,), FitConfig(), "ab", 0.1)
        with pytest.raises(ContractError):
            CalibrationMap(_pool(), (_iteration(rng),) * 3, FitConfig(max_iterations=2), "ab", 0.1)
        with pytest.raises(ContractError):
            CalibrationMap(None, (_iteration(rng),), FitConfig(), "ab", 0.1)

    def test_image_tensor_invariants(self):
        with pytest.raises(DomainError):
            ImageTensorSet(np.full((1, 1, 2, 2), 1.5))
        with pytest.raises(ContractError):
            ImageTensorSet(np.zeros((2, 2)))


class TestLogitsCsv:
    def test_minimal_file(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("label,z0,z1\n0,2.0,0.0\n")
        t = io.read_logits_csv(path)
        assert (t.n_samples, t.n_classes) == (1, 2)
        np.testing.assert_array_equal(t.labels, [0])
        np.testing.assert_array_equal(t.logits, [[2.0, 0.0]])

    @pytest.mark.parametrize("text, line", [
        ("label,z0,z1\n3,1.0,0.5\n", 2),
        ("label,a,b\n0,1.0,0.5\n", 1),
        ("label,z0\n0,1.0\n", 1),
        ("label,z0,z1\n0,1.0,nan\n", 2),
        ("label,z0,z1\n0,1.0,inf\n", 2),
        ("label,z0,z1\n0,1.0\n", 2),
        ("label,z0,z1\n0,1.0,2.0\n,1.0,2.0\n", 3),
        ("label,z0,z1\n0,1.0,x\n", 2),
        ("label,z0,z1\n-1,1.0,2.0\n", 2),
        ("label,z0,z1\n", 2),
        ("", 1),
    ])
    def test_parse_errors(self, text, line):
        with pytest.raises(ParseError) as info:
            io.parse_logits_csv(text)
        assert info.value.line == line

    def test_write_small(self, tmp_path):
        path = tmp_path / "f.csv"
        io.write_logits_csv(LogitsTable([[2.0, 0.0]], [1]), path)
        assert path.read_text() == "label,z0,z1\n1,2.0,0.0\n"

    def test_write_unlabeled(self, tmp_path):
        path = tmp_path / "f.csv"
        io.write_logits_csv(LogitsTable([[2.0, 0.0], [0.5, 1e-300]]), path)
        lines = path.read_text().splitlines()
        assert all(line.startswith(",") for line in lines[1:])
        assert not io.read_logits_csv(path).is_labeled

    def test_round_trip_100x10(self, tmp_path, rng):
        table = random_table(rng, n=100, k=10, scale=1e3)
        path = tmp_path / "f.csv"
        io.write_logits_csv(table, path)
        assert io.read_logits_csv(path) == table
        text = path.read_text()
        io.write_logits_csv(io.read_logits_csv(path), path)
        assert path.read_text() == text

    @settings(max_examples=60, deadline=None)
    @given(logits_tables())
    def test_round_trip_property(self, table):
        text = io.format_logits_csv(table)
        again = io.parse_logits_csv(text)
        assert again == table
        assert io.format_logits_csv(again) == text

    def test_accepts_missing_trailing_newline(self):
        t = io.parse_logits_csv("label,z0,z1\n0,2.0,0.0")
        assert t.n_samples == 1


class TestMapFile:
    def _map(self, rng, n_iter=3):
        its = tuple(_iteration(rng, index=i % 5) for i in range(n_iter))
        return CalibrationMap(_pool(), its, FitConfig(), "deadbeef", 0.25, validation_size=10)

    def test_empty_map_round_trip(self, tmp_path):
        cmap = CalibrationMap(_pool(), (), FitConfig(), "00", 0.0)
        io.save_map(cmap, tmp_path / "m.json")
        assert io.load_map(tmp_path / "m.json") == cmap

    def test_three_iterations_round_trip_exactly(self, tmp_path, rng):
        cmap = self._map(rng)
        io.save_map(cmap, tmp_path / "m.json")
        back = io.load_map(tmp_path / "m.json")
        assert back == cmap
        for a, b in zip(back.iterations, cmap.iterations):
            assert a.temperatures == b.temperatures
            assert a.raw_temperatures == b.raw_temperatures

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 6))
    def test_round_trip_property(self, seed, n_iter):
        cmap = self._map(np.random.default_rng(seed), n_iter)
        assert io.loads_map(io.dumps_map(cmap)) == cmap

    def test_global_map_round_trip(self):
        it = CalibrationIteration(GLOBAL_TRANSFORM_INDEX, (2.0,) * 4, (2.0,) * 4, (0, 0, 0, 4), 0.1)
        cmap = CalibrationMap(None, (it,), FitConfig(max_iterations=1, method="ts"), "ff", 0.2, 4)
        assert io.loads_map(io.dumps_map(cmap)) == cmap

    def test_field_names(self, rng):
        doc = json.loads(io.dumps_map(self._map(rng)))
        assert {"format_version", "pool", "config", "iterations", "fingerprint"} <= set(doc)
        assert set(doc["pool"]) == {"seed", "kind", "range", "parameters"}
        assert {"max_iterations", "stopping_delta", "ece_bins",
                "confidence_comparison_mode"} <= set(doc["config"])
        assert set(doc["iterations"][0]) == {"transform_index", "raw_temperatures",
                                             "temperatures", "group_sizes",
                                             "validation_ece_after"}

    def test_unknown_version(self, rng):
        doc = json.loads(io.dumps_map(self._map(rng)))
        doc["format_version"] = 2
        with pytest.raises(FormatError):
            io.loads_map(json.dumps(doc))

    @pytest.mark.parametrize("field", ["pool", "config", "iterations", "fingerprint"])
    def test_missing_field(self, rng, field):
        doc = json.loads(io.dumps_map(self._map(rng)))
        del doc[field]
        with pytest.raises(FormatError):
            io.loads_map(json.dumps(doc))

    def test_missing_nested_field(self, rng):
        doc = json.loads(io.dumps_map(self._map(rng)))
        del doc["iterations"][0]["temperatures"]
        with pytest.raises(FormatError):
            io.loads_map(json.dumps(doc))

    def test_not_json(self):
        with pytest.raises(FormatError):
            io.loads_map("{nope")


class TestTensorFile:
    def test_round_trip_and_layout(self, tmp_path, rng):
        values = rng.uniform(size=(2, 3, 4, 5)).astype(np.float32)
        path = tmp_path / "x.rct"
        io.write_tensor(ImageTensorSet(values), path)
        blob = path.read_bytes()
        assert blob[:4] == b"RCT1"
        assert np.frombuffer(blob[4:20], "<u4").tolist() == [2, 3, 4, 5]
        assert len(blob) == 20 + 4 * values.size
        np.testing.assert_array_equal(np.frombuffer(blob[20:], "<f4"), values.ravel())
        assert io.read_tensor(path) == ImageTensorSet(values)

    def test_bad_magic_and_truncation(self, tmp_path):
        path = tmp_path / "x.rct"
        path.write_bytes(b"XXXX" + bytes(16))
        with pytest.raises(FormatError):
            io.read_tensor(path)
        io.write_tensor(ImageTensorSet(np.zeros((1, 1, 2, 2))), path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError):
            io.read_tensor(path)

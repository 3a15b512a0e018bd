import json

import pytest
from hypothesis import given, strategies as st

from hybridpar import data_path, load_model, save_model, uniform_model
from hybridpar.errors import ValidationError
from hybridpar.model_ir import LayerSpec, ModelSpec, model_from_layers

MiB = 1 << 20


def write(tmp_path, obj, name="m.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return p


def test_bert_fixture_matches_table_totals(bert32):
    assert len(bert32) == 32
    assert bert32.total_param_bytes == 672_000_000 * 4
    # per-layer split is rounded to whole bytes
    assert bert32.total_activation_bytes_per_sample / MiB == pytest.approx(3149.39, abs=1e-3)
    assert len({(l.param_bytes, l.activation_bytes_per_sample) for l in bert32.layers}) == 1


def test_uniform_model_equals_bundled_bert(bert32):
    layer = bert32.layers[0]
    built = uniform_model(32, 672_000_000 * 4 // 32, round(3149.39 * MiB / 32),
                          layer.fwd_time_per_sample_ms)
    assert built == bert32


def test_swin_fixture_shape():
    m = load_model(data_path("models", "swin-like-heterogeneous.json"))
    assert len(m) == 32
    first, last = m.layers[0], m.layers[-1]
    assert first.activation_bytes_per_sample > last.activation_bytes_per_sample
    assert first.param_bytes < last.param_bytes


def test_single_zero_param_layer(tmp_path):
    p = write(tmp_path, {"dtype_bytes": 2, "layers": [
        {"param_bytes": 0, "activation_bytes_per_sample": 10, "fwd_time_per_sample_ms": 1.0}]})
    m = load_model(p)
    assert len(m) == 1 and m.layers[0].param_bytes == 0


def test_empty_layers_rejected(tmp_path):
    with pytest.raises(ValidationError, match="layers"):
        load_model(write(tmp_path, {"dtype_bytes": 4, "layers": []}))


@pytest.mark.parametrize("field", ["param_bytes", "activation_bytes_per_sample",
                                   "fwd_time_per_sample_ms"])
def test_negative_field_named(tmp_path, field):
    layer = {"param_bytes": 1, "activation_bytes_per_sample": 1, "fwd_time_per_sample_ms": 1.0}
    layer[field] = -1
    with pytest.raises(ValidationError, match=field):
        load_model(write(tmp_path, {"layers": [layer]}))


def test_missing_field_named(tmp_path):
    with pytest.raises(ValidationError, match="fwd_time_per_sample_ms"):
        load_model(write(tmp_path, {"layers": [{"param_bytes": 1, "activation_bytes_per_sample": 1}]}))


def test_malformed_json(tmp_path):
    with pytest.raises(ValidationError, match="malformed"):
        load_model(write(tmp_path, "{not json"))


def test_uniform_model_basic():
    m = uniform_model(4, 100, 200, 1.0)
    assert [l.id for l in m.layers] == [0, 1, 2, 3]
    assert {(l.param_bytes, l.activation_bytes_per_sample, l.fwd_time_per_sample_ms)
            for l in m.layers} == {(100, 200, 1.0)}
    assert len(uniform_model(1, 0, 0, 0.0)) == 1
    with pytest.raises(ValidationError):
        uniform_model(0, 1, 1, 1.0)


def test_ids_must_be_contiguous():
    with pytest.raises(ValidationError, match="id"):
        ModelSpec(layers=(LayerSpec(1, 0, 0, 0.0),))


layer_triples = st.tuples(st.integers(0, 10**10), st.integers(0, 10**10),
                          st.floats(0, 100, allow_nan=False))


@given(st.lists(layer_triples, min_size=1, max_size=12))
def test_round_trip_and_param_total(tmp_path_factory, triples):
    m = model_from_layers(triples)
    p = tmp_path_factory.mktemp("rt") / "m.json"
    save_model(m, p)
    assert load_model(p) == m
    assert m.total_param_bytes == sum(t[0] for t in triples)

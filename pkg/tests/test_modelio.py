import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from impact import modelio
from impact.compressor import FactoredLayer, ImpactConfig, reconstruction_basis, transform_coeff, weighted_cov
from impact.errors import DataError, ParseError, VersionError
from impact.pipeline import SweepRow, compress_model, profile_model
from impact.profiler import ProfiledLayer
from impact.toynet import init_model, make_dataset, predict, train


def two_layer_stats(rng):
    out = {}
    for name, d in (("fc1", 3), ("fc2", 2)):
        m = rng.standard_normal((d, d))
        out[name] = ProfiledLayer(d, 77, rng.standard_normal(d) * 1e-7, m @ m.T / 3,
                                  rng.uniform(0, 1, d), rng.uniform(0, 10, d))
    return out


def test_stats_round_trip_exact(tmp_path, rng):
    stats = two_layer_stats(rng)
    path = tmp_path / "s.json"
    modelio.write_stats(path, stats)
    back = modelio.read_stats(path)
    assert list(back) == list(stats)
    for name in stats:
        a, b = stats[name], back[name]
        assert (a.d, a.n) == (b.d, b.n)
        for key in ("mean", "cov", "grad_sq_mean", "fisher_row"):
            assert np.array_equal(getattr(a, key), getattr(b, key)), key


def test_stats_without_fisher(tmp_path):
    stats = {"fc1": ProfiledLayer(1, 4, [1.0], [[2.0]], [0.5], None)}
    modelio.write_stats(tmp_path / "s.json", stats)
    assert modelio.read_stats(tmp_path / "s.json")["fc1"].fisher_row is None


def test_stats_text_is_full_precision(tmp_path):
    x = 0.1 + 0.2
    modelio.write_stats(tmp_path / "s.json", {"l": ProfiledLayer(1, 2, [x], [[1.0]], [0.0])})
    text = (tmp_path / "s.json").read_text()
    assert "0.30000000000000004" in text


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=20))
def test_float_format_injective(values):
    for v in values:
        assert float(modelio.fmt_float(v)) == v


def test_non_finite_rejected_on_write(tmp_path):
    with pytest.raises(DataError):
        modelio.write_stats(tmp_path / "s.json", {"l": ProfiledLayer(1, 2, [np.nan], [[1.0]], [0.0])})
    assert not (tmp_path / "s.json").exists()


def _write_doc(path, doc):
    path.write_text(json.dumps(doc))
    return path


def minimal_stats_doc(**layer):
    entry = {"name": "only", "d": 1, "n": 10, "mean": [2.0], "cov": [[1.0]], "grad_sq_mean": [0.0]}
    entry.update(layer)
    return {"format": "impact-stats", "version": 1, "layers": [entry]}


def test_minimal_hand_written_file(tmp_path):
    prof = modelio.read_stats(_write_doc(tmp_path / "m.json", minimal_stats_doc()))["only"]
    a = transform_coeff(prof.grad_sq_mean, 1.0)
    assert np.array_equal(a, [1.0])
    sel = reconstruction_basis(weighted_cov(prof, a), ImpactConfig(eta=1.0))
    assert np.array_equal(sel.U, [[1.0]])


def test_cov_row_length_names_layer(tmp_path):
    doc = minimal_stats_doc(d=2, mean=[0.0, 1.0], grad_sq_mean=[0.0, 0.0], cov=[[1.0, 0.0], [0.0]])
    with pytest.raises(ParseError, match="only"):
        modelio.read_stats(_write_doc(tmp_path / "bad.json", doc))


def test_version_mismatch(tmp_path):
    doc = minimal_stats_doc()
    doc["version"] = 2
    with pytest.raises(VersionError):
        modelio.read_stats(_write_doc(tmp_path / "v.json", doc))


def test_non_finite_rejected_on_read(tmp_path):
    path = tmp_path / "nan.json"
    path.write_text(json.dumps(minimal_stats_doc()).replace("[2.0]", "[NaN]"))
    with pytest.raises(DataError):
        modelio.read_stats(path)


def test_asymmetric_cov_rejected(tmp_path):
    doc = minimal_stats_doc(d=2, mean=[0.0, 0.0], grad_sq_mean=[0.0, 0.0], cov=[[1.0, 0.5], [0.4, 1.0]])
    with pytest.raises(DataError):
        modelio.read_stats(_write_doc(tmp_path / "a.json", doc))


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "format": "impact-stats",\n  "version": 1,\n  "layers": [\n}')
    with pytest.raises(ParseError, match="line 5"):
        modelio.read_stats(path)


@pytest.mark.parametrize("field", ["mean", "cov", "grad_sq_mean", "name"])
def test_missing_field(tmp_path, field):
    doc = minimal_stats_doc()
    del doc["layers"][0][field]
    with pytest.raises(ParseError, match=field):
        modelio.read_stats(_write_doc(tmp_path / "f.json", doc))


def test_wrong_format_tag(tmp_path):
    doc = minimal_stats_doc()
    doc["format"] = "impact-model"
    with pytest.raises(ParseError):
        modelio.read_stats(_write_doc(tmp_path / "t.json", doc))


def test_dense_model_round_trip(tmp_path, rng):
    model = init_model((4, 5, 3), seed=3)
    for layer in model.layers:
        layer.b = rng.standard_normal(layer.b.shape)
    modelio.write_model(tmp_path / "m.json", model)
    back = modelio.read_model(tmp_path / "m.json")
    X = rng.standard_normal((10, 4))
    assert np.array_equal(predict(model, X), predict(back, X))
    assert back.names == model.names and back.loss == model.loss
    assert [l.activation for l in back.layers] == [l.activation for l in model.layers]


def test_factored_model_round_trip(tmp_path):
    data = make_dataset("hetero", 300, seed=1)
    model, _ = train(init_model(seed=1), data, epochs=3, lr=0.05, seed=1)
    compressed, _ = compress_model(model, profile_model(model, data), "impact", ImpactConfig(keep_ratio=60))
    modelio.write_model(tmp_path / "c.json", compressed)
    back = modelio.read_model(tmp_path / "c.json")
    for a, b in zip(compressed.layers, back.layers):
        assert type(a) is type(b)
        if isinstance(a, FactoredLayer):
            assert np.array_equal(a.W1, b.W1) and np.array_equal(a.W2, b.W2)
            assert np.array_equal(a.b_prime, b.b_prime)
            assert a.provenance == b.provenance
            assert a.activation == b.activation
    assert np.array_equal(predict(compressed, data.X), predict(back, data.X))


def test_model_chain_violation_names_both_layers(tmp_path):
    model = init_model((4, 5, 3), seed=0)
    modelio.write_model(tmp_path / "m.json", model)
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["layers"][1]["W"] = [[0.0] * 6] * 3
    with pytest.raises(ParseError, match="fc1.*fc2"):
        modelio.read_model(_write_doc(tmp_path / "bad.json", doc))


def test_model_unknown_kind(tmp_path):
    modelio.write_model(tmp_path / "m.json", init_model((2, 2, 2)))
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["layers"][0]["kind"] = "conv"
    with pytest.raises(ParseError, match="conv"):
        modelio.read_model(_write_doc(tmp_path / "k.json", doc))


def test_dataset_round_trip(tmp_path):
    data = make_dataset("lowrank", 20, seed=2)
    modelio.write_dataset(tmp_path / "d.json", data)
    back = modelio.read_dataset(tmp_path / "d.json")
    assert np.array_equal(back.X, data.X) and np.array_equal(back.T, data.T)
    assert (back.kind, back.seed) == ("lowrank", 2)


def row(method, k, **kw):
    base = dict(method=method, layer_scope="*", eta=0.5, keep_ratio=k, rank_per_layer={"fc1": 3, "fc2": 2},
                params_total=100, params_ratio=0.5, eval_loss=0.25, eval_metric=0.75,
                h_per_layer={"fc1": 0.1, "fc2": 0.2}, notes="")
    base.update(kw)
    return SweepRow(**base)


def test_single_row_report(tmp_path):
    modelio.write_report(tmp_path / "r.csv", [row("impact", 90)])
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == ",".join(modelio.REPORT_HEADER)
    assert len(lines) == 2
    assert lines[1].startswith("impact,*,0.5,90.0,fc1=3;fc2=2,100,0.5,0.25,0.75,fc1=0.10000000000000001;")


def test_report_order(tmp_path):
    rows = [row("svd", 50), row("impact", 50), row("svd", 90), row("impact", 90)]
    modelio.write_report(tmp_path / "r.csv", rows)
    back = modelio.read_report(tmp_path / "r.csv")
    assert [(r["method"], r["keep_ratio"]) for r in back] == \
        [("impact", "90.0"), ("impact", "50.0"), ("svd", "90.0"), ("svd", "50.0")]
    for r in back:
        for key in ("eta", "keep_ratio", "params_total", "params_ratio", "eval_loss", "eval_metric"):
            float(r[key])


def test_report_notes_quoted(tmp_path):
    modelio.write_report(tmp_path / "r.csv", [row("afm", 70, notes="a, b | c")])
    with open(tmp_path / "r.csv", newline="") as fh:
        assert list(csv.reader(fh))[1][-1] == "a, b | c"


def test_empty_report_rejected(tmp_path):
    with pytest.raises(DataError):
        modelio.write_report(tmp_path / "r.csv", [])


def test_report_write_error(tmp_path):
    with pytest.raises(OSError):
        modelio.write_report(tmp_path / "missing-dir" / "r.csv", [row("impact", 90)])


def test_diagnostic_rows_sum_to_d(tmp_path, rng):
    stats = two_layer_stats(rng)
    rows = modelio.write_diagnostic(tmp_path / "g.csv", stats)
    for name, prof in stats.items():
        vals = [v for n, _, v in rows if n == name]
        assert abs(sum(vals) - prof.d) <= 1e-9
        assert vals == sorted(vals, reverse=True)
    with open(tmp_path / "g.csv", newline="") as fh:
        parsed = list(csv.reader(fh))
    assert tuple(parsed[0]) == modelio.DIAGNOSTIC_HEADER
    assert [float(r[2]) for r in parsed[1:]] == [v for _, _, v in rows]


def test_atomic_write_leaves_no_temp(tmp_path, rng):
    modelio.write_stats(tmp_path / "s.json", two_layer_stats(rng))
    assert sorted(p.name for p in tmp_path.iterdir()) == ["s.json"]


def test_write_is_deterministic(tmp_path, rng):
    stats = two_layer_stats(rng)
    modelio.write_stats(tmp_path / "a.json", stats)
    modelio.write_stats(tmp_path / "b.json", stats)
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

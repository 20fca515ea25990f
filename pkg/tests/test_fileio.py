import io
import json
import math

import numpy as np
import pytest

from georope.attention import EncoderKind, GeoTransformer, ModelConfig
from georope.fileio import (
    FormatError,
    checkpoint_text,
    config_schema_text,
    format_geotokens_csv,
    load_checkpoint,
    load_config,
    load_geotokens,
    parse_config,
    parse_geojson_points,
    read_geotokens_csv,
    save_checkpoint,
    write_geotokens_csv,
)
from georope.geo import sample_uniform_sphere, Geotoken
from georope.tasks import OptimizerKind


def read(text):
    return read_geotokens_csv(io.StringIO(text))


# -- CSV ------------------------------------------------------------------------------------


def test_header_only_is_empty():
    assert read("id,lat_deg,lon_deg,f0,f1\n") == []


def test_single_row_origin():
    (t,) = read("id,lat_deg,lon_deg,f0,f1,f2\ntok1,0,0,1.0,0.0,0.0\n")
    assert t.id == "tok1" and t.position.lat == 0.0 and t.position.lon == 0.0
    assert t.dim == 3 and np.array_equal(t.features, [1.0, 0.0, 0.0])


def test_bad_arity_names_line():
    with pytest.raises(FormatError, match="line 3"):
        read("id,lat_deg,lon_deg,f0\na,0,0,1\nb,0,0\n")


def test_bad_latitude_names_id():
    with pytest.raises(FormatError, match="north-pole-ish"):
        read("id,lat_deg,lon_deg,f0\nnorth-pole-ish,95,0,1\n")


@pytest.mark.parametrize(
    "text",
    ["", "name,lat,lon,f0\n", "id,lat_deg,lon_deg\n", "id,lat_deg,lon_deg,f1\n", "id,lat_deg,lon_deg,f0\na,x,0,1\n"],
)
def test_malformed_csv(text):
    with pytest.raises(FormatError):
        read(text)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    toks = [Geotoken(f"id{i}", p, rng.standard_normal(4)) for i, p in enumerate(sample_uniform_sphere(50, seed=1))]
    path = tmp_path / "t.csv"
    write_geotokens_csv(path, toks)
    back = load_geotokens(path)
    assert [t.id for t in back] == [t.id for t in toks]
    for a, b in zip(toks, back):
        assert abs(a.position.lat - b.position.lat) < 1e-12
        assert abs(math.remainder(a.position.lon - b.position.lon, 2 * math.pi)) < 1e-12
        assert np.array_equal(a.features, b.features)


def test_csv_quoted_ids_survive():
    toks = read('id,lat_deg,lon_deg,f0\n"a,b",1,2,3\n')
    assert toks[0].id == "a,b"
    assert read(format_geotokens_csv(toks))[0].id == "a,b"


def test_no_partial_file_on_success(tmp_path):
    path = tmp_path / "out.csv"
    write_geotokens_csv(path, read("id,lat_deg,lon_deg,f0\na,1,2,3\n"))
    assert sorted(p.name for p in tmp_path.iterdir()) == ["out.csv"]


# -- GeoJSON --------------------------------------------------------------------------------


def fc(*features):
    return {"type": "FeatureCollection", "features": list(features)}


def point(lon, lat, feats=(1.0,), **extra):
    return {"type": "Feature", "geometry": {"type": "Point", "coordinates": [lon, lat]}, "properties": {"features": list(feats)}, **extra}


def test_empty_collection():
    assert parse_geojson_points(fc()) == []


def test_point_axis_order():
    (t,) = parse_geojson_points(fc(point(90, 0)))
    assert t.position.lon == pytest.approx(math.pi / 2, abs=1e-15) and t.position.lat == 0.0


def test_polygon_rejected():
    poly = {"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 0]]]}, "properties": {"features": [1.0]}}
    with pytest.raises(FormatError, match="Point required"):
        parse_geojson_points(fc(point(0, 0), poly))


def test_missing_features_names_index():
    bad = point(0, 0)
    del bad["properties"]["features"]
    with pytest.raises(FormatError, match="feature 1: missing 'features'"):
        parse_geojson_points(fc(point(0, 0), bad))


def test_geojson_other_errors():
    with pytest.raises(FormatError):
        parse_geojson_points({"type": "Feature"})
    with pytest.raises(FormatError, match="latitude"):
        parse_geojson_points(fc(point(0, 100)))
    with pytest.raises(FormatError):
        parse_geojson_points(fc(point(0, 0, feats=(1.0, 2.0)), point(0, 0)))


def test_geojson_file_and_ids(tmp_path):
    path = tmp_path / "pts.geojson"
    path.write_text(json.dumps(fc(point(10, 20, (1, 2), id="x"), point(-30, -40, (3, 4)))))
    a, b = load_geotokens(path)
    assert a.id == "x" and b.id == "feature-1"
    assert a.position.lat_deg == pytest.approx(20) and b.position.lon_deg == pytest.approx(-30)
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(FormatError, match="invalid JSON"):
        load_geotokens(bad)


# -- checkpoints ------------------------------------------------------------------------------


@pytest.mark.parametrize("kind", list(EncoderKind))
def test_checkpoint_round_trip_bit_exact(tmp_path, kind):
    model = GeoTransformer(ModelConfig(dim=6, heads=2, layers=2, ff_width=3, encoder=kind, seed=4))
    path = tmp_path / "m.json"
    save_checkpoint(path, model)
    back = load_checkpoint(path)
    assert back.config == model.config
    for k, v in model.params.items():
        assert np.array_equal(back.params[k], v)
    assert checkpoint_text(back) == path.read_text()


def test_checkpoint_rejects_foreign_documents(tmp_path):
    path = tmp_path / "x.json"
    doc = json.loads(checkpoint_text(GeoTransformer(ModelConfig(dim=3))))
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        load_checkpoint(path)
    path.write_text('{"format": "something-else"}')
    with pytest.raises(FormatError):
        load_checkpoint(path)


# -- run configuration ---------------------------------------------------------------------------


def test_config_defaults_and_overrides():
    cfg = parse_config(
        "[georope]\nformat_version = 1\n[model]\ndim = 6\nencoder = rope\npad = yes\n"
        "[train]\noptimizer = sgd\nlr = 0.2\n[task]\nseeds = 1, 2\n"
    )
    assert cfg.model.dim == 6 and cfg.model.encoder is EncoderKind.ROPE and cfg.model.pad is True
    assert cfg.train.optimizer is OptimizerKind.SGD and cfg.train.lr == 0.2 and cfg.train.steps == 400
    assert cfg.task.seeds == (1, 2) and cfg.task.n_tokens == 16


@pytest.mark.parametrize(
    "text,msg",
    [
        ("[model]\ndim = 6\n", "format_version"),
        ("[georope]\nformat_version = 2\n", "format_version"),
        ("[georope]\nformat_version = 1\n[model]\ndims = 6\n", "unknown key"),
        ("[georope]\nformat_version = 1\n[extra]\na = 1\n", "unknown section"),
        ("[georope]\nformat_version = 1\n[model]\ndim = six\n", "dim"),
        ("[georope]\nformat_version = 1\n[model]\nencoder = cnn\n", "encoder"),
        ("[georope]\nformat_version = 1\n[model]\ndim = 7\nencoder = spherical\n", "multiple of 3"),
        ("[georope]\nformat_version = 1\n[train]\nlr = -1\n", "learning rate"),
        ("[georope]\nformat_version = 1\n[task]\nkind = regression\n", "kind"),
    ],
)
def test_config_errors(text, msg):
    with pytest.raises(FormatError, match=msg):
        parse_config(text)


def test_schema_parses_as_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(config_schema_text())
    cfg = load_config(path)
    assert cfg.model == ModelConfig() and cfg.task.seeds == (0, 1, 2, 3, 4)

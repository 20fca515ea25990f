"""Geotoken files, checkpoints and run configuration files.

Geotoken CSV layout (UTF-8, header required)::

    id,lat_deg,lon_deg,f0,f1,...,f{d-1}

GeoJSON input is a FeatureCollection of Point features with coordinates in
``[lon, lat]`` order and the feature vector under ``properties.features``.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .attention import GeoTransformer, ModelConfig
from .geo import GeoError, Geotoken, make_position
from .tasks import TrainConfig


class FormatError(ValueError):
    """Malformed input file."""


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- geotoken CSV ------------------------------------------------------------


def _parse_float(text: str, what: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"line {line}: {what} is not a number: {text!r}") from None


def read_geotokens_csv(fh: Iterable[str]) -> list[Geotoken]:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("line 1: missing header row") from None
    header = [h.strip() for h in header]
    if header[:3] != ["id", "lat_deg", "lon_deg"]:
        raise FormatError(f"line 1: header must start with id,lat_deg,lon_deg, got {header[:3]}")
    d = len(header) - 3
    if d < 1 or header[3:] != [f"f{i}" for i in range(d)]:
        raise FormatError("line 1: feature columns must be f0..f{d-1} in order")
    tokens = []
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != d + 3:
            raise FormatError(f"line {line}: expected {d + 3} fields, got {len(row)}")
        tid = row[0]
        lat = _parse_float(row[1], "lat_deg", line)
        lon = _parse_float(row[2], "lon_deg", line)
        feats = [_parse_float(x, f"f{i}", line) for i, x in enumerate(row[3:])]
        try:
            pos = make_position(lat, lon)
            tokens.append(Geotoken(tid, pos, np.array(feats)))
        except GeoError as exc:
            raise FormatError(f"line {line}: token {tid!r}: {exc}") from None
    return tokens


def load_geotokens_csv(path) -> list[Geotoken]:
    with open(path, encoding="utf-8", newline="") as fh:
        return read_geotokens_csv(fh)


def format_geotokens_csv(tokens: Sequence[Geotoken], features: Sequence[np.ndarray] | None = None) -> str:
    """CSV text for ``tokens``; ``features`` optionally replaces each token's vector."""
    if features is None:
        features = [t.features for t in tokens]
    d = len(features[0]) if len(features) else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "lat_deg", "lon_deg"] + [f"f{i}" for i in range(d)])
    for t, f in zip(tokens, features):
        w.writerow([t.id, repr(t.position.lat_deg), repr(t.position.lon_deg)] + [repr(float(x)) for x in f])
    return buf.getvalue()


def write_geotokens_csv(path, tokens: Sequence[Geotoken], features=None) -> None:
    atomic_write_text(path, format_geotokens_csv(tokens, features))


# -- GeoJSON ---------------------------------------------------------------------


def parse_geojson_points(doc) -> list[Geotoken]:
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise FormatError("GeoJSON root must be a FeatureCollection")
    feats = doc.get("features")
    if not isinstance(feats, list):
        raise FormatError("FeatureCollection has no 'features' list")
    tokens = []
    for i, feat in enumerate(feats):
        geom = (feat or {}).get("geometry") or {}
        if geom.get("type") != "Point":
            raise FormatError(f"feature {i}: Point required, got geometry type {geom.get('type')!r}")
        coords = geom.get("coordinates")
        if not isinstance(coords, list) or len(coords) < 2:
            raise FormatError(f"feature {i}: Point coordinates must be [lon, lat]")
        props = feat.get("properties") or {}
        if "features" not in props:
            raise FormatError(f"feature {i}: missing 'features' property")
        vec = props["features"]
        if not isinstance(vec, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in vec):
            raise FormatError(f"feature {i}: 'features' must be an array of numbers")
        tid = feat.get("id", props.get("id", f"feature-{i}"))
        try:
            pos = make_position(float(coords[1]), float(coords[0]))
            tokens.append(Geotoken(str(tid), pos, np.array(vec, dtype=np.float64)))
        except (GeoError, TypeError, ValueError) as exc:
            raise FormatError(f"feature {i}: {exc}") from None
    if tokens:
        d = tokens[0].dim
        for i, t in enumerate(tokens):
            if t.dim != d:
                raise FormatError(f"feature {i}: {t.dim} features, expected {d}")
    return tokens


def load_geojson_points(path) -> list[Geotoken]:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc}") from None
    return parse_geojson_points(doc)


def load_geotokens(path) -> list[Geotoken]:
    """Dispatch on extension: ``.geojson``/``.json`` or CSV otherwise."""
    if str(path).lower().endswith((".geojson", ".json")):
        return load_geojson_points(path)
    return load_geotokens_csv(path)


# -- checkpoints -------------------------------------------------------------------

CHECKPOINT_FORMAT = "georope-checkpoint"
CHECKPOINT_VERSION = 1


def _enum_safe(d: dict) -> dict:
    return {k: (v.value if hasattr(v, "value") else v) for k, v in d.items()}


def checkpoint_text(model: GeoTransformer) -> str:
    # repr-based float formatting in json round-trips doubles exactly
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": _enum_safe(asdict(model.config)),
        "encoder": model.config.encoder.value,
        "seed": model.config.seed,
        "params": {
            name: {"shape": list(p.shape), "data": [float(x) for x in p.reshape(-1)]}
            for name, p in model.params.items()
        },
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def save_checkpoint(path, model: GeoTransformer) -> None:
    atomic_write_text(path, checkpoint_text(model))


def load_checkpoint(path) -> GeoTransformer:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"checkpoint is not valid JSON: {exc}") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"not a checkpoint file (format={doc.get('format')!r})")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {doc.get('version')!r}")
    cfg = ModelConfig(**doc["config"])
    params = {}
    for name, entry in doc["params"].items():
        params[name] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return GeoTransformer(cfg, params)


# -- run configuration files -----------------------------------------------------------

CONFIG_VERSION = 1


@dataclass(frozen=True)
class TaskConfig:
    kind: str = "nearest"  # nearest | proximity
    n_tokens: int = 16
    n_train: int = 2000
    n_eval: int = 500
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        if self.kind not in ("nearest", "proximity"):
            raise FormatError(f"task.kind must be 'nearest' or 'proximity', got {self.kind!r}")
        if self.n_tokens < 2 or self.n_train < 1 or self.n_eval < 1:
            raise FormatError("task sizes must be n_tokens >= 2, n_train >= 1, n_eval >= 1")
        if not self.seeds:
            raise FormatError("task.seeds must list at least one seed")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    task: TaskConfig


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "task": TaskConfig}

_HELP = {
    ("model", "dim"): "feature / model dimension d",
    ("model", "heads"): "attention heads, must divide dim",
    ("model", "layers"): "number of attention layers",
    ("model", "ff_width"): "tanh feed-forward width per layer, 0 disables it",
    ("model", "seed"): "weight initialisation seed",
    ("model", "encoder"): "none | sinusoidal | rope | spherical",
    ("model", "mode"): "spherical angle mode: uniform | multifreq | as-printed",
    ("model", "base"): "frequency base for multifreq / rope / sinusoidal",
    ("model", "pad"): "true to zero-pad dims that are not a multiple of 3",
    ("model", "rope_variant"): "printed | canonical rope exponent",
    ("train", "lr"): "learning rate (>= 0)",
    ("train", "steps"): "optimisation steps",
    ("train", "batch_size"): "instances per minibatch",
    ("train", "seed"): "data and minibatch-order seed",
    ("train", "optimizer"): "sgd | adam",
    ("train", "beta1"): "adam first-moment decay",
    ("train", "beta2"): "adam second-moment decay",
    ("train", "eps"): "adam epsilon",
    ("train", "tau"): "proximity target temperature in metres",
    ("task", "kind"): "nearest | proximity",
    ("task", "n_tokens"): "geotokens per instance",
    ("task", "n_train"): "training instances",
    ("task", "n_eval"): "held-out instances",
    ("task", "seeds"): "comma-separated seeds for eval --ablation",
}


def _coerce(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if hasattr(default, "value"):  # enums take their string value
            return type(default)(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
        return raw
    except ValueError:
        raise FormatError(f"{where}: cannot read {raw!r} as {type(default).__name__}") from None


def config_schema_text() -> str:
    lines = [
        "# georope run configuration (INI syntax), all keys optional",
        "[georope]",
        f"format_version = {CONFIG_VERSION}    ; required",
    ]
    for section, cls in _SECTIONS.items():
        lines.append("")
        lines.append(f"[{section}]")
        default = cls()
        for f in fields(cls):
            val = getattr(default, f.name)
            if hasattr(val, "value"):
                val = val.value
            elif isinstance(val, tuple):
                val = ",".join(str(x) for x in val)
            elif isinstance(val, bool):
                val = str(val).lower()
            lines.append(f"{f.name} = {val}    ; {_HELP[(section, f.name)]}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise FormatError(f"{source}: {exc}") from None
    if not cp.has_section("georope") or "format_version" not in cp["georope"]:
        raise FormatError(f"{source}: missing [georope] format_version")
    if cp["georope"]["format_version"].strip() != str(CONFIG_VERSION):
        raise FormatError(f"{source}: unsupported format_version {cp['georope']['format_version']!r}")
    for extra in set(cp["georope"]) - {"format_version"}:
        raise FormatError(f"{source}: unknown key [georope] {extra}")
    unknown = set(cp.sections()) - set(_SECTIONS) - {"georope"}
    if unknown:
        raise FormatError(f"{source}: unknown section(s) {sorted(unknown)}")
    built = {}
    for section, cls in _SECTIONS.items():
        default = cls()
        names = {f.name for f in fields(cls)}
        kwargs = {}
        if cp.has_section(section):
            for key, raw in cp[section].items():
                if key not in names:
                    raise FormatError(f"{source}: unknown key [{section}] {key}")
                kwargs[key] = _coerce(raw, getattr(default, key), f"{source}: [{section}] {key}")
        try:
            built[section] = cls(**kwargs)
        except ValueError as exc:
            raise FormatError(f"{source}: [{section}] {exc}") from None
    return RunConfig(built["model"], built["train"], built["task"])


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))

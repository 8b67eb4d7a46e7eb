"""Experiment configuration files (JSON) with strict validation.

Schema (all keys optional except ``datasets``)::

    {
      "datasets": [
        {"id": "diabetes", "path": "data/diabetes.csv", "label_column": "class", "header": true},
        {"id": "synthetic", "synthetic": {"rows": 500, "features": 10, "factors": 3, "noise": 0.3, "seed": 0}}
      ],
      "methods": ["median", "knn", "deepifsac",
                  {"name": "no-cutmix", "type": "deepifsac", "model": {"p_cutmix": 0.0}}],
      "kinds": ["MCAR", "MAR", "MNAR"],
      "rates": [0.1, 0.3, 0.5, 0.7, 0.9],
      "seed": 0,
      "model": {"epochs": 200},
      "knn_k": 5,
      "missingness": {"driver_fraction": 0.1, "direction": "high", "steepness": 1.0},
      "output_dir": "runs/bench",
      "workers": 1
    }

Built-in method names: ``median``, ``knn``, ``deepifsac`` (joint),
``between-feature``, ``between-sample``, ``no-cutmix``, ``no-contrastive``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import KnnConfig
from .evaluation import DeepIFSACMethod, KnnMethod, MedianMethod
from .missingness import KINDS
from .model import ModelConfig

PRESETS = {
    "deepifsac": {},
    "between-feature": {"mode": "feature"},
    "between-sample": {"mode": "sample"},
    "no-cutmix": {"p_cutmix": 0.0},
    "no-contrastive": {"lambda_contrastive": 0.0},
}

_TOP_KEYS = {"datasets", "methods", "kinds", "rates", "seed", "model", "knn_k", "missingness",
             "output_dir", "workers"}
_DATASET_KEYS = {"id", "path", "label_column", "header", "synthetic"}
_SYNTH_KEYS = {"rows", "features", "factors", "noise", "seed"}
_METHOD_KEYS = {"name", "type", "model", "k"}
_MISSING_KEYS = {"driver_fraction", "direction", "steepness"}
_MODEL_KEYS = set(ModelConfig.__dataclass_fields__)


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSpec:
    id: str
    path: str | None = None
    label_column: str | int | None = None
    header: bool | None = None
    synthetic: dict | None = None


@dataclass
class ExperimentConfig:
    datasets: list[DatasetSpec]
    methods: list = field(default_factory=lambda: ["median", "knn", "deepifsac"])
    kinds: list[str] = field(default_factory=lambda: ["MCAR"])
    rates: list[float] = field(default_factory=lambda: [0.3])
    seed: int = 0
    model: dict = field(default_factory=dict)
    knn_k: int = 5
    missingness: dict = field(default_factory=dict)
    output_dir: str = "runs/bench"
    workers: int = 1

    def canonical(self) -> dict:
        return {
            "datasets": [{k: v for k, v in vars(d).items() if v is not None} for d in self.datasets],
            "methods": self.methods, "kinds": self.kinds, "rates": self.rates, "seed": self.seed,
            "model": self.model, "knn_k": self.knn_k, "missingness": self.missingness,
            "output_dir": self.output_dir, "workers": self.workers,
        }

    def digest(self) -> str:
        blob = json.dumps({k: v for k, v in self.canonical().items() if k not in ("output_dir", "workers")},
                          sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def model_config(self, overrides: dict | None = None) -> ModelConfig:
        values = {"seed": self.seed, **self.model, **(overrides or {})}
        return ModelConfig.from_dict(values)

    def build_methods(self) -> list:
        out = []
        for entry in self.methods:
            if isinstance(entry, str):
                entry = {"name": entry}
            name = entry["name"]
            kind = entry.get("type", "deepifsac" if name in PRESETS else name)
            if kind == "median":
                out.append(MedianMethod(name))
            elif kind == "knn":
                out.append(KnnMethod(KnnConfig(entry.get("k", self.knn_k)), name))
            else:
                overrides = {**PRESETS.get(name, {}), **entry.get("model", {})}
                out.append(DeepIFSACMethod(self.model_config(overrides), name))
        return out


def _fail(where: str, msg: str):
    raise ConfigError(f"{where}: {msg}")


def _check_keys(where: str, obj, allowed: set) -> None:
    if not isinstance(obj, dict):
        _fail(where, f"expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        _fail(where, f"unknown key(s) {unknown}; allowed: {sorted(allowed)}")


def _number(where, value, lo=None, hi=None, integer=False, open_interval=False):
    kinds = (int,) if integer else (int, float)
    if isinstance(value, bool) or not isinstance(value, kinds):
        _fail(where, f"expected {'an integer' if integer else 'a number'}, got {value!r}")
    if open_interval and not (lo < value < hi):
        _fail(where, f"must lie strictly between {lo} and {hi}, got {value}")
    if not open_interval and ((lo is not None and value < lo) or (hi is not None and value > hi)):
        _fail(where, f"must lie in [{lo}, {hi}], got {value}")
    return value


def validate(raw: dict, source: str = "config") -> ExperimentConfig:
    _check_keys(source, raw, _TOP_KEYS)
    if "datasets" not in raw or not isinstance(raw["datasets"], list) or not raw["datasets"]:
        _fail(f"{source}.datasets", "a non-empty list of datasets is required")
    datasets = []
    for i, ds in enumerate(raw["datasets"]):
        where = f"{source}.datasets[{i}]"
        _check_keys(where, ds, _DATASET_KEYS)
        if "id" not in ds or not isinstance(ds["id"], str) or not ds["id"]:
            _fail(f"{where}.id", "a non-empty string id is required")
        if ("path" in ds) == ("synthetic" in ds):
            _fail(where, "give exactly one of 'path' or 'synthetic'")
        if "synthetic" in ds:
            _check_keys(f"{where}.synthetic", ds["synthetic"], _SYNTH_KEYS)
            for key in ("rows", "features", "factors", "seed"):
                if key in ds["synthetic"]:
                    _number(f"{where}.synthetic.{key}", ds["synthetic"][key], 0, None, integer=True)
        datasets.append(DatasetSpec(**ds))
    ids = [d.id for d in datasets]
    if len(set(ids)) != len(ids):
        _fail(f"{source}.datasets", f"dataset ids must be unique, got {ids}")

    cfg = ExperimentConfig(datasets=datasets)
    if "methods" in raw:
        if not isinstance(raw["methods"], list) or not raw["methods"]:
            _fail(f"{source}.methods", "expected a non-empty list")
        for i, m in enumerate(raw["methods"]):
            where = f"{source}.methods[{i}]"
            if isinstance(m, str):
                if m not in ("median", "knn") and m not in PRESETS:
                    _fail(where, f"unknown method {m!r}; built-ins: {['median', 'knn', *PRESETS]}")
                continue
            _check_keys(where, m, _METHOD_KEYS)
            if "name" not in m:
                _fail(f"{where}.name", "required")
            if m.get("type", "deepifsac") not in ("median", "knn", "deepifsac"):
                _fail(f"{where}.type", f"unknown method type {m.get('type')!r}")
            if "model" in m:
                _check_keys(f"{where}.model", m["model"], _MODEL_KEYS)
        cfg.methods = raw["methods"]
        names = [m if isinstance(m, str) else m["name"] for m in cfg.methods]
        if len(set(names)) != len(names):
            _fail(f"{source}.methods", f"method names must be unique, got {names}")
    if "kinds" in raw:
        kinds = raw["kinds"]
        if not isinstance(kinds, list) or not kinds or any(not isinstance(k, str) or k.upper() not in KINDS
                                                           for k in kinds):
            _fail(f"{source}.kinds", f"expected a non-empty list drawn from {list(KINDS)}")
        cfg.kinds = [k.upper() for k in kinds]
    if "rates" in raw:
        if not isinstance(raw["rates"], list) or not raw["rates"]:
            _fail(f"{source}.rates", "expected a non-empty list")
        cfg.rates = [_number(f"{source}.rates[{i}]", r, 0, 1, open_interval=True) for i, r in enumerate(raw["rates"])]
    if "seed" in raw:
        cfg.seed = _number(f"{source}.seed", raw["seed"], 0, None, integer=True)
    if "model" in raw:
        _check_keys(f"{source}.model", raw["model"], _MODEL_KEYS)
        cfg.model = dict(raw["model"])
    if "knn_k" in raw:
        cfg.knn_k = _number(f"{source}.knn_k", raw["knn_k"], 1, None, integer=True)
    if "missingness" in raw:
        _check_keys(f"{source}.missingness", raw["missingness"], _MISSING_KEYS)
        cfg.missingness = dict(raw["missingness"])
    if "output_dir" in raw:
        if not isinstance(raw["output_dir"], str):
            _fail(f"{source}.output_dir", "expected a string path")
        cfg.output_dir = raw["output_dir"]
    if "workers" in raw:
        cfg.workers = _number(f"{source}.workers", raw["workers"], 1, None, integer=True)
    try:
        cfg.model_config()
        cfg.build_methods()
    except (ValueError, TypeError) as exc:
        _fail(f"{source}.model", str(exc))
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return validate(raw, str(path))

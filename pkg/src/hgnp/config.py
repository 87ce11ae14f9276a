"""INI-style run configuration with a small layer DSL.

Example::

    [model]
    layers = dense 20 128; relu; dense 128 64; relu; dense 64 10

    [train]
    lr = 0.01
    target_sparsity = 0.5

    [data]
    source = synthetic
    classes = 10
    dim = 20
    samples = 3000
    separation = 4.5

    [output]
    dir = runs/demo

Layer syntax: ``dense IN OUT [group=NAME]``,
``conv IN OUT KH KW [same|valid] [pool] [group=NAME]``, ``relu``, ``flatten``,
``residual SOURCE_INDEX``.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import Dataset, load_csv, load_idx, standardize_channels, synth_gaussian_blobs, train_val_split
from .network import LayerSpec, conv2d, dense, flatten, relu, residual_add
from .trainer import ConfigError, RunConfig

SECTIONS = ("model", "train", "data", "output")
MODEL_KEYS = ("layers", "input_shape")
DATA_KEYS = {
    "synthetic": ("source", "classes", "dim", "samples", "separation", "seed", "val_fraction", "standardize"),
    "idx": ("source", "train_images", "train_labels", "val_images", "val_labels", "classes", "standardize"),
    "csv": ("source", "train_csv", "val_csv", "features", "classes", "standardize"),
}
DATA_DEFAULTS = {"seed": "0", "val_fraction": "0.25", "standardize": "false"}


@dataclass
class ConfigFile:
    layers: list[LayerSpec]
    input_shape: tuple[int, ...] | None
    train: RunConfig
    data: dict[str, str]
    output: str
    layer_text: str = ""
    base_dir: Path = field(default_factory=Path)


def parse_layers(text: str) -> list[LayerSpec]:
    specs = []
    for n, item in enumerate(t.strip() for t in text.split(";")):
        if not item:
            continue
        words = item.split()
        kind, args = words[0].lower(), words[1:]
        opts = [a for a in args if not a.lstrip("-").isdigit()]
        nums = [int(a) for a in args if a.lstrip("-").isdigit()]
        group = None
        for o in opts:
            if o.startswith("group="):
                group = o.split("=", 1)[1]
        try:
            if kind == "dense" and len(nums) == 2:
                specs.append(dense(nums[0], nums[1], group=group))
            elif kind == "conv" and len(nums) == 4:
                pad = "valid" if "valid" in opts else "same"
                specs.append(conv2d(nums[0], nums[1], (nums[2], nums[3]), pad, "pool" in opts, group))
            elif kind == "relu" and not args:
                specs.append(relu())
            elif kind == "flatten" and not args:
                specs.append(flatten())
            elif kind == "residual" and len(nums) == 1:
                specs.append(residual_add(nums[0]))
            else:
                raise ValueError
        except ValueError:
            raise ConfigError("layers", f"cannot parse layer {n}: {item!r}") from None
        known = {"same", "valid", "pool"}
        bad = [o for o in opts if o not in known and not o.startswith("group=")]
        if bad:
            raise ConfigError("layers", f"unknown option {bad[0]!r} in layer {n}")
    if not specs:
        raise ConfigError("layers", "no layers given")
    return specs


def _coerce(name: str, typ, raw: str):
    raw = raw.strip()
    try:
        if name == "lr_decay_epochs":
            return tuple(int(t) for t in raw.replace(",", " ").split())
        if typ in ("bool", bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(name, f"invalid value {raw!r}") from None


def parse_config(text: str, base_dir: Path | None = None) -> ConfigFile:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(sec, "unknown section")
    model = cp["model"] if cp.has_section("model") else {}
    for k in model:
        if k not in MODEL_KEYS:
            raise ConfigError(k, "unknown key in [model]")
    if "layers" not in model:
        raise ConfigError("layers", "missing from [model]")
    layers = parse_layers(model["layers"])
    input_shape = None
    if "input_shape" in model:
        try:
            input_shape = tuple(int(t) for t in model["input_shape"].replace(",", " ").split())
        except ValueError:
            raise ConfigError("input_shape", "expected integers") from None

    types = {f.name: f.type for f in fields(RunConfig)}
    kwargs = {}
    if cp.has_section("train"):
        for k, v in cp["train"].items():
            if k not in types:
                raise ConfigError(k, "unknown key in [train]")
            kwargs[k] = _coerce(k, types[k], v)
    run = RunConfig(**kwargs).validate()

    data = dict(cp["data"]) if cp.has_section("data") else {}
    source = data.get("source")
    if source not in DATA_KEYS:
        raise ConfigError("source", f"[data] source must be one of {tuple(DATA_KEYS)}")
    for k in data:
        if k not in DATA_KEYS[source]:
            raise ConfigError(k, f"unknown key in [data] for source {source}")
    data = {**{k: v for k, v in DATA_DEFAULTS.items() if k in DATA_KEYS[source]}, **data}

    out = cp["output"] if cp.has_section("output") else {}
    for k in out:
        if k != "dir":
            raise ConfigError(k, "unknown key in [output]")
    text_layers = "; ".join(t.strip() for t in model["layers"].split(";") if t.strip())
    return ConfigFile(layers, input_shape, run, data, out.get("dir", "run"), text_layers, base_dir or Path.cwd())


def load_config(path: str | Path) -> ConfigFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)


def dump_config(cfg: ConfigFile) -> str:
    """Canonical text of the effective configuration (every train key spelled out)."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["model"] = {"layers": cfg.layer_text}
    if cfg.input_shape is not None:
        cp["model"]["input_shape"] = " ".join(str(d) for d in cfg.input_shape)
    train = {}
    for f in fields(RunConfig):
        v = getattr(cfg.train, f.name)
        if f.name == "lr_decay_epochs":
            v = " ".join(str(e) for e in v)
        elif isinstance(v, float):
            v = repr(v)
        train[f.name] = str(v)
    cp["train"] = train
    cp["data"] = cfg.data
    cp["output"] = {"dir": cfg.output}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _path(cfg: ConfigFile, key: str) -> Path:
    if key not in cfg.data:
        raise ConfigError(key, "missing from [data]")
    p = Path(cfg.data[key])
    if not p.is_absolute():
        p = cfg.base_dir / p
    if not p.exists():
        raise ConfigError(key, f"dataset path {p} does not exist")
    return p


def _int(cfg: ConfigFile, key: str) -> int:
    if key not in cfg.data:
        raise ConfigError(key, "missing from [data]")
    return _coerce(key, int, cfg.data[key])


def load_data(cfg: ConfigFile) -> tuple[Dataset, Dataset]:
    """Train and validation splits described by the [data] section."""
    d = cfg.data
    src = d["source"]
    try:
        if src == "synthetic":
            ds = synth_gaussian_blobs(
                _int(cfg, "classes"), _int(cfg, "dim"), _int(cfg, "samples"),
                _coerce("separation", float, d.get("separation", "")), _int(cfg, "seed"),
            )
            train, val = train_val_split(ds, _coerce("val_fraction", float, d["val_fraction"]), _int(cfg, "seed"))
        elif src == "idx":
            classes = _int(cfg, "classes") if "classes" in d else None
            train = load_idx(_path(cfg, "train_images"), _path(cfg, "train_labels"), classes, "train")
            val = load_idx(_path(cfg, "val_images"), _path(cfg, "val_labels"), train.class_count, "validation")
        else:
            classes = _int(cfg, "classes") if "classes" in d else None
            train = load_csv(_path(cfg, "train_csv"), _int(cfg, "features"), classes, "train")
            val = load_csv(_path(cfg, "val_csv"), _int(cfg, "features"), train.class_count, "validation")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("data", str(exc)) from None
    if _coerce("standardize", bool, d.get("standardize", "false")):
        train, val = standardize_channels(train, val)
    return train, val

"""Flat key=value run configuration files.

Format: one ``key = value`` per line; blank lines and ``#`` comments are
skipped; keys may not repeat. Values stay strings until a typed accessor
coerces them, so parse -> format -> parse is lossless.
"""

from .errors import ConfigurationError, ParseError
from .network import NetworkConfig
from .training import TrainConfig

NETWORK_KEYS = ("stacks", "width", "keypoints", "in_channels", "input_size",
                "gate_mode", "gate_fixed_value", "aggregation", "dtype")
TRAIN_KEYS = ("epochs", "batch_size", "lr_initial", "lr_final", "lr_drop_epochs",
              "weight_decay", "rmsprop_rho", "rmsprop_eps", "augment",
              "rotation_max_deg", "scale_min", "scale_max", "flip_prob",
              "jitter_strength", "sigma", "seed")
DATA_KEYS = ("train_data", "val_data")
GENERATE_KEYS = ("num_samples", "image_size", "keypoints", "noise", "seed")

RUN_KEYS = frozenset(NETWORK_KEYS + TRAIN_KEYS + DATA_KEYS)


def parse_config_text(text, source="<config>"):
    mapping = {}
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{line_no}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ParseError(f"{source}:{line_no}: empty key")
        if key in mapping:
            raise ParseError(f"{source}:{line_no}: duplicate key {key!r}")
        mapping[key] = value
    return mapping


def format_config(mapping) -> str:
    return "".join(f"{key} = {value}\n" for key, value in mapping.items())


def load_config(path):
    try:
        with open(path) as fh:
            return parse_config_text(fh.read(), source=str(path))
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc


def save_config(path, mapping):
    with open(path, "w") as fh:
        fh.write(format_config(mapping))


def check_known_keys(mapping, allowed, source="<config>"):
    unknown = [key for key in mapping if key not in allowed]
    if unknown:
        raise ConfigurationError(f"{source}: unknown keys: {', '.join(sorted(unknown))}")


def _coerce(mapping, key, kind, default, source):
    if key not in mapping:
        if default is _REQUIRED:
            raise ConfigurationError(f"{source}: missing required key {key!r}")
        return default
    raw = mapping[key]
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{source}: bad value for {key!r}: {raw!r}") from exc


class _Required:
    pass


_REQUIRED = _Required()


def _bool(raw):
    lowered = raw.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(raw)


def _int_tuple(raw):
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(int(part.strip()) for part in raw.split(","))


def as_int(mapping, key, default=_REQUIRED, source="<config>"):
    return _coerce(mapping, key, int, default, source)


def as_float(mapping, key, default=_REQUIRED, source="<config>"):
    return _coerce(mapping, key, float, default, source)


def as_str(mapping, key, default=_REQUIRED, source="<config>"):
    return _coerce(mapping, key, str, default, source)


def as_bool(mapping, key, default=_REQUIRED, source="<config>"):
    return _coerce(mapping, key, _bool, default, source)


def as_int_tuple(mapping, key, default=_REQUIRED, source="<config>"):
    return _coerce(mapping, key, _int_tuple, default, source)


def network_config_from(mapping, source="<config>") -> NetworkConfig:
    return NetworkConfig(
        stacks=as_int(mapping, "stacks", 2, source),
        width=as_int(mapping, "width", 32, source),
        keypoints=as_int(mapping, "keypoints", 4, source),
        in_channels=as_int(mapping, "in_channels", 3, source),
        input_size=as_int(mapping, "input_size", 64, source),
        gate_mode=as_str(mapping, "gate_mode", "learnable_per_channel", source),
        gate_fixed_value=as_float(mapping, "gate_fixed_value", 1.0, source),
        aggregation=as_str(mapping, "aggregation", "concat_conv", source),
        dtype=as_str(mapping, "dtype", "float64", source),
    )


def train_config_from(mapping, source="<config>", seed_override=None) -> TrainConfig:
    defaults = TrainConfig()
    seed = as_int(mapping, "seed", 0, source) if seed_override is None else seed_override
    return TrainConfig(
        epochs=as_int(mapping, "epochs", defaults.epochs, source),
        batch_size=as_int(mapping, "batch_size", defaults.batch_size, source),
        lr_initial=as_float(mapping, "lr_initial", defaults.lr_initial, source),
        lr_final=as_float(mapping, "lr_final", defaults.lr_final, source),
        lr_drop_epochs=as_int_tuple(mapping, "lr_drop_epochs",
                                    defaults.lr_drop_epochs, source),
        weight_decay=as_float(mapping, "weight_decay", defaults.weight_decay, source),
        rmsprop_rho=as_float(mapping, "rmsprop_rho", defaults.rmsprop_rho, source),
        rmsprop_eps=as_float(mapping, "rmsprop_eps", defaults.rmsprop_eps, source),
        augment=as_bool(mapping, "augment", defaults.augment, source),
        rotation_max_deg=as_float(mapping, "rotation_max_deg",
                                  defaults.rotation_max_deg, source),
        scale_min=as_float(mapping, "scale_min", defaults.scale_min, source),
        scale_max=as_float(mapping, "scale_max", defaults.scale_max, source),
        flip_prob=as_float(mapping, "flip_prob", defaults.flip_prob, source),
        jitter_strength=as_float(mapping, "jitter_strength",
                                 defaults.jitter_strength, source),
        sigma=as_float(mapping, "sigma", defaults.sigma, source),
        seed=seed,
    )


def network_config_to_mapping(cfg: NetworkConfig) -> dict:
    return {
        "stacks": str(cfg.stacks),
        "width": str(cfg.width),
        "keypoints": str(cfg.keypoints),
        "in_channels": str(cfg.in_channels),
        "input_size": str(cfg.input_size),
        "gate_mode": cfg.gate_mode,
        "gate_fixed_value": repr(cfg.gate_fixed_value),
        "aggregation": cfg.aggregation,
        "dtype": cfg.dtype,
    }

"""``key = value`` config files and flag > file > default resolution."""

from dataclasses import fields

from .training import TrainingConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


def _field_kinds():
    return {f.name: f.type if isinstance(f.type, str) else f.type.__name__ for f in fields(TrainingConfig)}


def coerce(key, raw):
    kinds = _field_kinds()
    if key not in kinds:
        raise ConfigError(f"unknown config key {key!r}")
    kind = kinds[key]
    text = str(raw).strip()
    try:
        if kind == "bool":
            if isinstance(raw, bool):
                return raw
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key} ({kind}): {raw!r}") from exc
    return text


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = coerce(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def load_config_file(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), str(path))


def resolve(file_values=None, flag_values=None):
    """Defaults, overridden by file values, overridden by flags that were given (not None)."""
    values = TrainingConfig().to_dict()
    for source in (file_values or {}, {k: v for k, v in (flag_values or {}).items() if v is not None}):
        for key, value in source.items():
            values[key] = coerce(key, value)
    try:
        return TrainingConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(config):
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"

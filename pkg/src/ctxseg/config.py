"""key=value run configuration.

A config file holds one `key = value` pair per line; blank lines and lines
starting with '#' are skipped. Every key must appear in the schema (a dict
of defaults); values are parsed to the default's type. The fully resolved
config can be written back out so each run records exactly what it used.
"""

from pathlib import Path


def _parse_value(raw, default, key):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key!r}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"config key {key!r}: expected an integer, got {raw!r}")
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"config key {key!r}: expected a number, got {raw!r}")
    return raw


def parse_config_text(text, schema):
    values = dict(schema)
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in schema:
            raise ValueError(f"line {lineno}: unknown config key {key!r} "
                             f"(known: {', '.join(sorted(schema))})")
        values[key] = _parse_value(raw, schema[key], key)
    return values


def load_config(path, schema):
    return parse_config_text(Path(path).read_text(), schema)


def write_config(path, values):
    lines = [f"{k} = {v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")

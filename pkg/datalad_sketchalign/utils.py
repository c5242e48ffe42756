"""Configuration and file helpers"""

__docformat__ = 'restructuredtext'

import logging
from pathlib import Path
from typing import (
    Any,
    Dict,
    Iterable,
    Iterator,
)

from datalad import cfg as dlcfg
from datalad.interface.common_cfg import definitions
from datalad.support import json_py

lgr = logging.getLogger('datalad.ext.sketchalign.utils')

CFG_PREFIX = 'datalad.sketchalign.'


def obtain(key: str, overrides: Dict[str, Any] or None = None) -> Any:
    """Value of a ``datalad.sketchalign.<key>`` configuration item

    Values in ``overrides`` (e.g. from a training config file) take
    precedence over the DataLad configuration.
    """
    if overrides and key in overrides:
        return overrides[key]
    return dlcfg.obtain(CFG_PREFIX + key)


def read_config_file(path: Path or str) -> Dict[str, Any]:
    """Read a key=value training config file

    Keys are given without the ``datalad.sketchalign.`` prefix, values are
    converted with the type of the registered configuration item.
    Blank lines and lines starting with '#' are ignored.
    """
    values = {}
    for lineno, line in enumerate(
            Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        key, sep, value = line.partition('=')
        key = key.strip()
        if not sep or not key:
            raise ValueError(
                f'{path}:{lineno}: expected key=value, got {line!r}')
        name = CFG_PREFIX + key
        if name not in definitions:
            raise ValueError(f'{path}:{lineno}: unknown setting {key!r}')
        convert = definitions[name].get('type')
        value = value.strip()
        values[key] = convert(value) if convert else value
    return values


def load_json(path: Path or str) -> Any:
    return json_py.load(str(path))


def dump_json(obj: Any, path: Path or str) -> None:
    """Write a JSON document, byte-stable for identical objects"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    json_py.dump(obj, str(path))


def read_jsonl(path: Path or str) -> Iterator[Dict]:
    yield from json_py.load_stream(str(path))


def write_jsonl(objs: Iterable[Dict], path: Path or str) -> int:
    """Write one JSON object per line, replacing an existing file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists():
        path.unlink()
    objs = list(objs)
    # creates the file also for an empty list
    path.touch()
    if objs:
        json_py.dump2stream(objs, str(path))
    return len(objs)


def append_jsonl(obj: Dict, path: Path or str) -> None:
    json_py.dump2stream(obj, str(path))

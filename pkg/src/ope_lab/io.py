"""CSV and key=value persistence for datasets, features, sweeps and summaries."""
from __future__ import annotations

import csv
import hashlib
import io
import os
import tempfile
from pathlib import Path

import numpy as np

from .features import FeatureSystem
from .sampling import OfflineDataset

DATASET_COLUMNS = ("idx", "state", "action", "reward", "next_state")


class ConfigError(ValueError):
    pass


def format_value(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def atomic_write(path, text: str):
    """Write ``text`` to ``path`` via a temporary file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise OSError(f"cannot write {path}: {exc}") from exc


def csv_text(rows, schema) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(schema)
    for row in rows:
        if isinstance(row, dict):
            extra = set(row) - set(schema)
            if extra:
                raise ValueError(f"row has columns {sorted(extra)} outside schema")
            row = [row[c] for c in schema]
        elif len(row) != len(schema):
            raise ValueError(f"row has {len(row)} fields, schema has {len(schema)}")
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def emit_csv(rows, schema, path):
    atomic_write(path, csv_text(rows, schema))


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, list(reader)


def key_value_text(items: dict) -> str:
    return "".join(f"{k}={format_value(v)}\n" for k, v in items.items())


def write_key_values(items: dict, path):
    atomic_write(path, key_value_text(items))


def parse_key_values(text: str, source: str = "<text>") -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_key_values(path) -> dict[str, str]:
    return parse_key_values(Path(path).read_text(), str(path))


def dataset_rows(ds: OfflineDataset):
    for i, (s, a, r, s_next) in enumerate(ds.records()):
        yield (i, s, a, r, s_next)


def write_dataset(ds: OfflineDataset, path, gamma: float, d: int):
    """Dataset CSV plus ``<path>.meta`` sidecar with gamma, d, seed, n, instance_hash."""
    emit_csv(dataset_rows(ds), DATASET_COLUMNS, path)
    write_key_values({"gamma": gamma, "d": d, "seed": ds.seed, "n": ds.n,
                      "instance_hash": ds.source}, meta_path(path))


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def read_dataset(path) -> tuple[OfflineDataset, dict[str, str]]:
    header, rows = read_csv(path)
    if tuple(header) != DATASET_COLUMNS:
        raise ConfigError(f"{path}: header must be {','.join(DATASET_COLUMNS)}")
    meta = read_key_values(meta_path(path)) if meta_path(path).exists() else {}
    arr = np.array(rows, dtype=object).reshape(len(rows), len(DATASET_COLUMNS))
    if len(rows) and not np.array_equal(arr[:, 0].astype(np.int64), np.arange(len(rows))):
        raise ConfigError(f"{path}: idx column must be 0..n-1 in order")
    ds = OfflineDataset(arr[:, 1].astype(np.int64), arr[:, 2].astype(np.int64),
                        arr[:, 3].astype(float), arr[:, 4].astype(np.int64),
                        int(meta.get("seed", 0)), meta.get("instance_hash", ""))
    if "n" in meta and int(meta["n"]) != ds.n:
        raise ConfigError(f"{path}: metadata n={meta['n']} but file has {ds.n} records")
    return ds, meta


def feature_rows(fs: FeatureSystem):
    offsets = np.concatenate(([0], np.cumsum(fs.n_actions)[:-1]))
    for s, k0 in enumerate(offsets):
        for a in range(fs.n_actions[s]):
            yield (s, a, *fs.phi[k0 + a].tolist())


def feature_schema(d: int) -> tuple[str, ...]:
    return ("state", "action", *(f"phi_{j}" for j in range(d)))


def write_features(fs: FeatureSystem, path):
    emit_csv(feature_rows(fs), feature_schema(fs.dim), path)


def read_features(path) -> FeatureSystem:
    header, rows = read_csv(path)
    d = len(header) - 2
    if d < 1 or tuple(header) != feature_schema(d):
        raise ConfigError(f"{path}: header must be state,action,phi_0,...,phi_(d-1)")
    states = np.array([int(r[0]) for r in rows])
    actions = np.array([int(r[1]) for r in rows])
    n_states = int(states.max()) + 1 if len(rows) else 0
    n_actions = np.bincount(states, minlength=n_states)
    expected = np.concatenate([np.arange(k) for k in n_actions]) if len(rows) else actions
    order = np.lexsort((actions, states))
    if np.any(n_actions == 0) or not np.array_equal(actions[order], expected):
        raise ConfigError(f"{path}: every state needs actions 0..k-1 exactly once")
    phi = np.array([[float(x) for x in r[2:]] for r in rows])[order]
    return FeatureSystem(n_actions, phi)


def config_hash(items: dict) -> str:
    text = key_value_text(dict(sorted(items.items())))
    return hashlib.sha256(text.encode()).hexdigest()[:16]

"""Plain-text artifacts: CSV tables, flat key = value files, run directories."""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .errors import IoError

__all__ = ["write_csv", "write_kv", "read_kv", "sha256_file", "input_digest", "fresh_run_dir"]


def write_csv(path, columns: dict) -> Path:
    """Write equal-length columns with a header row; floats as %.17g."""
    path = Path(path)
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    n = {c.shape[0] for c in cols}
    if len(n) != 1:
        raise ValueError(f"columns of unequal length for {path.name}: {sorted(n)}")
    fmts = ["%d" if np.issubdtype(c.dtype, np.integer) or c.dtype == bool else "%.17g" for c in cols]
    table = np.column_stack([c.astype(np.int64) if c.dtype == bool else c for c in cols]).astype(object)
    try:
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            np.savetxt(fh, table, fmt=fmts, delimiter=",", header=",".join(names), comments="")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def write_kv(path, items) -> Path:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for key, value in items:
                fh.write(f"{key} = {value}\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def read_kv(path) -> dict[str, str]:
    from .model import parse_kv
    try:
        return parse_kv(Path(path).read_text(encoding="utf-8").splitlines())
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def input_digest(items) -> str:
    text = "".join(f"{k} = {v}\n" for k, v in items)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def fresh_run_dir(root, name: str) -> Path:
    """Create ``root/name``; refuse to reuse an existing directory."""
    root = Path(root)
    target = root / name
    try:
        root.mkdir(parents=True, exist_ok=True)
        target.mkdir()
    except FileExistsError:
        raise IoError(f"{target} already exists; refusing to overwrite a previous run") from None
    except OSError as exc:
        raise IoError(f"cannot create output directory {target}: {exc}") from exc
    return target

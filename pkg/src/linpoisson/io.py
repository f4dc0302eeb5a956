"""File formats: model and coefficient JSON, events and counts CSV.

Readers raise :class:`InputError` with the file name and the offending
line or field; writers are deterministic (sorted JSON keys, ``repr`` floats).
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from .basis import BasisSpec, Domain, basis_from_dict
from .errors import LinPoissonError
from .process import EventSet


class InputError(LinPoissonError, ValueError):
    """An input file is missing, unreadable or malformed."""


def _read_text(path) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from None


def read_json(path):
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def load_model(path) -> BasisSpec:
    data = read_json(path)
    try:
        return basis_from_dict(data)
    except (ValueError, TypeError, KeyError) as exc:
        raise InputError(f"{path}: {exc}") from None


def load_coeffs(path, n: int | None = None) -> np.ndarray:
    """Coefficients as a JSON list or an object with an ``"x"`` list."""
    data = read_json(path)
    if isinstance(data, dict):
        for key in ("x", "x_hat"):
            if key in data:
                data = data[key]
                break
        else:
            raise InputError(f"{path}: expected a list or an object with field 'x'")
    if not isinstance(data, list):
        raise InputError(f"{path}: coefficients must be a list of numbers")
    for i, v in enumerate(data):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise InputError(f"{path}: entry {i} is not a finite number")
    x = np.array(data, dtype=float)
    if n is not None and x.size != n:
        raise InputError(f"{path}: expected {n} coefficients, got {x.size}")
    return x


def write_json(path, obj) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")


def _rows(path, header):
    text = _read_text(path)
    lines = text.splitlines()
    reader = csv.reader(lines)
    try:
        first = next(reader)
    except StopIteration:
        raise InputError(f"{path}: empty file (expected header {','.join(header)})") from None
    if [c.strip() for c in first] != list(header):
        raise InputError(f"{path}: line 1: expected header {','.join(header)}")
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        yield lineno, row


def _float(path, lineno, field, text):
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"{path}: line {lineno}: field '{field}' is not a number: {text!r}") from None
    if not math.isfinite(v):
        raise InputError(f"{path}: line {lineno}: field '{field}' is not finite")
    return v


def read_events(path, domain: Domain) -> EventSet:
    coords = []
    for lineno, row in _rows(path, ("t",)):
        t = _float(path, lineno, "t", row[0])
        if not domain.contains(np.array([t]))[0]:
            raise InputError(f"{path}: line {lineno}: t = {t!r} outside [{domain.lower}, {domain.upper}]")
        coords.append(t)
    return EventSet(np.array(coords, dtype=float), domain)


def write_events(path, events: EventSet) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t\n")
        for t in events.coordinates:
            fh.write(repr(float(t)) + "\n")


def read_counts(path, domain: Domain | None = None):
    """Return ``(edges, counts)``; bins must be contiguous and increasing."""
    lefts, rights, counts = [], [], []
    for lineno, row in _rows(path, ("left", "right", "count")):
        left = _float(path, lineno, "left", row[0])
        right = _float(path, lineno, "right", row[1])
        try:
            c = int(row[2])
        except ValueError:
            raise InputError(f"{path}: line {lineno}: field 'count' is not an integer: {row[2]!r}") from None
        if c < 0:
            raise InputError(f"{path}: line {lineno}: negative count")
        if right <= left:
            raise InputError(f"{path}: line {lineno}: right edge must exceed left edge")
        if rights and left != rights[-1]:
            raise InputError(f"{path}: line {lineno}: bin does not start where the previous one ended")
        lefts.append(left)
        rights.append(right)
        counts.append(c)
    if not counts:
        raise InputError(f"{path}: no bins")
    edges = np.array(lefts + [rights[-1]], dtype=float)
    if domain is not None and not (np.isclose(edges[0], domain.lower) and np.isclose(edges[-1], domain.upper)):
        raise InputError(f"{path}: bins must span the model domain [{domain.lower}, {domain.upper}]")
    return edges, np.array(counts, dtype=np.int64)


def write_counts(path, edges, counts) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("left,right,count\n")
        for left, right, c in zip(edges[:-1], edges[1:], counts):
            fh.write(f"{float(left)!r},{float(right)!r},{int(c)}\n")

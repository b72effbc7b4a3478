"""File formats: spectra (CSV/JSON), field maps, qomodel parameter files.

All writers are deterministic: floats are written with ``repr`` precision and
JSON keys are sorted, so identical inputs give byte-identical files.
"""
from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .domain import InputError, Spectrum, _data_path
from .parratt import FieldMap
from .qomodel import CouplingSet, ModeParams

SPECTRUM_COLUMNS = ("theta_rad", "delta_gamma", "re_R", "im_R", "abs2_R")
FIELD_COLUMNS = ("depth_nm", "re_E", "im_E", "intensity")
PARAM_FIXTURES = ("eit_params", "non_eit_params")
SCHEMAS = ("spectrum", "params", "stack", "fit_report", "manifest", "field")

PathLike = Union[str, Path]


def _fmt(x: float) -> str:
    return repr(float(x))


def dumps(obj) -> str:
    """Canonical JSON text used for every JSON output."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _read_json(path: PathLike) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


def load_schema(name: str) -> dict:
    """One of the shipped JSON schemas (see ``SCHEMAS``)."""
    if name not in SCHEMAS:
        raise InputError(f"unknown schema {name!r}")
    return json.loads(_data_path(f"{name}.schema.json").read_text())


# ---------------------------------------------------------------------------
# spectra


def spectrum_rows(spec: Spectrum):
    """Long-format rows (theta, delta, Re R, Im R, |R|^2), theta-major."""
    for i, t in enumerate(spec.theta):
        for j, d in enumerate(spec.delta):
            v = spec.values[i, j]
            yield (t, d, v.real, v.imag, abs(v) ** 2)


def spectrum_csv(spec: Spectrum, manifest: Optional[str] = None) -> str:
    buf = _io.StringIO()
    buf.write(f"# nucav spectrum engine={spec.engine} params_hash={spec.params_hash}")
    buf.write(f" manifest={manifest}\n" if manifest else "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SPECTRUM_COLUMNS)
    for row in spectrum_rows(spec):
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def spectrum_to_dict(spec: Spectrum, manifest: Optional[str] = None) -> dict:
    return {
        "format": "nucav.spectrum",
        "version": 1,
        "engine": spec.engine,
        "params_hash": spec.params_hash,
        "meta": spec.meta,
        "manifest": manifest,
        "theta_rad": spec.theta.tolist(),
        "delta_gamma": spec.delta.tolist(),
        "re_R": spec.values.real.tolist(),
        "im_R": spec.values.imag.tolist(),
    }


def spectrum_from_dict(d: dict) -> Spectrum:
    try:
        vals = np.asarray(d["re_R"], dtype=float) + 1j * np.asarray(d["im_R"], dtype=float)
        return Spectrum(d["theta_rad"], d["delta_gamma"], vals, d["engine"], d.get("params_hash", ""), d.get("meta") or {})
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed spectrum: {exc!r}") from exc


def write_spectrum(spec: Spectrum, path: PathLike, manifest: Optional[str] = None) -> Path:
    """Write a spectrum as CSV or JSON, chosen by the file extension."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(dumps(spectrum_to_dict(spec, manifest)))
    else:
        path.write_text(spectrum_csv(spec, manifest))
    return path


def read_spectrum(path: PathLike) -> Spectrum:
    """Read a spectrum written by :func:`write_spectrum`."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return spectrum_from_dict(_read_json(path))
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    engine, phash = "", ""
    if lines and lines[0].startswith("#"):
        for tok in lines[0][1:].split():
            key, _, val = tok.partition("=")
            engine = val if key == "engine" else engine
            phash = val if key == "params_hash" else phash
        lines = lines[1:]
    rows = list(csv.reader(lines))
    if not rows or tuple(rows[0]) != SPECTRUM_COLUMNS:
        raise InputError(f"{path}: expected header {','.join(SPECTRUM_COLUMNS)}")
    try:
        data = np.array(rows[1:], dtype=float).reshape(-1, 5)
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric data: {exc}") from exc
    theta = np.unique(data[:, 0])
    delta = np.unique(data[:, 1])
    if theta.size * delta.size != data.shape[0]:
        raise InputError(f"{path}: rows do not form a theta x delta grid")
    order = np.lexsort((data[:, 1], data[:, 0]))
    vals = (data[order, 2] + 1j * data[order, 3]).reshape(theta.size, delta.size)
    return Spectrum(theta, delta, vals, engine or "unknown", phash)


# ---------------------------------------------------------------------------
# field maps


def field_csv(fm: FieldMap, manifest: Optional[str] = None) -> str:
    buf = _io.StringIO()
    buf.write(f"# nucav field R={_fmt(fm.reflection.real)}{'+' if fm.reflection.imag >= 0 else '-'}{_fmt(abs(fm.reflection.imag))}i")
    buf.write(f" manifest={manifest}\n" if manifest else "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELD_COLUMNS)
    for z, e in zip(fm.depth, fm.amplitude):
        w.writerow([_fmt(z), _fmt(e.real), _fmt(e.imag), _fmt(abs(e) ** 2)])
    return buf.getvalue()


def field_to_dict(fm: FieldMap, manifest: Optional[str] = None) -> dict:
    return {
        "format": "nucav.field",
        "version": 1,
        "manifest": manifest,
        "depth_nm": fm.depth.tolist(),
        "re_E": fm.amplitude.real.tolist(),
        "im_E": fm.amplitude.imag.tolist(),
        "interfaces_nm": fm.interfaces.tolist(),
        "reflection": [fm.reflection.real, fm.reflection.imag],
    }


def write_field(fm: FieldMap, path: PathLike, manifest: Optional[str] = None) -> Path:
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(dumps(field_to_dict(fm, manifest)))
    else:
        path.write_text(field_csv(fm, manifest))
    return path


# ---------------------------------------------------------------------------
# qomodel parameter files


def params_to_dict(mp: ModeParams, cs: Optional[CouplingSet] = None) -> dict:
    d = mp.to_dict()
    if cs is not None:
        d["couplings"] = cs.to_dict()
    return d


def params_from_dict(d: dict):
    """(ModeParams, CouplingSet or None) from a parameter-file dict."""
    if not isinstance(d, dict):
        raise InputError("parameter file must hold a JSON object")
    mp = ModeParams.from_dict(d)
    cs = CouplingSet.from_dict(d["couplings"]) if d.get("couplings") is not None else None
    return mp, cs


def load_params(source: Union[PathLike, dict]):
    """Load a parameter file, dict or shipped fixture name (``eit_params``, ``non_eit_params``)."""
    if isinstance(source, dict):
        return params_from_dict(source)
    if isinstance(source, str) and source in PARAM_FIXTURES:
        return params_from_dict(json.loads(_data_path(f"{source}.json").read_text()))
    return params_from_dict(_read_json(source))


def save_params(path: PathLike, mp: ModeParams, cs: Optional[CouplingSet] = None) -> Path:
    path = Path(path)
    path.write_text(dumps(params_to_dict(mp, cs)))
    return path

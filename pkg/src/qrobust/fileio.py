"""Reading model descriptions and writing results.

System files are JSON or TOML.  Complex scalars are written as
[re, im]; a bare number is taken as real.  A file either spells out the
matrices directly or names a template ("opa") plus its parameters, in
which case the matrices are generated here.  Sweeps address parameters
by dotted paths into the raw document ("coupling.kappa", "N1.0.0"),
so overrides happen before any matrices are built.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

import numpy as np

from .model import (
    LinearNominalSystem,
    Perturbation,
    PolynomialPerturbation,
    QuadraticPerturbation,
)
from .sbr_analysis import StabilityCertificate


class SystemFileError(ValueError):
    """Raised when a system file cannot be parsed or is inconsistent."""


def decode_complex(value, where: str) -> complex:
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        re, im = value
        if isinstance(re, (int, float)) and isinstance(im, (int, float)):
            return complex(re, im)
    raise SystemFileError(f"{where}: expected a number or [re, im] pair, got {value!r}")


def encode_complex(z: complex):
    z = complex(z)
    if z.imag == 0.0:
        return z.real
    return [z.real, z.imag]


def decode_matrix(value, where: str) -> np.ndarray:
    if not isinstance(value, list) or not value or not isinstance(value[0], list):
        raise SystemFileError(f"{where}: expected a list of rows")
    rows = []
    width = None
    for i, row in enumerate(value):
        if not isinstance(row, list):
            raise SystemFileError(f"{where}: row {i} is not a list")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise SystemFileError(f"{where}: row {i} has length {len(row)}, expected {width}")
        rows.append([decode_complex(v, f"{where}[{i}][{j}]") for j, v in enumerate(row)])
    return np.array(rows, dtype=complex)


def encode_matrix(A: np.ndarray):
    A = np.asarray(A, dtype=complex)
    return [[encode_complex(z) for z in row] for row in A]


def _expand_opa(raw: dict) -> dict:
    coupling = raw.get("coupling", {})
    if "kappa" not in coupling:
        raise SystemFileError("opa template: missing coupling.kappa")
    kappa = float(coupling["kappa"])
    if kappa <= 0:
        raise SystemFileError("opa template: coupling.kappa must be positive")
    gamma = float(raw.get("gamma", 1.0))
    out = {
        "modes": 1,
        "M1": [[0.0]],
        "M2": [[0.0]],
        "N1": [[float(np.sqrt(kappa))]],
        "N2": [[0.0]],
    }
    kind = raw.get("perturbation_type", "quadratic")
    if kind == "quadratic":
        out["perturbation"] = {
            "type": "quadratic",
            "gamma": gamma,
            "E1": [[1.0]],
            "E2": [[0.0]],
            "Delta1": [[0.0]],
            "Delta2": [[[0.0, 1.0]]],
        }
    elif kind == "polynomial":
        out["perturbation"] = {
            "type": "polynomial",
            "gamma": gamma,
            "E1": [[1.0]],
            "E2": [[0.0]],
            "coeffs": raw.get(
                "coeffs",
                [{"k": 2, "l": 0, "value": 0.5}, {"k": 0, "l": 2, "value": 0.5}],
            ),
            "delta1": float(raw.get("delta1", 0.0)),
            "delta2": float(raw.get("delta2", 1.0)),
        }
    elif kind != "none":
        raise SystemFileError(f"opa template: unknown perturbation_type {kind!r}")
    return out


_TEMPLATES = {"opa": _expand_opa}


def expand_template(raw: dict) -> dict:
    """Return the raw document with any template reference resolved."""
    name = raw.get("template")
    if name is None:
        return raw
    try:
        expand = _TEMPLATES[name]
    except KeyError:
        raise SystemFileError(
            f"unknown template {name!r}; available: {sorted(_TEMPLATES)}"
        ) from None
    return expand(raw)


def _decode_perturbation(node: dict) -> Perturbation:
    kind = node.get("type")
    gamma = float(node.get("gamma", 1.0))
    if kind == "quadratic":
        return QuadraticPerturbation(
            E1=decode_matrix(node["E1"], "perturbation.E1"),
            E2=decode_matrix(node["E2"], "perturbation.E2"),
            Delta1=decode_matrix(node["Delta1"], "perturbation.Delta1"),
            Delta2=decode_matrix(node["Delta2"], "perturbation.Delta2"),
            gamma=gamma,
        )
    if kind == "polynomial":
        coeffs = {}
        entries = node.get("coeffs", [])
        if not isinstance(entries, list):
            raise SystemFileError("perturbation.coeffs: expected a list of {k, l, value}")
        for i, entry in enumerate(entries):
            if not isinstance(entry, dict) or not {"k", "l", "value"} <= set(entry):
                raise SystemFileError(
                    f"perturbation.coeffs[{i}]: expected keys k, l, value"
                )
            key = (int(entry["k"]), int(entry["l"]))
            coeffs[key] = decode_complex(entry["value"], f"perturbation.coeffs[{i}].value")
        e1 = decode_matrix(node["E1"], "perturbation.E1")
        e2 = decode_matrix(node["E2"], "perturbation.E2")
        if e1.shape[0] != 1 or e2.shape[0] != 1:
            raise SystemFileError("polynomial perturbation: E1/E2 must be single rows")
        return PolynomialPerturbation(
            E1row=e1[0],
            E2row=e2[0],
            coeffs=coeffs,
            gamma=gamma,
            delta1=float(node.get("delta1", 0.0)),
            delta2=float(node.get("delta2", 0.0)),
        )
    raise SystemFileError(f"perturbation.type must be 'quadratic' or 'polynomial', got {kind!r}")


def build_from_raw(raw: dict) -> tuple[LinearNominalSystem, Perturbation | None]:
    """Turn a raw (template-expanded) document into model objects."""
    raw = expand_template(raw)
    missing = [k for k in ("modes", "M1", "M2", "N1", "N2") if k not in raw]
    if missing:
        raise SystemFileError(f"missing required keys: {missing}")
    system = LinearNominalSystem(
        M1=decode_matrix(raw["M1"], "M1"),
        M2=decode_matrix(raw["M2"], "M2"),
        N1=decode_matrix(raw["N1"], "N1"),
        N2=decode_matrix(raw["N2"], "N2"),
    )
    if system.n_modes != int(raw["modes"]):
        raise SystemFileError(
            f"modes is {raw['modes']} but M1 is {system.n_modes}x{system.n_modes}"
        )
    pert = None
    if "perturbation" in raw and raw["perturbation"] is not None:
        node = raw["perturbation"]
        if not isinstance(node, dict):
            raise SystemFileError("perturbation: expected a table/object")
        pert = _decode_perturbation(node)
    return system, pert


def load_raw(path: str | Path) -> dict:
    """Parse a JSON or TOML file into a raw dict, without building matrices."""
    path = Path(path)
    text = path.read_text()
    suffix = path.suffix.lower()
    if suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SystemFileError(
                f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from None
    elif suffix == ".toml":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise SystemFileError(f"{path}: TOML parse error: {exc}") from None
    else:
        raise SystemFileError(f"{path}: unsupported extension {suffix!r} (use .json or .toml)")
    if not isinstance(raw, dict):
        raise SystemFileError(f"{path}: top level must be an object/table")
    return raw


def load_system(path: str | Path) -> tuple[LinearNominalSystem, Perturbation | None, dict]:
    """Load a system file; returns the models plus the raw document."""
    raw = load_raw(path)
    try:
        system, pert = build_from_raw(raw)
    except SystemFileError as exc:
        raise SystemFileError(f"{path}: {exc}") from None
    return system, pert, raw


def apply_override(raw: dict, dotted: str, value: float) -> dict:
    """Deep-copy raw and set the dotted path to value.

    Integer path components index into lists, so "N1.0.0" reaches a
    matrix entry and "coupling.kappa" a template parameter.
    """
    out = copy.deepcopy(raw)
    parts = dotted.split(".")
    node = out
    for depth, part in enumerate(parts[:-1]):
        trail = ".".join(parts[: depth + 1])
        if isinstance(node, list):
            try:
                node = node[int(part)]
            except (ValueError, IndexError):
                raise SystemFileError(f"override path {dotted!r}: bad list index at {trail!r}")
        elif isinstance(node, dict):
            if part not in node:
                raise SystemFileError(f"override path {dotted!r}: no key {trail!r}")
            node = node[part]
        else:
            raise SystemFileError(f"override path {dotted!r}: {trail!r} is a leaf")
    last = parts[-1]
    if isinstance(node, list):
        try:
            node[int(last)] = value
        except (ValueError, IndexError):
            raise SystemFileError(f"override path {dotted!r}: bad list index at the end")
    elif isinstance(node, dict):
        node[last] = value
    else:
        raise SystemFileError(f"override path {dotted!r}: parent is a leaf")
    return out


def _jsonable(obj):
    if obj is None or isinstance(obj, (bool, int, str)):
        return obj
    if isinstance(obj, float):
        return float(f"{obj:.15e}")
    if isinstance(obj, complex):
        return encode_complex(obj)
    if isinstance(obj, np.ndarray):
        if obj.ndim == 2:
            return _jsonable(encode_matrix(obj))
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return _jsonable(obj.item())
    if isinstance(obj, np.complexfloating):
        return encode_complex(complex(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dump_json(obj, path: str | Path) -> None:
    """Write obj as deterministic JSON (sorted keys, pinned float text)."""
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")


def certificate_to_dict(cert: StabilityCertificate) -> dict:
    out = {
        "verdict": cert.verdict,
        "reason": cert.reason,
        "gamma": cert.gamma,
        "spectral_abscissa": cert.spectral_abscissa,
        "hinf_norm": cert.hinf_norm,
        "gamma_margin": cert.gamma_margin,
        "constants": {
            "c": cert.c,
            "lambda_tilde": cert.lambda_tilde,
            "lambda": cert.lam,
            "mu": encode_complex(cert.mu) if cert.mu is not None else None,
            "c1": cert.c1,
            "c2": cert.c2,
            "c3": cert.c3,
        },
        "P": encode_matrix(cert.P.full()) if cert.P is not None else None,
        "diagnostics": cert.diagnostics,
    }
    return out

"""Scenario configs (YAML), run manifests and result serialization."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np
import yaml

from .errors import AllNonpositive, ParseError, ValidationError
from .qp import as_spd, solve_pi
from .sojourn import ScalingFunction
from .structure import CovModel, VariogramModel, check_alphas

SCHEMA_MAJOR = 1
ARTIFACT_VERSION = "0.1.0"

DEFAULTS = {
    "n": 20000,
    "u": [3.0, 5.0, 8.0],
    "x": [0.0, 0.5, 1.0],
    "T": 1.0,
    "lambda": 10.0,
    "h": 0.05,
    "S": 16.0,
    "M": 3.0,
    "eps": 0.1,
    "method": "expmix",
    "route": "conditional",
    "seed": 0,
}


class SavageWarning(UserWarning):
    pass


# ------------------------------------------------------------------ parsing


def _node_line(root, path: tuple) -> Optional[int]:
    """1-based line of the value at ``path`` in a composed YAML tree."""
    node = root
    line = None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    nxt, line = v, k.start_mark.line + 1
                    break
            if nxt is None:
                return line
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            return line
    return line


@dataclass
class Scenario:
    """A validated model plus run parameters."""

    version: int
    sigma: np.ndarray
    b: np.ndarray
    alphas: tuple
    variogram: Optional[VariogramModel]
    scaling: ScalingFunction
    params: dict
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def d(self) -> int:
        return self.sigma.shape[0]

    @property
    def k(self) -> int:
        return len(self.alphas)

    def cov(self) -> CovModel:
        return CovModel(self.sigma, np.asarray(self.alphas))

    def limit_variogram(self) -> VariogramModel:
        return self.variogram if self.variogram is not None else self.cov().limit_variogram()

    def qp(self):
        return solve_pi(self.sigma, self.b)

    def to_dict(self) -> dict:
        return canonical(self.raw)


def _get(raw: dict, root, key: str, required: bool = True):
    if key not in raw:
        if required:
            raise ParseError("missing required field", line=None, field=key)
        return None
    return raw[key]


def _as_array(value, root, path: tuple, ndim: int) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ParseError("expected numeric values", line=_node_line(root, path), field=".".join(map(str, path)))
    if arr.ndim != ndim:
        raise ParseError(f"expected a {ndim}-d array, got {arr.ndim}-d", line=_node_line(root, path),
                         field=".".join(map(str, path)))
    return arr


def parse_config(text: str, source: str = "<string>") -> Scenario:
    """Parse and validate a scenario from YAML text."""
    try:
        root = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(f"{source}: {getattr(exc, 'problem', None) or exc}",
                         line=mark.line + 1 if mark else None) from None
    if not isinstance(raw, dict):
        raise ParseError(f"{source}: top level must be a mapping", line=1)

    version = _get(raw, root, "version")
    try:
        major = int(str(version).split(".")[0])
    except ValueError:
        raise ParseError("version must be an integer", line=_node_line(root, ("version",)), field="version")
    if major != SCHEMA_MAJOR:
        raise ParseError(f"unsupported schema version {version}", line=_node_line(root, ("version",)), field="version")

    sigma = as_spd(_as_array(_get(raw, root, "sigma"), root, ("sigma",), 2))
    d = sigma.shape[0]
    b = _as_array(_get(raw, root, "b"), root, ("b",), 1)
    if b.size != d:
        raise ValidationError(f"b has length {b.size} but sigma is {d}x{d}")
    if not np.any(b > 0):
        raise AllNonpositive("b must have a strictly positive component")
    alphas = tuple(float(a) for a in check_alphas(_as_array(_get(raw, root, "alphas"), root, ("alphas",), 1)))

    vg = raw.get("variogram")
    variogram = None
    if vg is not None:
        if not isinstance(vg, dict):
            raise ParseError("variogram must be a mapping", line=_node_line(root, ("variogram",)), field="variogram")
        form = vg.get("form", "common")
        if form == "common":
            A = _as_array(vg.get("matrix"), root, ("variogram", "matrix"), 2)
            variogram = VariogramModel.common(alphas, A)
        elif form == "axis":
            A = _as_array(vg.get("matrices"), root, ("variogram", "matrices"), 3)
            variogram = VariogramModel.axis(alphas, A)
        else:
            raise ParseError(f"unknown variogram form {form!r}", line=_node_line(root, ("variogram", "form")),
                             field="variogram.form")
        if variogram.d != d:
            raise ValidationError(f"variogram dimension {variogram.d} does not match sigma ({d})")

    scaling = ScalingFunction.parse(alphas, raw.get("scaling"))

    run = raw.get("run") or {}
    if not isinstance(run, dict):
        raise ParseError("run must be a mapping", line=_node_line(root, ("run",)), field="run")
    unknown = set(run) - set(DEFAULTS)
    if unknown:
        key = sorted(unknown)[0]
        raise ParseError("unknown run parameter", line=_node_line(root, ("run", key)), field=f"run.{key}")
    params = {**DEFAULTS, **run}
    for key in ("u", "x"):
        params[key] = [float(v) for v in np.atleast_1d(params[key])]
    for key in ("T", "lambda", "h", "S", "M", "eps"):
        params[key] = float(params[key])
    for key in ("n", "seed"):
        params[key] = int(params[key])
    _check_params(params)

    w = np.linalg.solve(sigma, b)
    if np.any(w <= 0):
        warnings.warn(f"Savage condition fails (Sigma^-1 b = {w.tolist()}); "
                      "limit-theorem commands need b replaced by its projection", SavageWarning, stacklevel=2)
    return Scenario(major, sigma, b, alphas, variogram, scaling, params, raw)


def _check_params(p: dict) -> None:
    if p["n"] < 1:
        raise ValidationError("run.n must be positive")
    if p["seed"] < 0:
        raise ValidationError("run.seed must be non-negative")
    for key in ("T", "lambda", "h", "S"):
        if p[key] <= 0:
            raise ValidationError(f"run.{key} must be positive")
    if p["h"] > p["lambda"] or p["h"] > p["S"]:
        raise ValidationError("run.h must not exceed the window (lambda, S)")
    if any(u <= 0 for u in p["u"]):
        raise ValidationError("levels run.u must be positive")
    if any(x < 0 for x in p["x"]):
        raise ValidationError("run.x must be non-negative")
    if not 0 <= p["eps"] < 1:
        raise ValidationError("run.eps must lie in [0, 1)")


def load_config(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


# ------------------------------------------------------------ serialization


def plain(obj: Any) -> Any:
    """Recursively convert numpy types to JSON-ready Python types."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if hasattr(obj, "to_dict"):
        return plain(obj.to_dict())
    return obj


def canonical(obj: Any) -> Any:
    return json.loads(json.dumps(plain(obj), sort_keys=True))


def digest(obj: Any) -> str:
    """sha256 of the canonical (key-sorted, compact) JSON encoding."""
    blob = json.dumps(plain(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, bool) or v is None:
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(plain(v), sort_keys=True)
    return str(v)


def rows_to_csv(rows: list, columns: Optional[Iterable[str]] = None) -> str:
    cols = list(columns) if columns is not None else []
    for r in rows:
        for key in r:
            if key not in cols:
                cols.append(key)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(cols)
    for r in rows:
        wr.writerow([_fmt(r[c]) if c in r else "" for c in cols])
    return buf.getvalue()


def read_csv_rows(path) -> list[dict]:
    """Read a results CSV back; numeric cells become floats."""
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for key, val in rec.items():
                try:
                    row[key] = float(val)
                except ValueError:
                    row[key] = val
            out.append(row)
    return out


def emit_results(report: dict, out_dir, stem: str, formats=("json", "csv"), columns=None) -> list[str]:
    """Write ``stem.json`` (whole report) and ``stem.csv`` (``report["rows"]``)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    data = plain(report)
    if "json" in formats:
        p = out_dir / f"{stem}.json"
        p.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        written.append(p.name)
    if "csv" in formats:
        p = out_dir / f"{stem}.csv"
        p.write_text(rows_to_csv(data.get("rows", []), columns))
        written.append(p.name)
    return written


@dataclass
class RunManifest:
    command: list
    config: dict
    seed: int
    params: dict
    outputs: list = field(default_factory=list)
    wall_clock: float = 0.0
    threads: int = 1
    version: str = ARTIFACT_VERSION

    @property
    def config_digest(self) -> str:
        return digest(self.config)

    def to_dict(self) -> dict:
        return {"command": list(self.command), "config": self.config, "config_digest": self.config_digest,
                "seed": self.seed, "params": self.params, "outputs": list(self.outputs),
                "wall_clock": self.wall_clock, "threads": self.threads, "version": self.version}

    def write(self, out_dir) -> Path:
        p = Path(out_dir) / "manifest.json"
        p.write_text(json.dumps(plain(self.to_dict()), indent=2, sort_keys=True) + "\n")
        return p

    @classmethod
    def read(cls, path) -> "RunManifest":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read manifest {path}: {exc}") from None
        if data.get("config_digest") != digest(data.get("config")):
            raise ValidationError("manifest config digest does not match its config")
        return cls(data["command"], data["config"], int(data["seed"]), data.get("params", {}),
                   data.get("outputs", []), float(data.get("wall_clock", 0.0)), int(data.get("threads", 1)),
                   data.get("version", ARTIFACT_VERSION))


def scenario_from_dict(config: dict) -> Scenario:
    """Rebuild a scenario from its canonical dict (as stored in a manifest)."""
    return parse_config(yaml.safe_dump(config, sort_keys=True), "<manifest>")


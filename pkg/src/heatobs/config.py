"""Experiment configuration: YAML loading with line-anchored schema validation."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import heat
from .mesh import Mesh, build_mesh
from .morse import ObservationRegion, make_region


class ConfigError(ValueError):
    """Schema violation with the offending key path and source line."""

    def __init__(self, message: str, key_path: str = "", line: int | None = None, source: str = "<config>"):
        self.key_path = key_path
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {key_path or '<root>'}: {message}")


# ---------------------------------------------------------------------------
# validators


def _num(lo: float | None = None, hi: float | None = None, strict_lo=False, integer=False, optional=False):
    def check(v):
        if v is None and optional:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValueError(f"expected a number, got {v!r}")
        if integer and int(v) != v:
            raise ValueError(f"expected an integer, got {v!r}")
        if not np.isfinite(v):
            raise ValueError("expected a finite number")
        if lo is not None and (v <= lo if strict_lo else v < lo):
            raise ValueError(f"expected a value {'>' if strict_lo else '>='} {lo}, got {v}")
        if hi is not None and v > hi:
            raise ValueError(f"expected a value <= {hi}, got {v}")
        return int(v) if integer else float(v)

    return check


def _choice(*options):
    def check(v):
        if v not in options:
            raise ValueError(f"expected one of {list(options)}, got {v!r}")
        return v

    return check


def _num_list(optional=False, lo=None, strict_lo=False):
    item = _num(lo, strict_lo=strict_lo)

    def check(v):
        if v is None and optional:
            return None
        if not isinstance(v, list) or not v:
            raise ValueError("expected a nonempty list of numbers")
        return [item(x) for x in v]

    return check


def _any_list(optional=True):
    def check(v):
        if v is None and optional:
            return None
        if not isinstance(v, list):
            raise ValueError("expected a list")
        return v

    return check


def _bool(v):
    if not isinstance(v, bool):
        raise ValueError("expected true or false")
    return v


SCHEMA: dict[str, dict[str, tuple[Callable, Any]]] = {
    "mesh": {
        "dimension": (_choice(1, 2), 1),
        "resolution": (_num(8, integer=True), 201),
    },
    "potential": {
        "kind": (_choice("constant", "separable", "tabulated"), "constant"),
        "value": (_num(), 0.0),
        "amplitude": (_num(), 0.0),
        "k": (_num(), 2.0),
        "omega": (_num(), 0.0),
        "values": (_num_list(optional=True), None),
    },
    "initial": {
        "kind": (_choice("cosine", "constant", "random", "values"), "cosine"),
        "modes": (_any_list(), [[1, 1.0]]),
        "value": (_num(), 1.0),
        "count": (_num(1, integer=True), 8),
        "seed": (_num(0, integer=True), 0),
        "values": (_num_list(optional=True), None),
    },
    "weights": {
        "d": (_choice(1, 3), 1),
        "targets": (_any_list(), None),
        "r": (_num(0, strict_lo=True, optional=True), None),
        "collar_width": (_num(0, 0.5, strict_lo=True), 0.1),
        "safety": (_num(0, 1, strict_lo=True), 0.5),
    },
    "solver": {
        "T": (_num(0, strict_lo=True), 0.5),
        "dt": (_num(0, strict_lo=True), 5e-4),
        "scheme": (_choice("crank-nicolson", "implicit-euler"), "crank-nicolson"),
        "store_every": (_num(1, integer=True), 10),
    },
    "pipeline": {
        "C0": (_num(0, 1, strict_lo=True), 0.5),
        "tolerance": (_num(0), 1e-6),
        "c_tol": (_num(0, strict_lo=True), 10.0),
        "ell": (_num(2, integer=True, optional=True), None),
        "h": (_num(0, 1, strict_lo=True, optional=True), None),
        "carleman_h": (_num(0, 1, strict_lo=True), 0.1),
        "grading": (_num(0, 0.5, strict_lo=True), 0.01),
        "oversample": (_num(0, strict_lo=True), 1.5),
        "max_nodes": (_num(8, integer=True), 40001),
    },
    "probe": {
        "resolution": (_num(8, integer=True), 64),
        "t": (_num(0, strict_lo=True), 0.1),
        "dt": (_num(0, strict_lo=True), 1e-3),
        "beta": (_num_list(lo=0, strict_lo=True), [0.3, 0.5, 0.7]),
        "restarts": (_num(1, integer=True), 32),
        "oracle": (_bool, False),
        "samples": (_num(1, integer=True), 100000),
    },
    "sweep": {
        "t": (_num_list(lo=0, strict_lo=True), [0.05, 0.1, 0.2, 0.4, 0.8]),
        "a_norm": (_num_list(lo=0), [0.0, 1.0, 2.0, 4.0, 8.0]),
        "beta": (_num(0, 1, strict_lo=True), 0.5),
        "resolution": (_num(8, integer=True), 64),
        "restarts": (_num(1, integer=True), 8),
        "potential": (_choice("constant", "separable"), "constant"),
    },
}
TOP_LEVEL = {"mesh", "omega", "potential", "initial", "weights", "solver", "pipeline", "probe", "sweep",
             "seed", "output"}
KIND_KEYS = {
    ("potential", "constant"): {"kind", "value"},
    ("potential", "separable"): {"kind", "amplitude", "k", "omega"},
    ("potential", "tabulated"): {"kind", "values"},
    ("initial", "cosine"): {"kind", "modes"},
    ("initial", "constant"): {"kind", "value"},
    ("initial", "random"): {"kind", "count", "seed"},
    ("initial", "values"): {"kind", "values"},
}


@dataclass
class ExperimentConfig:
    """Validated configuration; sections are plain dictionaries with defaults filled in."""

    mesh: dict
    omega: list
    potential: dict
    initial: dict
    weights: dict
    solver: dict
    pipeline: dict
    probe: dict
    sweep: dict
    seed: int = 0
    output: str = "runs/default"
    base_dir: str = "."
    config_hash: str = field(default="", compare=False)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        d.pop("config_hash")
        return d

    def rehashed(self) -> "ExperimentConfig":
        """Recompute ``config_hash`` from the current contents."""
        self.config_hash = hashlib.sha256(yaml.safe_dump(self.as_dict(), sort_keys=True).encode()).hexdigest()
        return self

    def output_dir(self, override: str | None = None) -> Path:
        if override:
            return Path(override)
        p = Path(self.output)
        return p if p.is_absolute() else Path(self.base_dir) / p

    # builders -----------------------------------------------------------

    def build_mesh(self) -> Mesh:
        return build_mesh(self.mesh["dimension"], self.mesh["resolution"])

    def build_omega(self, mesh: Mesh) -> ObservationRegion:
        return make_region(mesh, self.omega)

    def build_potential(self) -> heat.Potential:
        p = self.potential
        keys = KIND_KEYS[("potential", p["kind"])] - {"kind"}
        return heat.make_potential(p["kind"], **{k: p[k] for k in keys})

    def initial_function(self) -> Callable:
        """Initial datum as a function of node coordinates ``(N, dim)``."""
        spec = self.initial
        kind = spec["kind"]
        if kind == "constant":
            v = spec["value"]
            return lambda x: np.full(x.shape[0], v)
        if kind == "cosine":
            modes = spec["modes"]

            def f(x):
                out = np.zeros(x.shape[0])
                for mode in modes:
                    *ks, amp = mode
                    term = np.full(x.shape[0], float(amp))
                    for j, k in enumerate(ks):
                        term *= np.cos(float(k) * np.pi * x[:, j])
                    out += term
                return out

            return f
        if kind == "random":
            rng = np.random.default_rng(spec["seed"])
            count = spec["count"]
            dim = self.mesh["dimension"]
            ks = rng.integers(0, count, size=(count, dim))
            amps = rng.standard_normal(count)

            def g(x):
                out = np.zeros(x.shape[0])
                for k, a in zip(ks, amps):
                    out += a * np.prod(np.cos(k[None, :] * np.pi * x), axis=1)
                return out

            return g
        values = np.asarray(spec["values"], dtype=float)

        def tab(x):
            if x.shape[0] != values.size:
                raise ValueError("tabulated initial data do not match the mesh")
            return values

        return tab

    def initial_values(self, mesh: Mesh) -> np.ndarray:
        return np.asarray(self.initial_function()(mesh.coords), dtype=float)


# ---------------------------------------------------------------------------
# loading


def _line_index(node, path=(), out=None) -> dict:
    """Map key paths to 1-based source lines."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for knode, vnode in node.value:
            key = knode.value
            p = path + (str(key),)
            out[p] = knode.start_mark.line + 1
            _line_index(vnode, p, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, vnode in enumerate(node.value):
            p = path + (str(i),)
            out[p] = vnode.start_mark.line + 1
            _line_index(vnode, p, out)
    return out


def _validate(data: dict, lines: dict, source: str) -> dict:
    def err(msg, *path):
        line = None
        for cut in range(len(path), 0, -1):
            if tuple(path[:cut]) in lines:
                line = lines[tuple(path[:cut])]
                break
        return ConfigError(msg, ".".join(path), line, source)

    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise err("top level must be a mapping")
    for key in data:
        if key not in TOP_LEVEL:
            raise err(f"unknown key {key!r}", str(key))
    out: dict = {}
    for section, fields in SCHEMA.items():
        given = data.get(section) or {}
        if not isinstance(given, dict):
            raise err("expected a mapping", section)
        for key in given:
            if key not in fields:
                raise err(f"unknown key {key!r}", section, str(key))
        kind = given.get("kind")
        if (section, kind) in KIND_KEYS:
            extra = set(given) - KIND_KEYS[(section, kind)]
            if extra:
                k = sorted(extra)[0]
                raise err(f"key {k!r} does not apply to kind {kind!r}", section, k)
        sec = {}
        for key, (check, default) in fields.items():
            if key in given:
                try:
                    sec[key] = check(given[key])
                except ValueError as exc:
                    raise err(str(exc), section, key) from None
            else:
                sec[key] = default
        out[section] = sec
    if out["potential"]["kind"] == "tabulated" and out["potential"]["values"] is None:
        raise err("tabulated potential needs values", "potential")
    if out["initial"]["kind"] == "values" and out["initial"]["values"] is None:
        raise err("tabulated initial data need values", "initial")
    if out["initial"]["kind"] == "cosine":
        for i, mode in enumerate(out["initial"]["modes"]):
            if not isinstance(mode, list) or len(mode) != out["mesh"]["dimension"] + 1:
                raise err("each mode is [k_1, ..., k_dim, amplitude]", "initial", "modes", str(i))
            for v in mode:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise err("mode entries must be numbers", "initial", "modes", str(i))
    omega = data.get("omega", [{"type": "interval", "bounds": [0.35, 0.65]}])
    if isinstance(omega, dict):
        omega = [omega]
    if not isinstance(omega, list) or not omega:
        raise err("expected a shape or a list of shapes", "omega")
    allowed = {"interval": {"type", "bounds"}, "box": {"type", "lower", "upper"}, "ball": {"type", "center", "radius"}}
    for i, shp in enumerate(omega):
        if not isinstance(shp, dict) or shp.get("type") not in allowed:
            raise err("shape needs type interval, box or ball", "omega", str(i))
        extra = set(shp) - allowed[shp["type"]]
        if extra:
            raise err(f"unknown key {sorted(extra)[0]!r}", "omega", str(i), sorted(extra)[0])
    out["omega"] = omega
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise err("seed must be a nonnegative integer", "seed")
    out["seed"] = seed
    output = data.get("output", "runs/default")
    if not isinstance(output, str) or not output:
        raise err("output must be a nonempty path", "output")
    out["output"] = output
    targets = out["weights"]["targets"]
    if targets is not None:
        if len(targets) != out["weights"]["d"]:
            raise err(f"expected {out['weights']['d']} targets", "weights", "targets")
    return out


def load_config_text(text: str, source: str = "<config>", base_dir: str = ".") -> ExperimentConfig:
    """Parse and validate YAML text."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}", "",
                          mark.line + 1 if mark else None, source) from None
    lines = _line_index(node) if node is not None else {}
    valid = _validate(data, lines, source)
    return ExperimentConfig(base_dir=base_dir, **valid).rehashed()


def load_config(path: str | Path | None = None) -> ExperimentConfig:
    """Load a config file, or the bundled default when ``path`` is ``None``."""
    if path is None:
        text = resources.files("heatobs").joinpath("data/default.yaml").read_text()
        return load_config_text(text, "default.yaml", ".")
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", "", None, str(p)) from None
    return load_config_text(text, str(p), str(p.parent))


def default_config_text() -> str:
    return resources.files("heatobs").joinpath("data/default.yaml").read_text()

"""Run configuration: ``key = value`` lines under section headers.

Sections: [coupling] [grid] [truncation] [solver] [task] [output].
Booleans are ``true``/``false``; vectors are comma triples and lists of
vectors are separated by ``;``.
"""

from __future__ import annotations

import configparser
import hashlib
import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .field import CouplingParams, FieldDiscretization

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    def __init__(self, message, line=None, key=None):
        where = f"line {line}: " if line else ""
        super().__init__(where + message)
        self.line = line
        self.key = key


def _bool(s):
    t = s.strip().lower()
    if t not in ("true", "false"):
        raise ValueError(f"expected true/false, got {s!r}")
    return t == "true"


def _floats(s):
    return [float(x) for x in s.split(",") if x.strip()]


def _vec(s):
    v = _floats(s)
    if len(v) != 3:
        raise ValueError(f"expected a comma triple, got {s!r}")
    return v


def _vecs(s):
    return [_vec(part) for part in s.split(";") if part.strip()]


def _opt_float(s):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _opt_int(s):
    return None if s.strip().lower() in ("", "none", "auto") else int(s)


def _ints(s):
    return [int(x) for x in s.split(",") if x.strip()]


def _words(s):
    return [x for x in re.split(r"[,\s]+", s) if x]


# (parser, default); a default of None means "derived" or "unset"
SCHEMA = {
    "coupling": {
        "e": (float, 0.0),
        "lambda_uv": (float, 1.0),
        "sigma_ir": (_opt_float, None),      # 0.05 * lambda_uv
        "spin": (_bool, False),
    },
    "grid": {
        "radial_scheme": (str, "linear"),
        "radial_shells": (int, 2),
        "shells_per_decade": (_opt_float, None),
        "angular_scheme": (str, "axes6"),
        "n_theta": (int, 4),
        "n_phi": (int, 8),
        "antipodal": (_bool, True),
    },
    "truncation": {
        "n_max": (int, 2),
        "c_max": (_opt_int, None),           # n_max
    },
    "solver": {
        "tol": (float, 1e-10),
        "max_iter": (int, 5000),
        "seed": (int, 42),
        "dense_threshold": (int, 2000),
        "workers": (int, 1),
    },
    "task": {
        "xi": (_vecs, [[0.0, 0.0, 0.0]]),
        "sigma_list": (_floats, []),
        "directions": (_vecs, []),
        "k_list": (_floats, [0.2, 0.1, 0.05]),
        "eps": (float, 0.5),
        "fd_step": (_opt_float, None),
        "channels": (_ints, []),
    },
    "output": {
        "directory": (str, "fiberspec-out"),
        "formats": (_words, ["csv", "json"]),
    },
}

# keys that do not change any computed number
UNHASHED = {("output", "directory"), ("solver", "workers")}
# sections that determine a ground state (cache namespace)
MODEL_SECTIONS = ("coupling", "grid", "truncation", "solver")


def _norm(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(_norm(x) for x in v) + "]"
    if v is None:
        return "none"
    return str(v)


@dataclass(frozen=True)
class RunConfig:
    values: dict                       # {(section, key): parsed value}
    defaults_applied: tuple = field(default=())

    def __getitem__(self, item):
        return self.values[item]

    def section(self, name) -> dict:
        return {k: v for (s, k), v in self.values.items() if s == name}

    def canonical(self, sections=None) -> str:
        pairs = sorted((s, k) for (s, k) in self.values
                       if (s, k) not in UNHASHED and (sections is None or s in sections))
        return "\n".join(f"{s}.{k}={_norm(self.values[(s, k)])}" for s, k in pairs)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    @property
    def model_hash(self) -> str:
        return hashlib.sha256(self.canonical(MODEL_SECTIONS).encode()).hexdigest()[:16]

    @property
    def coupling(self) -> CouplingParams:
        c = self.section("coupling")
        return CouplingParams(c["e"], c["lambda_uv"], c["sigma_ir"], c["spin"])

    @property
    def discretization(self) -> FieldDiscretization:
        g = self.section("grid")
        return FieldDiscretization(g["radial_scheme"], g["radial_shells"], g["angular_scheme"],
                                   g["n_theta"], g["n_phi"], g["antipodal"],
                                   g["shells_per_decade"])

    @property
    def n_max(self) -> int:
        return self.values[("truncation", "n_max")]

    @property
    def c_max(self) -> int:
        return self.values[("truncation", "c_max")]

    def solver_kwargs(self) -> dict:
        s = self.section("solver")
        return {"tol": s["tol"], "max_iter": s["max_iter"], "seed": s["seed"],
                "dense_threshold": s["dense_threshold"]}

    @property
    def xi_list(self) -> list[np.ndarray]:
        return [np.array(x) for x in self.values[("task", "xi")]]


def _key_lines(text: str) -> dict:
    lines = {}
    section = None
    for n, raw in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", raw)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"\s*([A-Za-z_][\w]*)\s*[=:]", raw)
        if m and section:
            lines[(section, m.group(1).lower())] = n
    return lines


def parse_config_text(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, strict=True,
                                   comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any [section]", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", exc.lineno, exc.option) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line, expected 'key = value'", line) from None
    lines = _key_lines(text)
    values, defaults = {}, []
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{key}", lines.get((sec, key)), f"{sec}.{key}")
    for sec, keys in SCHEMA.items():
        for key, (parse, default) in keys.items():
            if cp.has_option(sec, key):
                raw = cp.get(sec, key)
                try:
                    values[(sec, key)] = parse(raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {sec}.{key}: {exc}",
                                      lines.get((sec, key)), f"{sec}.{key}") from None
            else:
                values[(sec, key)] = default
                if default is not None:
                    defaults.append(f"{sec}.{key}")
    _derive(values, defaults)
    _validate(values, lines)
    for d in defaults:
        log.info("default applied: %s = %s", d, _norm(values[tuple(d.split("."))]))
    return RunConfig(values, tuple(defaults))


def parse_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())


def _derive(values, defaults):
    if values[("coupling", "sigma_ir")] is None:
        values[("coupling", "sigma_ir")] = 0.05 * values[("coupling", "lambda_uv")]
        defaults.append("coupling.sigma_ir")
    if values[("truncation", "c_max")] is None:
        values[("truncation", "c_max")] = values[("truncation", "n_max")]
        defaults.append("truncation.c_max")


def _validate(values, lines):
    def bad(key, msg):
        s, k = key.split(".")
        raise ConfigError(msg, lines.get((s, k)), key)

    e, lam, sig = (values[("coupling", k)] for k in ("e", "lambda_uv", "sigma_ir"))
    if not math.isfinite(e):
        bad("coupling.e", "coupling.e must be finite")
    if not lam > 0:
        bad("coupling.lambda_uv", "coupling.lambda_uv must be > 0")
    if not sig > 0:
        bad("coupling.sigma_ir", "coupling.sigma_ir must be > 0")
    if sig >= lam:
        bad("coupling.sigma_ir",
            f"coupling.sigma_ir ({sig}) must be smaller than coupling.lambda_uv ({lam})")
    g = {k: values[("grid", k)] for k in SCHEMA["grid"]}
    if g["radial_scheme"] not in ("linear", "logarithmic"):
        bad("grid.radial_scheme", "grid.radial_scheme must be linear or logarithmic")
    if g["angular_scheme"] not in ("axes6", "icosa12", "product"):
        bad("grid.angular_scheme", "grid.angular_scheme must be axes6, icosa12 or product")
    if g["radial_shells"] < 1:
        bad("grid.radial_shells", "grid.radial_shells must be >= 1")
    if g["shells_per_decade"] is not None and g["shells_per_decade"] <= 0:
        bad("grid.shells_per_decade", "grid.shells_per_decade must be > 0")
    if g["angular_scheme"] == "product" and g["antipodal"] and g["n_phi"] % 2:
        bad("grid.n_phi", "grid.n_phi must be even for an antipodal product grid")
    n_max = values[("truncation", "n_max")]
    if not 0 <= n_max <= 255:
        bad("truncation.n_max", "truncation.n_max must be in [0, 255]")
    if not 0 <= values[("truncation", "c_max")] <= 255:
        bad("truncation.c_max", "truncation.c_max must be in [0, 255]")
    s = {k: values[("solver", k)] for k in SCHEMA["solver"]}
    if not s["tol"] > 0:
        bad("solver.tol", "solver.tol must be > 0")
    for key in ("max_iter", "workers"):
        if s[key] < 1:
            bad(f"solver.{key}", f"solver.{key} must be >= 1")
    if s["dense_threshold"] < 0:
        bad("solver.dense_threshold", "solver.dense_threshold must be >= 0")
    eps = values[("task", "eps")]
    if not 0 < eps < 1:
        bad("task.eps", "task.eps must lie in (0, 1)")
    fd = values[("task", "fd_step")]
    if fd is not None and fd <= 0:
        bad("task.fd_step", "task.fd_step must be > 0")
    if any(k <= 0 for k in values[("task", "k_list")]):
        bad("task.k_list", "task.k_list entries must be > 0")
    sl = values[("task", "sigma_list")]
    if any(x <= 0 for x in sl) or any(b >= a for a, b in zip(sl, sl[1:])):
        bad("task.sigma_list", "task.sigma_list must be positive and strictly decreasing")
    if any(x >= lam for x in sl):
        bad("task.sigma_list", "task.sigma_list entries must be below coupling.lambda_uv")
    for d in values[("task", "directions")]:
        if abs(np.linalg.norm(d) - 1) > 1e-10:
            bad("task.directions", "task.directions must be unit vectors")
    bad_fmt = set(values[("output", "formats")]) - {"csv", "json"}
    if bad_fmt:
        bad("output.formats", f"unknown output formats {sorted(bad_fmt)}")

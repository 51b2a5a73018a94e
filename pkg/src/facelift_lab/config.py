"""Flat ``section.key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Every key must be known;
values are validated when the configuration is resolved against the
defaults below.
"""
from __future__ import annotations

import math

from .market import EndowmentSpec, MarketParams
from .utility import UtilitySpec


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is set when the error comes from a file."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = f"{source or '<config>'}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


REQUIRED = object()


def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _int(text):
    f = float(text)
    if f != int(f):
        raise ValueError("not an integer")
    return int(f)


def _floats(text):
    items = [s for s in str(text).replace(" ", "").split(",") if s]
    if not items:
        raise ValueError("empty list")
    return [_float(s) for s in items]


def _grid(text):
    """``lo:hi:n`` (``n`` evenly spaced points, ends included)."""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ValueError("expected lo:hi:n")
    lo, hi, n = _float(parts[0]), _float(parts[1]), _int(parts[2])
    if n < 2 or not hi > lo:
        raise ValueError("need hi > lo and n >= 2")
    return [lo, hi, n]


def _text(text):
    return str(text).strip()


# key -> (parser, default, check or None, description of the check)
_POS = (lambda v: v > 0, "must be > 0")
_NONNEG = (lambda v: v >= 0, "must be >= 0")
_ATLEAST1 = (lambda v: v >= 1, "must be >= 1")
_ALLPOS = (lambda v: all(x > 0 for x in v), "entries must be > 0")

SCHEMA: dict = {
    "model.mu": (_float, REQUIRED, (lambda v: v != 0, "must be nonzero")),
    "model.sigma": (_float, REQUIRED, _POS),
    "utility": (_text, "power:0.5", None),
    "endowment.kind": (_text, "logistic",
                       (lambda v: v in ("logistic", "table", "constant"),
                        "must be logistic, table or constant")),
    "endowment.c0": (_float, 0.0, None),
    "endowment.c1": (_float, 2.0, None),
    "endowment.m": (_float, 0.0, None),
    "endowment.s": (_float, 1.0, _POS),
    "endowment.value": (_float, 1.0, None),
    "endowment.table": (_text, "", None),
    "endowment.eta0": (_float, 0.0, None),
    "seed": (_int, 0, _NONNEG),
    "facelift.phi": (_float, 1.0, None),
    "facelift.psi": (_float, 0.0, None),
    "facelift.z_grid": (_grid, [0.1, 4.0, 40], (lambda v: v[0] > 0, "z values must be > 0")),
    "germ.T": (_float, 0.1, _POS),
    "germ.budget": (_int, 20, (lambda v: v >= 20, "must be >= 20")),
    "germ.n_paths": (_int, 100_000, _ATLEAST1),
    "germ.n_steps": (_int, 100, _ATLEAST1),
    "germ.nu_max": (_float, 1e3, _POS),
    "germ.kappa_max": (_float, 1e4, (lambda v: v >= 1, "must be >= 1")),
    "germ.kappas": (_floats, [1.0, 10.0, 100.0, 1e3, 1e4], (lambda v: all(x >= 0 for x in v),
                                                             "entries must be >= 0")),
    "germ.bang_n": (_int, 40, _ATLEAST1),
    "dual.z_list": (_floats, [2.0, 0.25], _ALLPOS),
    "dual.T_list": (_floats, [0.2, 0.1, 0.05, 0.025],
                    (lambda v: all(x > 0 for x in v) and all(b < a for a, b in zip(v, v[1:])),
                     "must be positive and strictly decreasing")),
    "dual.budget": (_int, 20, (lambda v: v >= 20, "must be >= 20")),
    "dual.n_paths": (_int, 200_000, _ATLEAST1),
    "dual.n_steps": (_int, 50, _ATLEAST1),
    "dual.nu_max": (_float, 1e3, _POS),
    "dual.kappa_max": (_float, 1e3, (lambda v: v >= 1, "must be >= 1")),
    "primal.T": (_float, 0.1, _POS),
    "primal.x_list": (_floats, [0.0, 1.0], None),
    "primal.theta_list": (_floats, [-1.0, 0.0, 1.0], None),
    "primal.n_paths": (_int, 100_000, _ATLEAST1),
    "primal.n_steps": (_int, 50, _ATLEAST1),
    "hjb.eta_min": (_float, -7.0, None),
    "hjb.eta_max": (_float, 7.0, None),
    "hjb.n_eta": (_int, 201, (lambda v: v >= 5, "must be >= 5")),
    "hjb.logz_min": (_float, -6.0, None),
    "hjb.logz_max": (_float, 6.0, None),
    "hjb.n_z": (_int, 201, (lambda v: v >= 5, "must be >= 5")),
    "hjb.T_max": (_float, 0.05, _POS),
    "hjb.save_times": (_floats, [0.025, 0.05], _ALLPOS),
    "hjb.nu_max": (_float, 100.0, _POS),
    "hjb.eps_zz": (_float, 1e-8, _POS),
    "nonattain.T": (_float, 0.1, _POS),
    "nonattain.z_list": (_floats, [0.5, 2.0, 5.0], _ALLPOS),
    "nonattain.kappas": (_floats, [0.0, 10.0, 100.0, 1000.0],
                         (lambda v: all(x >= 0 for x in v), "entries must be >= 0")),
    "nonattain.window_fraction": (_float, 0.04, (lambda v: 0 < v < 1, "must lie in (0, 1)")),
    "nonattain.nu_max": (_float, 1e4, _POS),
    "nonattain.n_paths": (_int, 100_000, _ATLEAST1),
    "nonattain.n_steps": (_int, 50, _ATLEAST1),
}


def parse_text(text: str, source: str | None = None) -> dict[str, str]:
    """Raw ``key -> value`` strings; syntax errors and unknown keys name the line."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", n, source)
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", n, source)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", n, source)
        out[key] = value
    return out


def parse_file(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse_text(fh.read(), str(path))


def parse_override(item: str) -> tuple[str, str]:
    key, sep, value = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {item!r}")
    if key not in SCHEMA:
        raise ConfigError(f"unknown key {key!r}")
    return key, value.strip()


def resolve(raw: dict, overrides: dict | None = None, lines: dict | None = None,
            source: str | None = None, need_model: bool = True) -> dict:
    """Typed values for every schema key, with defaults filled in.

    With ``need_model=False`` the required market keys may be absent, in
    which case they are left out of the result.
    """
    merged = dict(raw)
    merged.update(overrides or {})
    out = {}
    for key, (parse, default, check) in SCHEMA.items():
        if key in merged:
            try:
                value = parse(merged[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: cannot parse {merged[key]!r} ({exc})",
                                  (lines or {}).get(key), source) from None
        elif default is REQUIRED:
            if need_model:
                raise ConfigError(f"missing required key {key!r}")
            continue
        else:
            value = default
        if check is not None and not check[0](value):
            raise ConfigError(f"{key} = {value!r} {check[1]}", (lines or {}).get(key), source)
        out[key] = value
    _cross_checks(out)
    return out


def _cross_checks(cfg: dict) -> None:
    try:
        UtilitySpec.parse(cfg["utility"])
    except ValueError as exc:
        raise ConfigError(f"utility: {exc}") from None
    if cfg["endowment.kind"] == "table":
        try:
            endowment(cfg)
        except ValueError as exc:
            raise ConfigError(f"endowment.table: {exc}") from None
    if cfg["facelift.psi"] > cfg["facelift.phi"]:
        raise ConfigError("facelift.psi must not exceed facelift.phi")
    if cfg["hjb.eta_max"] <= cfg["hjb.eta_min"] or cfg["hjb.logz_max"] <= cfg["hjb.logz_min"]:
        raise ConfigError("hjb grid ranges must be nonempty")
    if max(cfg["hjb.save_times"]) > cfg["hjb.T_max"]:
        raise ConfigError("hjb.save_times must not exceed hjb.T_max")


def _format(value) -> str:
    if isinstance(value, bool):
        raise TypeError("booleans are not config values")
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        if len(value) == 3 and isinstance(value[2], int) and not isinstance(value[0], int):
            return f"{value[0]!r}:{value[1]!r}:{value[2]}"
        return ",".join(_format(v) for v in value)
    return str(value)


def dump(cfg: dict) -> str:
    """Serialize a resolved configuration; ``resolve(parse_text(dump(c))) == c``."""
    return "".join(f"{k} = {_format(cfg[k])}\n" for k in SCHEMA if k in cfg)


def load(path=None, overrides: dict | None = None, need_model: bool = True) -> dict:
    """Parse ``path`` (if any), apply overrides and resolve."""
    if path is None:
        return resolve({}, overrides, need_model=need_model)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    raw = parse_text(text, str(path))
    lines = {}
    for n, line in enumerate(text.splitlines(), start=1):
        key = line.split("#", 1)[0].partition("=")[0].strip()
        if key in raw and key not in (overrides or {}):
            lines[key] = n
    return resolve(raw, overrides, lines, str(path), need_model)


# --- builders --------------------------------------------------------------------


def market(cfg: dict) -> MarketParams:
    return MarketParams(cfg["model.mu"], cfg["model.sigma"])


def utility(cfg: dict) -> UtilitySpec:
    return UtilitySpec.parse(cfg["utility"])


def endowment(cfg: dict) -> EndowmentSpec:
    kind, eta0 = cfg["endowment.kind"], cfg["endowment.eta0"]
    if kind == "constant":
        return EndowmentSpec.constant(cfg["endowment.value"], eta0=eta0)
    if kind == "table":
        pts = []
        for item in cfg["endowment.table"].split(","):
            x, sep, y = item.partition(":")
            if not sep:
                raise ValueError("table entries must look like x:y")
            pts.append((float(x), float(y)))
        return EndowmentSpec.table(pts, eta0=eta0)
    return EndowmentSpec.logistic(cfg["endowment.c0"], cfg["endowment.c1"], cfg["endowment.m"],
                                  cfg["endowment.s"], eta0=eta0)


def model_key(cfg: dict) -> tuple:
    """The part of a configuration that fixes the model (used to match runs)."""
    return tuple(_format(cfg.get(k)) for k in SCHEMA if k.split(".")[0] in ("model", "utility", "endowment"))

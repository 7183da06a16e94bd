"""Run configuration for the benchmark: defaults, ``key = value`` files, flags.

Precedence is defaults < config file < command-line flags. Config-file keys
are the long flag names with dashes or underscores (``x0``, ``stop-tol`` ...).
"""

import argparse
from dataclasses import dataclass, fields, replace

import numpy as np

from .krylov import GmresConfig
from .mpc import MpcConfig
from .sphere import SphereParams

_DEFAULT = SphereParams()
JACOBIANS = {"gmres": "matrix-free", "dense": "dense-oracle"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    n: int = _DEFAULT.N
    dt: float = _DEFAULT.dt
    h: float = _DEFAULT.h
    tol: float = _DEFAULT.gmres_tol
    beta: float = _DEFAULT.beta
    c: float = _DEFAULT.c
    r: float = _DEFAULT.r
    wd: float = _DEFAULT.w_d
    x0: tuple = _DEFAULT.x0
    xf: tuple = _DEFAULT.x_f
    normalize: bool = False
    steps: int = 1000
    max_iters: int = 100
    jacobian: str = "gmres"
    init_tol: float = 1e-10
    stop_tol: float = 1e-3
    out: str = "out"
    seed: int = 0
    emit_trajectory: bool = True
    emit_control: bool = True
    emit_gmres: bool = True
    emit_residual: bool = True
    oracle_check: bool = False

    def sphere_params(self):
        return SphereParams(
            c=self.c,
            r=self.r,
            w_d=self.wd,
            beta=self.beta,
            x0=tuple(self.x0),
            x_f=tuple(self.xf),
            N=self.n,
            dt=self.dt,
            h=self.h,
            gmres_tol=self.tol,
        )

    def mpc_config(self):
        return MpcConfig(
            h=self.h,
            gmres=GmresConfig(rel_tol=self.tol, max_iters=self.max_iters),
            dt=self.dt,
            steps=self.steps,
            jacobian_mode=JACOBIANS[self.jacobian],
        )

    def lines(self):
        """The resolved configuration in config-file syntax."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(float(a)) for a in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{f.name} = {v}")
        return out


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(key, raw):
    kind = type(getattr(RunConfig, key))
    text = str(raw).strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"expected a boolean, got {text!r}")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            vec = tuple(float(a) for a in text.split(","))
            if len(vec) != 3:
                raise ValueError(f"expected three comma-separated numbers, got {text!r}")
            return vec
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None
    return text


def _canonical(key):
    name = key.strip().replace("-", "_")
    if name not in _FIELDS:
        raise ConfigError(key.strip(), "unknown key")
    return name


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}", f"expected 'key = value', got {line!r}")
            key, value = line.split("=", 1)
            name = _canonical(key)
            values[name] = _convert(name, value)
    return values


def _unit(name, vec, normalize):
    v = np.asarray(vec, dtype=float)
    norm = float(np.linalg.norm(v))
    if normalize:
        if norm == 0:
            raise ConfigError(name, "cannot normalize the zero vector")
        return tuple(float(a) for a in v / norm)
    if abs(norm - 1.0) > 1e-12:
        raise ConfigError(name, f"not unit-norm (|v| = {norm!r}); pass --normalize to rescale")
    return tuple(float(a) for a in v)


def validate(cfg):
    """Normalize or check the endpoint vectors and the derived solver settings."""
    cfg = replace(cfg, x0=_unit("x0", cfg.x0, cfg.normalize), xf=_unit("xf", cfg.xf, cfg.normalize))
    if cfg.jacobian not in JACOBIANS:
        raise ConfigError("jacobian", f"must be one of {sorted(JACOBIANS)}")
    for key in ("steps", "max_iters", "n"):
        if getattr(cfg, key) < 1:
            raise ConfigError(key, "must be >= 1")
    for key in ("init_tol", "stop_tol"):
        if not getattr(cfg, key) > 0:
            raise ConfigError(key, "must be positive")
    checks = [
        ("parameters", lambda: cfg.sphere_params()),
        ("tol", lambda: GmresConfig(rel_tol=cfg.tol, max_iters=cfg.max_iters)),
        ("h", lambda: cfg.mpc_config()),
    ]
    for key, build in checks:
        try:
            build()
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None
    return cfg


class _Parser(argparse.ArgumentParser):
    # usage errors share the configuration-error exit path
    def error(self, message):
        raise ConfigError("arguments", message)


def build_parser():
    p = _Parser(
        prog="lsmpc",
        description="Closed-loop minimum-time benchmark on the unit sphere with a least-squares predictor.",
    )
    add = p.add_argument
    add("--n", type=str, help="horizon steps N")
    add("--dt", type=str, help="sampling period")
    add("--h", type=str, help="forward-difference step")
    add("--tol", type=str, help="GMRES relative tolerance")
    add("--beta", type=str, help="weight on the unit-norm constraint")
    add("--c", type=str, help="control centre")
    add("--r", type=str, help="control radius")
    add("--wd", type=str, help="slack reward weight")
    add("--x0", type=str, metavar="A,B,C", help="initial state")
    add("--xf", type=str, metavar="A,B,C", help="target state")
    add("--normalize", action="store_const", const="true", help="rescale x0 and xf to unit length")
    add("--steps", type=str, help="maximum closed-loop steps")
    add("--max-iters", type=str, help="GMRES iteration cap per step")
    add("--jacobian", choices=sorted(JACOBIANS), help="Newton-step solver")
    add("--init-tol", type=str, help="max-norm tolerance of the initial Newton solve")
    add("--stop-tol", type=str, help="distance to xf that ends the run")
    add("--seed", type=str, help="seed for randomized oracle points")
    add("--out", type=str, metavar="DIR", help="output directory")
    add("--config", type=str, metavar="FILE", help="key = value configuration file")
    add("--print-config", action="store_true", help="print the resolved configuration and exit")
    add("--oracle-check", action="store_const", const="true", help="run the oracle cross-checks instead")
    add("-v", "--verbose", action="count", default=0, help="log progress (repeat for more)")
    return p


def parse_config(argv=None, file=None):
    """Resolve a :class:`RunConfig` from flags and an optional file.

    Returns ``(config, namespace)``; the namespace carries the non-config
    flags (``print_config``, ``verbose``).
    """
    ns = build_parser().parse_args(argv)
    values = {}
    path = ns.config or file
    if path:
        values.update(read_config_file(path))
    for name in _FIELDS:
        raw = getattr(ns, name, None)
        if raw is not None:
            values[name] = _convert(name, raw)
    return validate(RunConfig(**values)), ns

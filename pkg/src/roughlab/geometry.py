"""Rough profile, reaction strip and homogenized density.

The rough domain is ``{(x, y): 0 < x < 1, -1 < y < G(x)}`` with upper
boundary ``G(x) = eps * psi(x) * g(x / eps)``.  The reaction strip sits right
under the rough top and has thickness ``eps**(gamma + 1) * h(x, x / eps**beta)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

TWO_PI = 2.0 * np.pi


class ConfigError(ValueError):
    """Raised for inadmissible problem parameters or unknown registry keys."""


class RegistryError(ConfigError, KeyError):
    def __init__(self, kind: str, key: str, available):
        self.kind = kind
        self.key = key
        self.available = sorted(available)
        super().__init__(
            f"unknown {kind} key {key!r}; available: {', '.join(self.available)}"
        )

    def __str__(self):
        return self.args[0]


# ---------------------------------------------------------------------------
# closed-form model functions
# ---------------------------------------------------------------------------

def _g_sine(s):
    return 2.0 + np.sin(TWO_PI * np.asarray(s, dtype=float))


def _psi_bump(x):
    # exp(1 - 1/(1 - t^2)), t = (x - 0.5)/0.4; support [0.1, 0.9], peak 1 at 0.5
    t = (np.asarray(x, dtype=float) - 0.5) / 0.4
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ti * ti))
    return out


def _h_sine(x, s):
    x, s = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(s, dtype=float))
    return 1.0 + 0.5 * np.sin(TWO_PI * s)


def _h_cosine_x(x, s):
    x, s = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(s, dtype=float))
    return (1.0 + x) * (2.0 + np.cos(TWO_PI * s))


def _const_h(c: float):
    def h(x, s):
        x, s = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(s, dtype=float))
        return np.full(x.shape, c)

    def mu_exact(x):
        return np.full(np.shape(x), c, dtype=float)

    return h, mu_exact


def _const_f(c: float):
    def f(u):
        return np.full(np.shape(u), c, dtype=float)

    def df(u):
        return np.zeros(np.shape(u), dtype=float)

    return f, df


def _tanh(u):
    return np.tanh(u)


def _dtanh(u):
    return 1.0 / np.cosh(u) ** 2


def _tanh_shift(u):
    return np.tanh(1.0 - np.asarray(u, dtype=float))


def _dtanh_shift(u):
    return -1.0 / np.cosh(1.0 - np.asarray(u, dtype=float)) ** 2


@dataclass(frozen=True)
class _Profile:
    g: Callable
    g0: float
    g1: float
    lipschitz: float


@dataclass(frozen=True)
class _Density:
    h: Callable
    h1: float
    mu_exact: Optional[Callable]


@dataclass(frozen=True)
class _Reaction:
    f: Callable
    df: Callable
    f_sup: float
    df_sup: float


def _const_density(c: float) -> _Density:
    h, mu_exact = _const_h(c)
    return _Density(h, c, mu_exact)


PROFILES = {
    "sine": _Profile(_g_sine, 1.0, 3.0, TWO_PI),
}

CUTOFFS = {
    "bump": _psi_bump,
}

DENSITIES = {
    "const": _const_density(1.0),
    "sine": _Density(_h_sine, 1.5, lambda x: np.ones(np.shape(x))),
    "cosine_x": _Density(_h_cosine_x, 6.0, lambda x: 2.0 * (1.0 + np.asarray(x, dtype=float))),
}

REACTIONS = {
    "zero": _Reaction(*_const_f(0.0), 0.0, 0.0),
    "one": _Reaction(*_const_f(1.0), 1.0, 0.0),
    "tanh": _Reaction(_tanh, _dtanh, 1.0, 1.0),
    "tanh_shift": _Reaction(_tanh_shift, _dtanh_shift, 1.0, 1.0),
}


def _lookup_density(key: str) -> _Density:
    if key.startswith("const:"):
        try:
            c = float(key.split(":", 1)[1])
        except ValueError:
            raise RegistryError("h", key, list(DENSITIES) + ["const:<c>"]) from None
        if not np.isfinite(c) or c < 0:
            raise ConfigError(f"constant strip density must be finite and >= 0, got {c}")
        return _const_density(c)
    try:
        return DENSITIES[key]
    except KeyError:
        raise RegistryError("h", key, list(DENSITIES) + ["const:<c>"]) from None


@dataclass(frozen=True)
class ModelFunctions:
    """Closed-form g, psi, h, f with their declared bounds.

    ``mu_exact`` is the analytic cell average of ``h(x, .)`` when one is known.
    """

    g: Callable
    g0: float
    g1: float
    g_lipschitz: float
    psi: Callable
    h: Callable
    h1: float
    f: Callable
    df: Callable
    f_sup: float
    df_sup: float
    mu_exact: Optional[Callable] = None
    keys: tuple = ()

    @classmethod
    def from_registry(cls, g="sine", psi="bump", h="sine", f="one") -> "ModelFunctions":
        try:
            prof = PROFILES[g]
        except KeyError:
            raise RegistryError("g", g, PROFILES) from None
        try:
            cut = CUTOFFS[psi]
        except KeyError:
            raise RegistryError("psi", psi, CUTOFFS) from None
        dens = _lookup_density(h)
        try:
            reac = REACTIONS[f]
        except KeyError:
            raise RegistryError("f", f, REACTIONS) from None
        return cls(
            g=prof.g, g0=prof.g0, g1=prof.g1, g_lipschitz=prof.lipschitz,
            psi=cut, h=dens.h, h1=dens.h1,
            f=reac.f, df=reac.df, f_sup=reac.f_sup, df_sup=reac.df_sup,
            mu_exact=dens.mu_exact, keys=(g, psi, h, f),
        )

    def with_reaction(self, f, df, f_sup, df_sup) -> "ModelFunctions":
        return dataclasses.replace(self, f=f, df=df, f_sup=f_sup, df_sup=df_sup,
                                   keys=self.keys[:3] + ("custom",))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeshParams:
    """Resolution controls.

    ``edge`` is the bulk target edge length; the column spacing near the rough
    top is ``top_edge`` or, when unset, ``min(edge, eps / 8)``.  ``refine``
    halves both ``refine`` times.
    """

    edge: float = 1.0 / 64
    top_edge: Optional[float] = None
    strip_layers: int = 2
    grading: float = 1.2
    refine: int = 0
    limit_resolution: int = 0  # 0: derive the limit mesh from the finest rough mesh

    def column_spacing(self, eps: float) -> float:
        base = self.top_edge if self.top_edge is not None else min(self.edge, eps / 8.0)
        return base / 2.0 ** self.refine

    def bulk_edge(self) -> float:
        return self.edge / 2.0 ** self.refine


@dataclass(frozen=True)
class SolverParams:
    rtol: float = 1e-10
    atol: float = 1e-12
    max_iter: int = 40
    delta: float = 1e-10  # relative to the RMS gradient of the iterate
    delta_floor: float = 1e-14
    max_halvings: int = 12
    p_step: float = 0.5
    picard: bool = False


@dataclass(frozen=True)
class ProblemConfig:
    epsilon: float = 0.1
    gamma: float = 1.0
    beta: float = 1.0
    p: float = 2.0
    g: str = "sine"
    psi: str = "bump"
    h: str = "sine"
    f: str = "one"
    mesh: MeshParams = field(default_factory=MeshParams)
    solver: SolverParams = field(default_factory=SolverParams)
    functions: Optional[ModelFunctions] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        for name in ("epsilon", "gamma", "beta", "p"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not np.isfinite(v):
                raise ConfigError(f"{name} must be a finite number, got {v!r}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.p < 2:
            raise ConfigError(f"p must satisfy p >= 2 (2 <= p < inf), got {self.p}")
        if self.mesh.strip_layers < 1:
            raise ConfigError("mesh.strip_layers must be >= 1")
        if self.functions is None:
            object.__setattr__(
                self, "functions",
                ModelFunctions.from_registry(self.g, self.psi, self.h, self.f),
            )

    @property
    def fns(self) -> ModelFunctions:
        return self.functions

    @property
    def scale(self) -> float:
        """Strip thickness scale eps**(gamma + 1)."""
        return self.epsilon ** (self.gamma + 1.0)

    def replace(self, **changes) -> "ProblemConfig":
        keys = {"g", "psi", "h", "f"}
        if keys & changes.keys():
            changes.setdefault("functions", None)
        elif "functions" not in changes:
            changes["functions"] = self.functions
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def eval_profile(x, cfg: ProblemConfig):
    """Height of the rough top, ``eps * psi(x) * g(x / eps)``."""
    eps = cfg.epsilon
    fns = cfg.fns
    x = np.asarray(x, dtype=float)
    return eps * fns.psi(x) * fns.g(x / eps)


def strip_density(x, cfg: ProblemConfig):
    """The oscillating thickness density ``h(x, x / eps**beta)``."""
    x = np.asarray(x, dtype=float)
    return cfg.fns.h(x, x / cfg.epsilon ** cfg.beta)


def strip_bounds(x, cfg: ProblemConfig, check: bool = True):
    """Lower and upper strip boundaries at ``x``.

    Raises ConfigError when the strip leaves the domain (``y_lo < -1``).
    """
    y_hi = eval_profile(x, cfg)
    y_lo = y_hi - cfg.scale * strip_density(x, cfg)
    if check and np.any(y_lo < -1.0):
        raise ConfigError(
            f"strip exits the domain at epsilon={cfg.epsilon}: min y_lo = {np.min(y_lo):.4g} < -1"
        )
    return y_lo, y_hi


def in_strip(x, y, cfg: ProblemConfig):
    """Characteristic function of the open strip."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = np.clip(x, 0.0, 1.0)
    y_lo, y_hi = strip_bounds(xc, cfg, check=False)
    inside = (x > 0.0) & (x < 1.0)
    return inside & (y > y_lo) & (y < y_hi)


# 8-point Gauss-Legendre on [0, 1]
_GL8_X, _GL8_W = np.polynomial.legendre.leggauss(8)
_GL8_X = 0.5 * (_GL8_X + 1.0)
_GL8_W = 0.5 * _GL8_W


def gauss_points(a: float, b: float, n_cells: int, order: int = 8):
    """Composite Gauss-Legendre nodes and weights on ``[a, b]``."""
    if order == 8:
        xr, wr = _GL8_X, _GL8_W
    else:
        xr, wr = np.polynomial.legendre.leggauss(order)
        xr, wr = 0.5 * (xr + 1.0), 0.5 * wr
    edges = np.linspace(a, b, n_cells + 1)
    width = np.diff(edges)
    pts = (edges[:-1, None] + width[:, None] * xr[None, :]).ravel()
    wts = (width[:, None] * wr[None, :]).ravel()
    return pts, wts


def mu(x, fns: ModelFunctions, n_cells: int = 16):
    """Cell average of ``h(x, .)`` over one period by composite 8-point Gauss."""
    if n_cells < 1:
        raise ValueError("n_cells must be >= 1")
    s, w = gauss_points(0.0, 1.0, n_cells)
    x = np.asarray(x, dtype=float)
    vals = fns.h(x[..., None], s)
    return vals @ w


def admissible_epsilon(cfg: ProblemConfig, n_samples: int = 4001) -> bool:
    try:
        check_admissible(cfg, n_samples)
    except ConfigError:
        return False
    return True


def check_admissible(cfg: ProblemConfig, n_samples: int = 4001) -> None:
    """Fail fast when the rough cap or the strip would not fit in the domain."""
    fns = cfg.fns
    if cfg.epsilon * fns.g1 >= 1.0:
        raise ConfigError(
            f"epsilon={cfg.epsilon} too large: eps*g1 = {cfg.epsilon * fns.g1:.3g} must be < 1"
        )
    if cfg.scale * fns.h1 >= 1.0:
        raise ConfigError(
            f"epsilon={cfg.epsilon} too large: strip thickness bound {cfg.scale * fns.h1:.3g} >= 1"
        )
    x = np.linspace(0.0, 1.0, n_samples)
    strip_bounds(x, cfg)

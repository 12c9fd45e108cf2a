"""Scenario files: a versioned TOML schema and the objects built from it.

Unknown keys are errors everywhere. Every random choice takes its seed from the
file (``--seed-override`` replaces the top-level ``seed`` and every seed
derived from it). The scenario hash is the sha256 of the canonical JSON of the
validated model, so two files that differ only in layout or comments share it.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .. import drift as drifts
from ..approximation import pullback
from ..convexdomain import DomainSpec, SinPower, SquaredDistance
from ..drift import DriftSpec
from ..geometry import Euclidean, HyperbolicDisc, Sphere
from ..sampling import Sampler
from ..solver import PicardConfig, SdeConfig, TerminalMap
from .expr import ExpressionError, compile_drift, parse, _eval, _env

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Configuration problem; the CLI maps it to exit code 2."""


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ManifoldCfg(_Model):
    kind: Literal["euclidean", "sphere", "hyperbolic-disc"]
    dim: int = Field(2, ge=1, le=8)
    curvature: float = Field(1.0, gt=0)


class DomainCfg(_Model):
    kind: Literal["quadratic"] = "quadratic"
    a: float = Field(1.0, gt=0)
    c: float = Field(gt=0)
    center: Optional[list[float]] = None
    c2: Optional[float] = Field(None, gt=0)


class PsiCfg(_Model):
    kind: Literal["squared-distance", "sin-power"] = "squared-distance"
    a: float = Field(2.0, ge=2)
    K: float = Field(1.0, gt=0)


class DriftCfg(_Model):
    kind: Literal["zero", "radial", "inward", "tangential", "z-linear", "b-sin", "expression"]
    kappa: float = 1.0
    scale: float = 1.0
    c0: float = 0.3
    components: Optional[list[str]] = None
    chart: Literal["original", "normalized"] = "original"

    @model_validator(mode="after")
    def _components(self):
        if self.kind == "expression" and not self.components:
            raise ValueError("drift kind 'expression' needs 'components'")
        if self.kind != "expression" and self.components is not None:
            raise ValueError("'components' only applies to drift kind 'expression'")
        return self


class TerminalCfg(_Model):
    kind: Literal["identity", "constant", "expression"]
    value: Optional[list[float]] = None
    components: Optional[list[str]] = None


class ForwardCfg(_Model):
    y: list[float]
    mu: Optional[list[float]] = None
    sigma: Optional[list[list[float]]] = None
    T: float = Field(1.0, gt=0)
    n_steps: int = Field(50, ge=1)
    n_paths: int = Field(10_000, ge=2)
    seed: Optional[int] = Field(None, ge=0)


class SolverCfg(_Model):
    max_iter: int = Field(50, ge=1)
    tol: float = Field(1e-4, gt=0)
    init: Literal["center", "terminal"] = "center"
    basis_degree: int = Field(2, ge=0, le=2)


class CheckCfg(_Model):
    count: int = Field(10_000, ge=1)
    seed: Optional[int] = Field(None, ge=0)
    radius: float = Field(0.5, gt=0)
    z_max: float = Field(3.0, gt=0)
    b_box: float = Field(5.0, gt=0)
    h: Optional[float] = Field(None, gt=0)


class CascadeCfg(_Model):
    k_values: list[int] = [2, 4, 8]
    l_values: list[int] = [8, 16, 32]
    l_table_k: list[int] = [2]
    mollifier_samples: int = Field(512, ge=2)
    mollifier_seed: Optional[int] = Field(None, ge=0)
    calibration_count: int = Field(2048, ge=1)
    calibration_z_max: float = Field(3.0, gt=0)
    outward_count: int = Field(4096, ge=1)

    @field_validator("k_values", "l_values")
    @classmethod
    def _nonempty(cls, v):
        if not v or any(int(i) < 1 for i in v):
            raise ValueError("must be a nonempty list of positive integers")
        return v


class DiagnosticsCfg(_Model):
    pair: Literal["initializations", "terminal"] = "initializations"
    second_terminal: Optional[TerminalCfg] = None
    lambdas: Optional[list[float]] = None
    mus: list[float] = [0.0, 0.5, 1.0, 2.0, 4.0]
    alpha: float = Field(2.0, gt=0)
    n_se: float = Field(3.0, gt=0)
    integrability_mu: float = Field(0.5, ge=0)

    @model_validator(mode="after")
    def _second(self):
        if self.pair == "terminal" and self.second_terminal is None:
            raise ValueError("pair = 'terminal' needs 'second_terminal'")
        return self


class Scenario(_Model):
    version: int
    name: str
    seed: int = Field(ge=0)
    manifold: ManifoldCfg
    domain: DomainCfg
    psi: PsiCfg = PsiCfg()
    drift: DriftCfg
    terminal: Optional[TerminalCfg] = None
    forward: Optional[ForwardCfg] = None
    solver: SolverCfg = SolverCfg()
    check: CheckCfg = CheckCfg()
    cascade: Optional[CascadeCfg] = None
    diagnostics: DiagnosticsCfg = DiagnosticsCfg()
    output_dir: Optional[str] = None

    @field_validator("version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {v} (expected {SCHEMA_VERSION})")
        return v

    @model_validator(mode="after")
    def _dims(self):
        n = self.manifold.dim
        if self.domain.center is not None and len(self.domain.center) != n:
            raise ValueError("domain.center has the wrong dimension")
        if self.manifold.kind == "hyperbolic-disc" and n != 2:
            raise ValueError("the hyperbolic disc is two-dimensional")
        if self.drift.components is not None and len(self.drift.components) != n:
            raise ValueError(f"drift.components needs {n} entries")
        return self

    # ------------------------------------------------------------------
    # derived objects

    def hash(self) -> str:
        return scenario_hash(self)

    @property
    def d(self):
        return len(self.forward.y) if self.forward is not None else 1

    @property
    def d_w(self):
        if self.forward is not None and self.forward.sigma is not None:
            return len(self.forward.sigma[0])
        return self.d

    def build_manifold(self):
        m = self.manifold
        if m.kind == "euclidean":
            return Euclidean(m.dim)
        if m.kind == "sphere":
            return Sphere(m.dim, m.curvature)
        return HyperbolicDisc(2)

    def build_domain(self) -> DomainSpec:
        c = self.domain
        return DomainSpec.quadratic(self.manifold.dim, c.a, c.c, c.center, c2=c.c2)

    def build_psi(self):
        if self.psi.kind == "sin-power":
            return SinPower(self.psi.a, self.psi.K)
        return SquaredDistance()

    def build_drift_normalized(self) -> DriftSpec:
        """The drift as written in the file, without the chart change."""
        c = self.drift
        n = self.manifold.dim
        if c.kind == "zero":
            return drifts.zero()
        if c.kind == "radial":
            return drifts.radial(c.kappa)
        if c.kind == "inward":
            return drifts.inward(c.kappa)
        if c.kind == "tangential":
            return drifts.tangential(c.scale)
        if c.kind == "z-linear":
            return drifts.z_linear(c.c0)
        if c.kind == "b-sin":
            return drifts.b_sin()
        fn, uses_z = compile_drift(c.components, self.d, n, self.d_w)
        return DriftSpec(fn, uses_z, "expression")

    def build_drift(self, D: DomainSpec | None = None):
        """The drift in the original chart (pulled back when written in the normalized one)."""
        f = self.build_drift_normalized()
        if self.drift.chart == "normalized":
            D = self.build_domain() if D is None else D
            return drifts.DriftSpec(pullback(f, D).eval, True, f.name + "@normalized")
        return f

    def build_terminal(self, cfg: TerminalCfg | None = None) -> TerminalMap:
        cfg = self.terminal if cfg is None else cfg
        if cfg is None:
            raise ScenarioError("scenario has no [terminal] table")
        return terminal_map(cfg, self.d, self.manifold.dim)

    def build_sde(self) -> SdeConfig:
        fw = self.forward
        if fw is None:
            raise ScenarioError("scenario has no [forward] table")
        d = len(fw.y)
        sigma = None if fw.sigma is None else np.asarray(fw.sigma, float)
        if sigma is not None and sigma.shape[0] != d:
            raise ScenarioError("forward.sigma must have one row per entry of forward.y")
        if fw.mu is not None and len(fw.mu) != d:
            raise ScenarioError("forward.mu has the wrong length")
        seed = self.seed if fw.seed is None else fw.seed
        return SdeConfig.constant(fw.y, fw.mu, sigma, T=fw.T, n_steps=fw.n_steps, n_paths=fw.n_paths, seed=seed)

    def build_picard(self, init: str | None = None) -> PicardConfig:
        s = self.solver
        return PicardConfig(s.max_iter, s.tol, init or s.init, s.basis_degree)

    def build_sampler(self, z_max: float | None = None) -> Sampler:
        c = self.check
        seed = self.seed if c.seed is None else c.seed
        return Sampler(seed=seed, radius=c.radius, b_box=c.b_box, z_max=c.z_max if z_max is None else z_max,
                       d=self.d, d_w=self.d_w)


def terminal_map(cfg: TerminalCfg, d: int, n: int) -> TerminalMap:
    if cfg.kind == "identity":
        if d != n:
            raise ScenarioError("terminal 'identity' needs dim(B) == dim(M)")
        return TerminalMap(lambda b: np.array(b, float), "identity")
    if cfg.kind == "constant":
        if cfg.value is None or len(cfg.value) != n:
            raise ScenarioError(f"terminal 'constant' needs a value of length {n}")
        u0 = np.asarray(cfg.value, float)
        return TerminalMap(lambda b: np.broadcast_to(u0, np.shape(b)[:-1] + (n,)).copy(), "constant")
    if not cfg.components or len(cfg.components) != n:
        raise ScenarioError(f"terminal 'expression' needs {n} components")
    try:
        trees = [parse(c, d, 0, 0) for c in cfg.components]
    except ExpressionError as exc:
        raise ScenarioError(f"terminal: {exc}") from None

    def U(b):
        b = np.asarray(b, float)
        env = _env(b, np.zeros(b.shape[:-1] + (0,)), np.zeros(b.shape[:-1] + (0, 0)))
        return np.stack([np.broadcast_to(np.asarray(_eval(t, env), float), b.shape[:-1]) for t in trees], -1)

    return TerminalMap(U, "expression")


def canonical_json(scn: Scenario) -> str:
    return json.dumps(scn.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def scenario_hash(scn: Scenario) -> str:
    return hashlib.sha256(canonical_json(scn).encode()).hexdigest()


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for e in exc.errors():
        where = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"  {where}: {e['msg']}")
    return "\n".join(lines)


def load_scenario(path, seed_override: int | None = None) -> Scenario:
    """Parse and validate a scenario; every problem raises :class:`ScenarioError`."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"{path}: no such file") from None
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    if seed_override is not None:
        raw = _override_seeds(raw, int(seed_override))
    try:
        scn = Scenario.model_validate(raw)
    except ValidationError as exc:
        raise ScenarioError(f"{path}: invalid scenario\n{_format_errors(exc)}") from None
    try:
        scn.build_drift_normalized()
        if scn.terminal is not None:
            scn.build_terminal()
        if scn.diagnostics.second_terminal is not None:
            scn.build_terminal(scn.diagnostics.second_terminal)
    except ExpressionError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return scn


def _override_seeds(raw: dict, seed: int) -> dict:
    raw = json.loads(json.dumps(raw))
    raw["seed"] = seed
    for table, key in (("forward", "seed"), ("check", "seed"), ("cascade", "mollifier_seed")):
        if isinstance(raw.get(table), dict) and key in raw[table]:
            raw[table][key] = None
    return raw

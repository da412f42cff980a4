from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from discretize import SurfaceIntegrand, VolumeIntegrand
from geometry import RealizationSeed
from homogenize import parse_k
from utils.hash_utils import hash_file
from utils.json_utils import json_read, json_write, yaml_read


class GeneratorConfig(BaseModel):
    """Random geometry generator and its parameters (lengths in absolute units)."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["bernoulli-lattice", "hardcore-rejection", "empty"] = "bernoulli-lattice"
    spacing: float = Field(1.0, gt=0)
    occupation_prob: float = Field(0.5, ge=0, le=1)
    radius: float = Field(0.2, ge=0)
    lattice: Literal["cubic", "triangular"] = "cubic"
    intensity: float = Field(1.0, ge=0)
    r_min: float = Field(0.1, ge=0)
    r_max: float = Field(0.3, ge=0)

    @model_validator(mode="after")
    def check_radius_law(self):
        if self.r_min > self.r_max:
            raise ValueError(f"r_min={self.r_min} exceeds r_max={self.r_max}")
        return self

    def template(self, seed: int = 0) -> RealizationSeed:
        return RealizationSeed(seed=seed, kind=self.kind, spacing=self.spacing,
                               occupation_prob=self.occupation_prob, radius=self.radius, lattice=self.lattice,
                               intensity=self.intensity, r_min=self.r_min, r_max=self.r_max)


class VolumeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    p: float = Field(2.0, gt=1)
    a: float = Field(1.0, gt=0)
    c1: float = Field(1.0, gt=0)
    c2: float = Field(1.0, gt=0)
    xi: List[List[float]] = Field(default_factory=lambda: [[1.0, 0.0]])

    @model_validator(mode="after")
    def check_constants(self):
        if self.c1 > self.c2:
            raise ValueError(f"c1={self.c1} exceeds c2={self.c2}")
        if not self.c1 <= self.a <= self.c2:
            raise ValueError(f"a={self.a} outside [c1, c2] = [{self.c1}, {self.c2}]")
        return self

    def integrand(self) -> VolumeIntegrand:
        return VolumeIntegrand(p=self.p, a=self.a, c1=self.c1, c2=self.c2)


class SurfaceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    g: float = Field(1.0, gt=0)
    c3: float = Field(1.0, gt=0)
    c4: float = Field(1.0, gt=0)
    nu: List[List[float]] = Field(default_factory=lambda: [[1.0, 0.0]])
    symmetry: bool = True

    @field_validator("nu")
    @classmethod
    def normalize_nu(cls, value: List[List[float]]) -> List[List[float]]:
        normalized = []
        for v in value:
            norm = math.sqrt(sum(x * x for x in v))
            if norm == 0:
                raise ValueError("nu must be nonzero")
            normalized.append([x / norm for x in v])
        return normalized

    @model_validator(mode="after")
    def check_constants(self):
        if self.c3 > self.c4:
            raise ValueError(f"c3={self.c3} exceeds c4={self.c4}")
        if not self.c3 <= self.g <= self.c4:
            raise ValueError(f"g={self.g} outside [c3, c4] = [{self.c3}, {self.c4}]")
        return self

    def integrand(self) -> SurfaceIntegrand:
        return SurfaceIntegrand(g=self.g, c3=self.c3, c4=self.c4)


class HoleWeightConfig(BaseModel):
    """
    'ladder' runs the k ladder (hole weight 1/k, 'inf' masks the holes);
    'soft' runs explicit decreasing weight schedules alpha (volume) and beta (surface),
    plus the hole-masked column they are compared against within soft_rtol.
    """
    model_config = ConfigDict(extra="forbid")

    mode: Literal["ladder", "soft"] = "ladder"
    k_ladder: List[Union[float, str]] = Field(default_factory=lambda: [1, 2, 4, 8, "inf"])
    alpha: List[float] = Field(default_factory=list)
    beta: List[float] = Field(default_factory=list)
    soft_rtol: float = Field(default=1e-2, gt=0)

    @field_validator("k_ladder")
    @classmethod
    def check_k(cls, value):
        for k in value:
            parse_k(k)
        return value

    @field_validator("alpha", "beta")
    @classmethod
    def check_schedule(cls, value: List[float]) -> List[float]:
        if any(not 0 < w <= 1 for w in value):
            raise ValueError("schedule weights must lie in (0, 1]")
        if any(b >= a for a, b in zip(value, value[1:])):
            raise ValueError("schedule weights must be strictly decreasing")
        return value

    @model_validator(mode="after")
    def check_mode(self):
        if self.mode == "soft" and not self.alpha:
            raise ValueError("soft mode needs a nonempty alpha schedule")
        return self

    def volume_ks(self) -> List[Union[float, str]]:
        if self.mode == "soft":
            return [1.0 / w for w in self.alpha] + ["inf"]
        return list(self.k_ladder)

    def surface_ks(self) -> List[Union[float, str]]:
        if self.mode == "soft":
            return [1.0 / w for w in (self.beta or self.alpha)] + ["inf"]
        return list(self.k_ladder)


class ExtensionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    t: float = Field(2.0, gt=0)
    intensity: float = Field(1.0, ge=0)
    radius_law: Tuple[float, float] = (0.1, 0.45)
    p: float = Field(2.0, gt=1)
    field_kind: Literal["mixed", "constant", "affine", "smooth", "jump"] = "mixed"
    gamma: Optional[float] = Field(None, gt=0)
    calibrate_gamma: bool = False
    lambdas: List[float] = Field(default_factory=lambda: [0.5, 2.0])
    homothety_rtol: float = Field(1e-8, gt=0)


class DensityConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    windows: List[float] = Field(default_factory=lambda: [4.0, 8.0, 16.0])

    @field_validator("windows")
    @classmethod
    def check_windows(cls, value: List[float]) -> List[float]:
        if not value or value[0] <= 0 or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("windows must be positive and strictly increasing")
        return value


class OracleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_surface: int = Field(200, ge=1)
    n_volume: int = Field(50, ge=1)
    volume_rtol: float = Field(1e-8, gt=0)


class ExperimentConfig(BaseModel):
    """
    One experiment. Validated before any compute; every default is dumped into the manifest.

    t_ladder is in units of delta, h = h_over_delta * delta.
    """
    model_config = ConfigDict(extra="forbid")

    kind: Literal["fhom", "ghom", "extension_battery", "density_study", "oracle_suite"]
    n: Literal[2, 3] = 2
    delta: float = Field(0.2, gt=0)
    r_star: float = Field(0.5, gt=0)
    h_over_delta: float = Field(0.25, gt=0)
    frame_width: int = Field(1, ge=1)
    t_ladder: List[float] = Field(default_factory=lambda: [8.0, 16.0])
    seeds: List[int] = Field(default_factory=lambda: list(range(16)))
    parallel: int = Field(1, ge=1)
    tol: float = Field(1e-8, gt=0)
    out: str = "./results"
    translation_check: bool = False

    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    volume: VolumeConfig = Field(default_factory=VolumeConfig)
    surface: SurfaceConfig = Field(default_factory=SurfaceConfig)
    hole_weight: HoleWeightConfig = Field(default_factory=HoleWeightConfig)
    extension: ExtensionConfig = Field(default_factory=ExtensionConfig)
    density: DensityConfig = Field(default_factory=DensityConfig)
    oracle: OracleConfig = Field(default_factory=OracleConfig)

    @field_validator("h_over_delta")
    @classmethod
    def check_resolution(cls, value: float) -> float:
        if value >= 0.5:
            raise ValueError(f"h must be below delta/2, got h/delta = {value}")
        return value

    @field_validator("t_ladder")
    @classmethod
    def check_t_ladder(cls, value: List[float]) -> List[float]:
        if not value or value[0] <= 0 or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("t_ladder must be positive and strictly increasing")
        return value

    @field_validator("seeds")
    @classmethod
    def check_seeds(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("at least one seed is required")
        if len(set(value)) != len(value):
            raise ValueError("seeds must be distinct")
        return value

    @model_validator(mode="after")
    def check_geometry(self):
        gen = self.generator
        if gen.kind == "bernoulli-lattice":
            if not 0 < gen.radius < self.r_star:
                raise ValueError(f"generator.radius={gen.radius} must lie in (0, r_star={self.r_star})")
            if gen.radius + self.delta >= gen.spacing / 2:
                raise ValueError(f"generator.radius + delta must be below spacing/2 = {gen.spacing / 2}")
            if gen.lattice == "triangular" and self.n != 2:
                raise ValueError("the triangular lattice is planar only")
        if gen.kind == "hardcore-rejection" and gen.r_max >= self.r_star:
            raise ValueError(f"generator.r_max={gen.r_max} must be below r_star={self.r_star}")
        if self.kind == "fhom" and any(len(x) != self.n for x in self.volume.xi):
            raise ValueError(f"every volume.xi needs {self.n} components")
        if self.kind == "ghom" and any(len(v) != self.n for v in self.surface.nu):
            raise ValueError(f"every surface.nu needs {self.n} components")
        if self.kind == "extension_battery" and len(self.seeds) < 10:
            raise ValueError("extension_battery needs at least 10 seeds")
        return self

    @property
    def h(self) -> float:
        return self.h_over_delta * self.delta

    @property
    def windows(self) -> List[float]:
        return [t * self.delta for t in self.t_ladder]


def parse_seeds(text: str) -> List[int]:
    """'0,1,2' or '0-15' or a mix of both."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def load_config(path: str | Path, overrides: Dict[str, Any] | None = None) -> ExperimentConfig:
    """Read the YAML document at `path`, apply CLI overrides and validate."""
    data = yaml_read(path) or {}
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.model_validate(data)


@dataclass(frozen=True)
class ArtifactRecord:
    path: str
    sha256: str
    bytes: int

    @classmethod
    def of(cls, root: Path, path: Path) -> "ArtifactRecord":
        return cls(path=path.relative_to(root).as_posix(), sha256=hash_file(path), bytes=path.stat().st_size)

    def to_dict(self) -> Dict[str, Any]:
        return {'path': self.path, 'sha256': self.sha256, 'bytes': self.bytes}


@dataclass
class Manifest:
    """
    Self-describing record of one run.

    Properties:
        - every file written by the run is listed with its sha256
        - the full config, defaults included, is stored
        - no wall-clock data, so identical runs give identical manifests
    """
    config: Dict[str, Any]
    artifacts: List[ArtifactRecord] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    checks: List[Dict[str, Any]] = field(default_factory=list)
    status: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'config': self.config,
            'artifacts': [a.to_dict() for a in self.artifacts],
            'warnings': self.warnings,
            'checks': self.checks,
            'status': self.status,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Manifest":
        return cls(config=data['config'], artifacts=[ArtifactRecord(**a) for a in data.get('artifacts', [])],
                   warnings=list(data.get('warnings', [])), checks=list(data.get('checks', [])),
                   status=int(data.get('status', 0)))

    def write(self, path: str | Path):
        json_write(path, self.to_dict())

    @classmethod
    def read(cls, path: str | Path) -> "Manifest":
        return cls.from_dict(json_read(path))

    def __str__(self):
        return f"Manifest(artifacts={len(self.artifacts)}, warnings={len(self.warnings)}, status={self.status})"


@dataclass(frozen=True)
class ReplayItem:
    """Outcome for one artifact: 'match', 'mismatch', 'absent' or 'drift' (rerun differs)."""
    path: str
    status: str
    expected: str
    found: str | None = None

    def to_dict(self) -> Dict[str, Any]:
        return {'path': self.path, 'status': self.status, 'expected': self.expected, 'found': self.found}

    def __str__(self):
        mark = "✓" if self.status == "match" else "✗"
        return f"{mark} {self.path}: {self.status}"


def summarize_replay(items: Sequence[ReplayItem]) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for item in items:
        counts[item.status] = counts.get(item.status, 0) + 1
    return counts

"""Pipeline configuration: JSON file, defaults, and command-line overrides."""
from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .claims import ValidationError
from .cohort import STANDARD_WINDOWS
from .ensemble import EnsembleKind, HyperGrid, default_grid
from .eval import ERRORS_AS_NEGATIVE, ERRORS_EXCLUDED, CostModel
from .llm import LLMConfig
from .serialize import DEFAULT_MAX_VISITS, FieldMask, PromptFormat
from .synthgen import GeneratorConfig

_ENV_REF = re.compile(r"^\$\{([A-Za-z_][A-Za-z0-9_]*)\}$")
_TOP_KEYS = {"paths", "seed", "window_days", "max_visits", "format", "mask", "generator", "grids",
             "llm", "cost", "parallelism", "error_policy", "min_support"}


def parse_format(text) -> PromptFormat:
    if isinstance(text, PromptFormat):
        return text
    key = str(text).replace("-", "").replace("_", "").lower()
    for f in PromptFormat:
        if key in (f.value.lower(), f.slug.replace("_", "")):
            return f
    raise ValidationError(f"unknown prompt format {text!r}; choose from {[f.value for f in PromptFormat]}")


@dataclass
class Paths:
    data_dir: Path = Path("odx-run/data")
    output_dir: Path = Path("odx-run")
    dictionary: Path | None = None
    templates_dir: Path | None = None

    @classmethod
    def from_dict(cls, d: dict, base: Path) -> "Paths":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown path settings: {sorted(unknown)}")

        def rel(v):
            if v is None:
                return None
            p = Path(v)
            return p if p.is_absolute() else base / p

        out = rel(d.get("output_dir", "odx-run"))
        data = rel(d["data_dir"]) if d.get("data_dir") else out / "data"
        return cls(data, out, rel(d.get("dictionary")), rel(d.get("templates_dir")))


@dataclass
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    seed: int = 0
    window_days: int = 7
    max_visits: int = DEFAULT_MAX_VISITS
    format: PromptFormat = PromptFormat.DETAILED_DESCRIPTIVE
    mask: FieldMask = field(default_factory=FieldMask)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    grids: dict = field(default_factory=lambda: {k: default_grid(k) for k in EnsembleKind})
    llm: LLMConfig = field(default_factory=LLMConfig)
    cost: CostModel = field(default_factory=CostModel)
    parallelism: int = field(default_factory=lambda: os.cpu_count() or 1)
    error_policy: str = ERRORS_AS_NEGATIVE
    min_support: int = 50

    def validate(self, allow_any_window: bool = False, check_paths: bool = True) -> None:
        if self.window_days < 1:
            raise ValidationError("window must be >= 1 day")
        if not allow_any_window and self.window_days not in STANDARD_WINDOWS:
            raise ValidationError(f"window must be one of {STANDARD_WINDOWS} (use --allow-any-window)")
        if self.max_visits < 1:
            raise ValidationError("max_visits must be >= 1")
        if self.parallelism < 1:
            raise ValidationError("parallelism must be >= 1")
        if self.min_support < 1:
            raise ValidationError("min_support must be >= 1")
        if self.error_policy not in (ERRORS_AS_NEGATIVE, ERRORS_EXCLUDED):
            raise ValidationError(f"unknown error_policy {self.error_policy!r}")
        self.generator.validate()
        if check_paths:
            for name in ("dictionary", "templates_dir"):
                p = getattr(self.paths, name)
                if p is not None and not p.exists():
                    raise ValidationError(f"{name} not found: {p}")

    def to_dict(self) -> dict:
        """Settings as JSON; credentials are left out."""
        return {
            "paths": {k: None if v is None else str(v) for k, v in vars(self.paths).items()},
            "seed": self.seed,
            "window_days": self.window_days,
            "max_visits": self.max_visits,
            "format": self.format.value,
            "mask": self.mask.name,
            "generator": self.generator.to_dict(),
            "grids": {EnsembleKind(k).value: g.to_dict() for k, g in self.grids.items()},
            "llm": self.llm.to_dict(),
            "cost": vars(self.cost).copy(),
            "parallelism": self.parallelism,
            "error_policy": self.error_policy,
            "min_support": self.min_support,
        }

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("parallelism")  # does not change any artifact
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _interpolate_credentials(llm: dict) -> dict:
    # only the credential may reference the environment
    llm = dict(llm)
    key = llm.get("api_key")
    if isinstance(key, str):
        m = _ENV_REF.match(key)
        if m:
            if m.group(1) not in os.environ:
                raise ValidationError(f"api_key references unset environment variable {m.group(1)}")
            llm["api_key"] = os.environ[m.group(1)]
    return llm


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError("config root must be an object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    cfg = PipelineConfig()
    cfg.paths = Paths.from_dict(raw.get("paths", {}), path.parent)
    for k in ("seed", "window_days", "max_visits", "parallelism", "min_support"):
        if k in raw:
            setattr(cfg, k, int(raw[k]))
    if "format" in raw:
        cfg.format = parse_format(raw["format"])
    if "mask" in raw:
        cfg.mask = FieldMask.parse(raw["mask"])
    if "error_policy" in raw:
        cfg.error_policy = raw["error_policy"]
    gen = dict(raw.get("generator", {}))
    gen.setdefault("seed", cfg.seed)
    cfg.generator = GeneratorConfig.from_dict(gen)
    for kind, grid in raw.get("grids", {}).items():
        cfg.grids[EnsembleKind(kind)] = HyperGrid.from_dict(grid)
    if "llm" in raw:
        cfg.llm = LLMConfig.from_dict(_interpolate_credentials(raw["llm"]))
    if "cost" in raw:
        cfg.cost = CostModel(**raw["cost"])
    return cfg

"""Run configuration: plain key=value text files plus CLI overrides.

The format is a flat list of ``key = value`` lines, ``#`` comments, repeated
``censor_rule`` lines for the per-(year, region) limits, and ``column.<name>``
entries mapping canonical column names to the input file's headers. Paths are
resolved relative to the config file.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from censimpute.errors import ConfigError
from censimpute.panel import CensorRule
from censimpute.selection import SadParams

DEFAULT_METHODS = ("tobit_r", "tobit_lr@0.2", "cqr_at_limit")

_SCALAR_KEYS = {
    "input": str,
    "truth": str,
    "output_dir": str,
    "seed": int,
    "workers": int,
    "draws": int,
    "wage_scale": str,
    "min_uncensored": int,
    "max_censor_share": float,
    "sad_window_frac": float,
    "sad_grid_step": float,
    "sad_bandwidth": str,
    "profile_penalty": float,
    "profile_min_quantile": float,
    "profile_invert_weights": bool,
    "cqr_delta": float,
    "cqr_zeta_mult": float,
    "loom_dump": bool,
}
_LIST_KEYS = {"methods", "covariates", "eval_covariates"}


@dataclass
class MethodSpec:
    label: str
    kind: str
    lower_quantile: float | None = None

    @staticmethod
    def parse(label: str) -> "MethodSpec":
        base, _, arg = label.partition("@")
        base = base.strip()
        if base == "tobit_r":
            return MethodSpec(label="tobit_r", kind="tobit_r")
        if base == "tobit_lr":
            q = float(arg) if arg else 0.2
            if not 0.0 < q < 1.0:
                raise ConfigError(f"tobit_lr quantile must lie in (0,1), got {q}")
            return MethodSpec(label=f"tobit_lr@{q:g}", kind="tobit_lr", lower_quantile=q)
        if base == "cqr_at_limit":
            return MethodSpec(label="cqr_at_limit", kind="cqr_at_limit")
        if base == "cqr_extrapolated":
            return MethodSpec(label="cqr_extrapolated", kind="cqr_extrapolated")
        raise ConfigError(f"unknown method {label!r}")


@dataclass
class PipelineConfig:
    input: str | None = None
    truth: str | None = None
    output_dir: str = "out"
    seed: int = 20240101
    workers: int = 1
    draws: int = 1
    wage_scale: str = "log"
    methods: tuple[str, ...] = DEFAULT_METHODS
    covariates: tuple[str, ...] = ()
    eval_covariates: tuple[str, ...] = ("age^2", "log_size")
    min_uncensored: int = 200
    max_censor_share: float = 0.95
    sad_window_frac: float = 0.01
    sad_grid_step: float = 0.001
    sad_bandwidth: str = "silverman"
    profile_penalty: float = 0.002
    profile_min_quantile: float = 0.10
    profile_invert_weights: bool = False
    cqr_delta: float = 0.05
    cqr_zeta_mult: float = 0.05
    loom_dump: bool = False
    censor_rules: tuple[CensorRule, ...] = ()
    schema: dict[str, str] = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    def validate(self) -> None:
        if not self.methods:
            raise ConfigError("method set must not be empty")
        for m in self.methods:
            MethodSpec.parse(m)
        if self.draws < 1:
            raise ConfigError("draws must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.sad_bandwidth != "silverman":
            try:
                bw = float(self.sad_bandwidth)
            except ValueError as exc:
                raise ConfigError("sad_bandwidth must be 'silverman' or a number") from exc
            if bw <= 0:
                raise ConfigError("sad_bandwidth must be positive")

    @property
    def method_specs(self) -> list[MethodSpec]:
        return [MethodSpec.parse(m) for m in self.methods]

    def sad_params(self) -> SadParams:
        bw = None if self.sad_bandwidth == "silverman" else float(self.sad_bandwidth)
        return SadParams(
            window_frac=self.sad_window_frac, grid_step=self.sad_grid_step, bandwidth=bw
        )

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def canonical_text(self) -> str:
        """Stable text form used for the manifest hash."""
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            if f.name in ("base_dir",):
                continue
            val = getattr(self, f.name)
            if f.name == "censor_rules":
                for r in val:
                    lines.append(
                        f"censor_rule={r.year},{r.region},{r.upper_limit!r},{r.lower_limit!r}"
                    )
            elif f.name == "schema":
                for k in sorted(val):
                    lines.append(f"column.{k}={val[k]}")
            elif isinstance(val, tuple):
                lines.append(f"{f.name}={','.join(str(v) for v in val)}")
            else:
                lines.append(f"{f.name}={val}")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()


def _parse_rule(value: str) -> CensorRule:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) not in (3, 4):
        raise ConfigError(f"censor_rule needs 'year, region, upper[, lower]', got {value!r}")
    try:
        year = int(parts[0])
        upper = float(parts[2])
        lower = float(parts[3]) if len(parts) == 4 and parts[3] != "" else None
    except ValueError as exc:
        raise ConfigError(f"malformed censor_rule {value!r}") from exc
    return CensorRule(year=year, region=parts[1], upper_limit=upper, lower_limit=lower)


def parse_config_text(text: str, base_dir: Path) -> PipelineConfig:
    values: dict = {"censor_rules": [], "schema": {}, "base_dir": base_dir}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "censor_rule":
            values["censor_rules"].append(_parse_rule(value))
        elif key.startswith("column."):
            values["schema"][key[len("column."):]] = value
        elif key in _LIST_KEYS:
            values[key] = tuple(v.strip() for v in value.split(",") if v.strip())
        elif key in _SCALAR_KEYS:
            typ = _SCALAR_KEYS[key]
            try:
                if typ is bool:
                    values[key] = value.strip().lower() in ("1", "true", "yes", "on")
                else:
                    values[key] = typ(value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    values["censor_rules"] = tuple(values["censor_rules"])
    config = PipelineConfig(**values)
    config.validate()
    return config


def load_config(path) -> PipelineConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"), base_dir=p.parent.resolve())


def write_config(config: PipelineConfig, path) -> None:
    """Writes a config file that load_config parses back."""
    lines = []
    for key in ("input", "truth", "output_dir"):
        val = getattr(config, key)
        if val is not None:
            lines.append(f"{key} = {val}")
    lines.append(f"seed = {config.seed}")
    lines.append(f"workers = {config.workers}")
    lines.append(f"wage_scale = {config.wage_scale}")
    lines.append(f"methods = {', '.join(config.methods)}")
    if config.covariates:
        lines.append(f"covariates = {', '.join(config.covariates)}")
    lines.append(f"eval_covariates = {', '.join(config.eval_covariates)}")
    lines.append(f"min_uncensored = {config.min_uncensored}")
    lines.append(f"max_censor_share = {config.max_censor_share}")
    lines.append(f"sad_window_frac = {config.sad_window_frac}")
    lines.append(f"sad_grid_step = {config.sad_grid_step}")
    lines.append(f"sad_bandwidth = {config.sad_bandwidth}")
    for rule in config.censor_rules:
        tail = "" if rule.lower_limit is None else f", {rule.lower_limit!r}"
        lines.append(f"censor_rule = {rule.year}, {rule.region}, {rule.upper_limit!r}{tail}")
    for key in sorted(config.schema):
        lines.append(f"column.{key} = {config.schema[key]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

"""Layered run configuration: defaults < config file < flags.

The config file is INI-style (sections [sampler] and [backend]); defaults
match the best-performing inference settings (1 fps candidate pools,
256-frame windows, 256-frame prefilter). Environment variables override
nothing except the endpoint tokens (SCORER_TOKEN, ANNOTATOR_TOKEN), which
the backends read at request time.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields

from .errors import DataError

_SAMPLER_KEYS = {
    "sample_ratio": float,
    "window_capacity": int,
    "stride": int,
    "n_ctx": int,
    "emission_order": str,
    "parse_mode": str,
    "seed": int,
    "prefilter_k": int,
    "jobs": int,
    "on_error": str,
}

_BACKEND_KEYS = {
    "backend": str,
    "sim_backend": str,
    "scorer_endpoint": str,
    "embedder_endpoint": str,
    "annotator_endpoint": str,
    "model_id": str,
    "timeout_s": float,
    "retries": int,
    "template_dir": str,
}


@dataclass
class RunConfig:
    sample_ratio: float = 1.0
    window_capacity: int = 256
    stride: int | None = None
    n_ctx: int = 256
    emission_order: str = "chronological"
    parse_mode: str = "lenient"
    seed: int = 0
    prefilter_k: int = 256
    jobs: int = 4
    on_error: str = "skip"
    backend: str = "uniform"
    sim_backend: str = "hash"
    scorer_endpoint: str = ""
    embedder_endpoint: str = ""
    annotator_endpoint: str = ""
    model_id: str = "default"
    timeout_s: float = 60.0
    retries: int = 2
    template_dir: str | None = None

    def validate(self) -> None:
        if self.sample_ratio <= 0:
            raise DataError(f"sample_ratio must be > 0, got {self.sample_ratio}")
        if not 1 <= self.window_capacity <= 256:
            raise DataError(f"window_capacity must be in 1..256, got {self.window_capacity}")
        if self.stride is not None and not 1 <= self.stride <= self.window_capacity:
            raise DataError(f"stride must be in 1..window_capacity, got {self.stride}")
        if self.n_ctx < 1:
            raise DataError(f"n_ctx must be >= 1, got {self.n_ctx}")
        if self.emission_order not in ("chronological", "by_score"):
            raise DataError(f"unknown emission_order {self.emission_order!r}")
        if self.parse_mode not in ("strict", "lenient"):
            raise DataError(f"unknown parse_mode {self.parse_mode!r}")
        if self.prefilter_k < 1:
            raise DataError(f"prefilter_k must be >= 1, got {self.prefilter_k}")
        if self.jobs < 1:
            raise DataError(f"jobs must be >= 1, got {self.jobs}")
        if self.on_error not in ("skip", "fail"):
            raise DataError(f"unknown on_error policy {self.on_error!r}")
        if self.retries < 0:
            raise DataError(f"retries must be >= 0, got {self.retries}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _read_config_file(path: str) -> dict:
    parser = configparser.ConfigParser()
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise DataError(f"config file {path!r} does not exist or is unreadable")
    values: dict = {}
    for section, keys in (("sampler", _SAMPLER_KEYS), ("backend", _BACKEND_KEYS)):
        if not parser.has_section(section):
            continue
        for key, cast in keys.items():
            if parser.has_option(section, key):
                raw = parser.get(section, key).strip()
                if raw == "":
                    continue
                try:
                    values[key] = cast(raw)
                except ValueError as exc:
                    raise DataError(
                        f"config file {path!r}: bad value for {section}.{key}: {raw!r}"
                    ) from exc
    known = set(_SAMPLER_KEYS) | set(_BACKEND_KEYS)
    for section in parser.sections():
        if section not in ("sampler", "backend"):
            raise DataError(f"config file {path!r}: unknown section [{section}]")
        for key in parser.options(section):
            if key not in known:
                raise DataError(f"config file {path!r}: unknown key {section}.{key}")
    return values


def load_run_config(config_file: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Resolve the effective configuration.

    Precedence: command-line overrides > config file > defaults. Overrides
    with value None are treated as absent.
    """
    cfg = RunConfig()
    if config_file:
        for key, value in _read_config_file(config_file).items():
            setattr(cfg, key, value)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if not hasattr(cfg, key):
            raise DataError(f"unknown configuration key {key!r}")
        setattr(cfg, key, value)
    cfg.validate()
    return cfg

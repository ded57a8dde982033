"""Flat ``section.key = value`` run configuration.

Lines starting with ``#`` are comments.  Every key must be known; values are
validated before anything is computed.  :meth:`RunConfig.dumps` gives the
fully resolved config, which is embedded next to every output file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# key -> (default, kind); kinds: int, float, str, bool, ints, floats, auto_int, choice:<a|b>
SCHEMA: dict[str, tuple[str, str]] = {
    "backend": ("analytic", "choice:analytic|tinynet"),
    "model.seed": ("0", "int"),
    "model.channels": ("1", "int"),
    "model.height": ("16", "int"),
    "model.width": ("16", "int"),
    "model.d_h": ("16", "int"),
    "model.s2": ("0.05", "float"),
    "model.layout": ("split", "choice:split|blobs"),
    "model.n_confined": ("6", "int"),
    "model.widths": ("8,16", "ints"),
    "model.weights": ("", "str"),
    "schedule.T": ("50", "int"),
    "schedule.beta_start": ("0.0001", "float"),
    "schedule.beta_end": ("0.02", "float"),
    "schedule.eta": ("0", "float"),
    "mask.rect": ("4,4,6,6", "ints"),
    "mask.pgm": ("", "str"),
    "input.image": ("", "str"),
    "inversion.refine": ("1", "int"),
    "discovery.k": ("3", "int"),
    "discovery.k_u": ("auto", "auto_int"),
    "discovery.projection_mode": ("subspace", "choice:subspace|none|frobenius"),
    "discovery.fd_step": ("0.0001", "float"),
    "discovery.tol": ("1e-9", "float"),
    "discovery.max_iters": ("10000", "int"),
    "discovery.per_t": ("false", "bool"),
    "edit.alphas": ("-0.1,-0.05,0.05,0.1", "floats"),
    "edit.t_hi": ("auto", "auto_int"),
    "edit.t_lo": ("auto", "auto_int"),
    "edit.injection": ("asymmetric", "choice:asymmetric|symmetric"),
    "edit.direction_index": ("0", "int"),
    "edit.directions": ("", "str"),
    "seed": ("0", "int"),
    "out": ("out", "str"),
    "jobs": ("1", "int"),
}


class ConfigError(ValueError):
    pass


def _convert(key: str, raw: str, kind: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            v = float(raw)
            if not np.isfinite(v):
                raise ValueError("not finite")
            return v
        if kind == "str":
            return raw
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError("expected true/false")
            return low in ("true", "1", "yes")
        if kind == "ints":
            return tuple(int(p) for p in raw.split(",") if p.strip())
        if kind == "floats":
            return tuple(float(p) for p in raw.split(",") if p.strip())
        if kind == "auto_int":
            return None if raw.lower() == "auto" else int(raw)
        if kind.startswith("choice:"):
            options = kind.split(":", 1)[1].split("|")
            if raw not in options:
                raise ValueError(f"expected one of {options}")
            return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key}: cannot parse {raw!r} ({exc})") from None
    raise AssertionError(kind)


def _render(value, kind: str) -> str:
    if value is None:
        return "auto"
    if kind == "bool":
        return "true" if value else "false"
    if kind in ("ints", "floats"):
        return ",".join(repr(v) for v in value)
    if kind == "float":
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_pairs(cls, pairs: dict[str, str]) -> "RunConfig":
        unknown = sorted(set(pairs) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        raw = {k: d for k, (d, _) in SCHEMA.items()}
        raw.update(pairs)
        cfg = cls({k: _convert(k, raw[k], SCHEMA[k][1]) for k in SCHEMA})
        cfg.validate()
        return cfg

    @classmethod
    def parse(cls, text: str, overrides: dict | None = None) -> "RunConfig":
        pairs = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key = value, got {line!r}")
            key, val = (p.strip() for p in line.split("=", 1))
            if key in pairs:
                raise ConfigError(f"config line {lineno}: duplicate key {key}")
            pairs[key] = val
        pairs.update(overrides or {})
        return cls.from_pairs(pairs)

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "RunConfig":
        return cls.parse(Path(path).read_text(), overrides)

    def dumps(self) -> str:
        return "".join(f"{k} = {_render(self.values[k], SCHEMA[k][1])}\n" for k in SCHEMA)

    def lines(self) -> list[str]:
        return self.dumps().splitlines()

    def validate(self):
        v = self.values
        positives = ["model.channels", "model.height", "model.width", "model.d_h", "schedule.T",
                     "discovery.k", "discovery.max_iters", "jobs"]
        for key in positives:
            if v[key] < 1:
                raise ConfigError(f"config key {key}: must be >= 1, got {v[key]}")
        for key in ("seed", "model.seed", "inversion.refine", "edit.direction_index"):
            if v[key] < 0:
                raise ConfigError(f"config key {key}: must be >= 0")
        if not 0 <= v["model.n_confined"] <= v["model.d_h"]:
            raise ConfigError("config key model.n_confined: must lie in [0, model.d_h]")
        if v["model.s2"] <= 0:
            raise ConfigError("config key model.s2: must be positive")
        if not 0.0 < v["schedule.beta_start"] <= v["schedule.beta_end"] < 1.0:
            raise ConfigError("config keys schedule.beta_start/beta_end: need 0 < start <= end < 1")
        if not 0.0 <= v["schedule.eta"] <= 1.0:
            raise ConfigError("config key schedule.eta: must lie in [0, 1]")
        if not 1e-8 <= v["discovery.fd_step"] <= 1e-2:
            raise ConfigError("config key discovery.fd_step: must lie in [1e-8, 1e-2]")
        if v["discovery.tol"] <= 0:
            raise ConfigError("config key discovery.tol: must be positive")
        if v["discovery.k"] > v["model.d_h"]:
            raise ConfigError("config key discovery.k: exceeds model.d_h")
        if v["discovery.k_u"] is not None and not 1 <= v["discovery.k_u"] <= v["model.d_h"]:
            raise ConfigError("config key discovery.k_u: must lie in [1, model.d_h]")
        if len(v["mask.rect"]) != 4 and not v["mask.pgm"]:
            raise ConfigError("config key mask.rect: expected top,left,height,width")
        if len(v["model.widths"]) != 2:
            raise ConfigError("config key model.widths: expected two channel widths")
        T = v["schedule.T"]
        t_hi, t_lo = self.window()
        if not T >= t_hi > t_lo >= 0:
            raise ConfigError(f"config keys edit.t_hi/t_lo: window ({t_lo}, {t_hi}] outside 0..{T}")
        if v["backend"] == "tinynet" and (v["model.height"] % 4 or v["model.width"] % 4):
            raise ConfigError("config keys model.height/width: tinynet needs multiples of 4")

    def window(self) -> tuple[int, int]:
        from .pipeline import default_window

        hi, lo = default_window(self.values["schedule.T"])
        t_hi = hi if self.values["edit.t_hi"] is None else self.values["edit.t_hi"]
        t_lo = lo if self.values["edit.t_lo"] is None else self.values["edit.t_lo"]
        return t_hi, t_lo

    @property
    def image_shape(self) -> tuple:
        return self["model.channels"], self["model.height"], self["model.width"]


# ---------------------------------------------------------------- builders


def build_schedule(cfg: RunConfig):
    from .schedule import make_linear_schedule

    return make_linear_schedule(cfg["schedule.T"], cfg["schedule.beta_start"], cfg["schedule.beta_end"],
                                cfg["schedule.eta"])


def build_model(cfg: RunConfig, schedule):
    from . import models

    if cfg["backend"] == "analytic":
        if cfg["model.layout"] == "split":
            return models.split_blob_model(schedule, build_mask(cfg).bits, cfg["model.channels"], cfg["model.d_h"],
                                           cfg["model.n_confined"], cfg["model.s2"], cfg["model.seed"])
        return models.blob_analytic_model(schedule, cfg.image_shape, cfg["model.d_h"], cfg["model.s2"],
                                          cfg["model.seed"])
    if cfg["model.weights"]:
        model = models.load_weights(cfg["model.weights"])
        if model.image_shape != cfg.image_shape or model.d_h != cfg["model.d_h"]:
            raise ConfigError(
                f"weights file {cfg['model.weights']}: image shape {model.image_shape} / d_h {model.d_h} "
                f"disagree with config {cfg.image_shape} / {cfg['model.d_h']}")
        return model
    return models.init_random(cfg["model.seed"], cfg["model.d_h"], cfg.image_shape, cfg["model.widths"],
                              cfg["schedule.T"])


def build_mask(cfg: RunConfig):
    from .masks import load_mask_pgm, rect_mask

    if cfg["mask.pgm"]:
        m = load_mask_pgm(cfg["mask.pgm"])
        if m.shape != cfg.image_shape[1:]:
            raise ConfigError(f"mask {cfg['mask.pgm']}: shape {m.shape} != image {cfg.image_shape[1:]}")
        return m
    return rect_mask(cfg["model.height"], cfg["model.width"], *cfg["mask.rect"])


def build_input(cfg: RunConfig, model, schedule):
    """The image to edit: a raster file, or a deterministic sample from the model."""
    from .masks import load_image
    from .pipeline import generate
    from .rng import Rng

    if cfg["input.image"]:
        img = load_image(cfg["input.image"], cfg["model.channels"])
        if img.shape != cfg.image_shape:
            raise ConfigError(f"input image {cfg['input.image']}: shape {img.shape} != {cfg.image_shape}")
        return img
    x_T = Rng(cfg["seed"], stream=5).fill_gaussian(cfg.image_shape)
    return generate(model, schedule.with_eta(0.0), x_T)

"""Run configuration: a nested JSON document with one canonical serialization.

Example::

    {
      "arm": "full",
      "metric_scale": null,
      "out": "runs/demo",
      "scene": {"synth": {"C": 31, "C_m": 3, "H": 64, "W": 64, "r": 4,
                          "seed": 0, "texture": "gaussian-mixture"}},
      "train": {"alpha": 0.3, "lr": 0.0001, ...}
    }

``scene`` holds exactly one source: ``synth`` (generator parameters),
``manifest`` (path to a manifest written by ``adasr synth``), or ``files``
(cube paths: ``x`` alone, or ``y``/``z``/``m`` with optional ``x``). With
``files``, an ``srf`` entry is required and a ``psf`` entry is required
when only ``x`` is given.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

from .dataio import TEXTURES, Scene, read_cube, synth_scene
from .degradation import PsfSpec, SrfSpec, gaussian_psf
from .training import ARMS, TrainConfig


class ConfigError(ValueError):
    pass


SYNTH_DEFAULTS = {"W": 64, "H": 64, "C": 31, "C_m": 3, "r": 4, "seed": 0, "texture": "gaussian-mixture"}


@dataclass
class SceneSource:
    synth: Optional[dict] = None
    manifest: Optional[str] = None
    files: Optional[dict] = None
    srf: Optional[dict] = None
    psf: Optional[dict] = None

    def __post_init__(self):
        chosen = [k for k in ("synth", "manifest", "files") if getattr(self, k) is not None]
        if len(chosen) != 1:
            raise ConfigError(f"scene needs exactly one of synth/manifest/files, got {chosen or 'none'}")
        if self.synth is not None:
            extra = set(self.synth) - set(SYNTH_DEFAULTS)
            if extra:
                raise ConfigError(f"unknown synth keys: {sorted(extra)}")
            self.synth = {**SYNTH_DEFAULTS, **self.synth}
            if self.synth["texture"] not in TEXTURES:
                raise ConfigError(f"texture must be one of {TEXTURES}")
            for k in ("W", "H", "C", "C_m", "r"):
                if not isinstance(self.synth[k], int) or self.synth[k] < 1:
                    raise ConfigError(f"synth.{k} must be a positive integer")
            s = self.synth
            if s["W"] % s["r"] or s["H"] % s["r"]:
                raise ConfigError("synth W and H must be divisible by r")
            if s["C_m"] >= s["C"]:
                raise ConfigError("synth C_m must be smaller than C")
        if self.files is not None:
            keys = set(self.files)
            if not (keys == {"x"} or {"y", "z", "m"} <= keys <= {"x", "y", "z", "m"}):
                raise ConfigError("scene.files needs either x, or y/z/m (x optional)")
            if self.srf is None:
                raise ConfigError("scene.files needs an srf entry")
            if keys == {"x"} and self.psf is None:
                raise ConfigError("scene.files with only x needs a psf entry")
        try:
            if self.srf is not None:
                SrfSpec.from_dict(self.srf)
            if self.psf is not None:
                PsfSpec.from_dict(self.psf)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid srf/psf: {exc}") from None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSource":
        extra = set(d) - {"synth", "manifest", "files", "srf", "psf"}
        if extra:
            raise ConfigError(f"unknown scene keys: {sorted(extra)}")
        return cls(**d)

    def load(self, base_dir: str = ".") -> Scene:
        def p(path):
            return path if os.path.isabs(path) else os.path.join(base_dir, path)

        if self.synth is not None:
            return synth_scene(**self.synth)
        if self.manifest is not None:
            return load_manifest(p(self.manifest))
        srf = SrfSpec.from_dict(self.srf)
        psf = PsfSpec.from_dict(self.psf) if self.psf is not None else None
        if set(self.files) == {"x"}:
            return Scene.from_ground_truth(read_cube(p(self.files["x"])), srf, psf)
        y, z, m = (read_cube(p(self.files[k])) for k in ("y", "z", "m"))
        x = read_cube(p(self.files["x"])) if "x" in self.files else None
        if psf is None:
            psf = gaussian_psf(z.shape[0] // y.shape[0])
        return Scene(x=x, y=y, z=z, m=m, srf=srf, psf=psf)


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SceneSource = field(default_factory=lambda: SceneSource(synth=dict(SYNTH_DEFAULTS)))
    out: str = "runs/adasr"
    arm: str = "full"
    metric_scale: Optional[int] = None

    def __post_init__(self):
        if self.arm not in ARMS:
            raise ConfigError(f"arm must be one of {ARMS}, got {self.arm!r}")
        if self.metric_scale is not None and (not isinstance(self.metric_scale, int) or self.metric_scale < 1):
            raise ConfigError("metric_scale must be a positive integer")

    def to_dict(self) -> dict:
        return {
            "train": self.train.to_dict(),
            "scene": self.scene.to_dict(),
            "out": self.out,
            "arm": self.arm,
            "metric_scale": self.metric_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        extra = set(d) - {"train", "scene", "out", "arm", "metric_scale"}
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            train = TrainConfig.from_dict(d.get("train", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid train section: {exc}") from None
        scene = SceneSource.from_dict(d["scene"]) if "scene" in d else SceneSource(synth=dict(SYNTH_DEFAULTS))
        return cls(train=train, scene=scene, out=d.get("out", "runs/adasr"), arm=d.get("arm", "full"),
                   metric_scale=d.get("metric_scale"))


def dumps(config: RunConfig) -> str:
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"


def loads(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return RunConfig.from_dict(data)


def load(path: str) -> RunConfig:
    with open(path) as fh:
        return loads(fh.read())


def write_manifest(path: str, scene: Scene, files: dict, synth: Optional[dict] = None) -> None:
    doc = {"files": files, "srf": scene.srf.to_dict(), "psf": scene.psf.to_dict(),
           "shapes": {k: list(getattr(scene, k).shape) for k in ("x", "y", "z", "m")}}
    if synth is not None:
        doc["synth"] = synth
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str) -> Scene:
    """Rebuild a scene from its manifest: X from disk, Y/Z/M re-derived from the recorded SRF/PSF."""
    with open(path) as fh:
        doc = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    srf = SrfSpec.from_dict(doc["srf"])
    psf = PsfSpec.from_dict(doc["psf"])
    x = read_cube(os.path.join(base, doc["files"]["x"]))
    return Scene.from_ground_truth(x, srf, psf)

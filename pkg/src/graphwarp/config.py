"""Pipeline configuration: every tunable default in one place.

Config files are TOML or JSON with optional sections; anything omitted keeps
its default. The same structure is echoed into generated sequences and
evaluation reports so runs are reproducible from their outputs alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ParseError
from .geometry import Camera
from .losses import WeightParams
from .motion import ArapParams
from .pyramid import PyramidConfig
from .registration import EnergyWeights, SolverParams
from .synthetic import SynthConfig


@dataclass(frozen=True)
class SkinningConfig:
    k: int = 4
    radius: float = 0.08  # 2x the level-1 node interval

    def to_dict(self) -> dict:
        return {"k": int(self.k), "radius": float(self.radius)}


@dataclass(frozen=True)
class CorrespondenceConfig:
    visibility_tol: float = 0.02
    splat_radius: int = 1
    max_distance: float | None = 0.05

    def to_dict(self) -> dict:
        return {
            "visibility_tol": float(self.visibility_tol),
            "splat_radius": int(self.splat_radius),
            "max_distance": None if self.max_distance is None else float(self.max_distance),
        }


@dataclass
class Config:
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    weights: EnergyWeights = field(default_factory=EnergyWeights)
    solver: SolverParams = field(default_factory=SolverParams)
    arap: ArapParams = field(default_factory=ArapParams)
    confidence: WeightParams = field(default_factory=WeightParams)
    skinning: SkinningConfig = field(default_factory=SkinningConfig)
    correspondence: CorrespondenceConfig = field(default_factory=CorrespondenceConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def to_dict(self) -> dict:
        return {
            "pyramid": self.pyramid.to_dict(),
            "weights": self.weights.to_dict(),
            "solver": {
                "max_iters": int(self.solver.max_iters),
                "damping": float(self.solver.damping),
                "rel_tol": float(self.solver.rel_tol),
            },
            "arap": {
                "lambda_anchor": float(self.arap.lambda_anchor),
                "lambda_data": float(self.arap.lambda_data),
                "max_iters": int(self.arap.max_iters),
                "rel_tol": float(self.arap.rel_tol),
                "damping": float(self.arap.damping),
                "sigma_min": float(self.arap.sigma_min),
                "sigma_hop": float(self.arap.sigma_hop),
                "sigma_cap": float(self.arap.sigma_cap),
                "sigma_occluded": float(self.arap.sigma_occluded),
            },
            "confidence": {"k": float(self.confidence.k), "epsilon": float(self.confidence.epsilon)},
            "skinning": self.skinning.to_dict(),
            "correspondence": self.correspondence.to_dict(),
            "synth": self.synth.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        cfg = cls()
        if "pyramid" in d:
            p = d["pyramid"]
            cfg.pyramid = PyramidConfig(
                intervals=tuple(p.get("intervals", cfg.pyramid.intervals)),
                neighbor_counts=tuple(p.get("neighbor_counts", cfg.pyramid.neighbor_counts)),
                prune_threshold=float(p.get("prune_threshold", cfg.pyramid.prune_threshold)),
            )
        if "weights" in d:
            w = d["weights"]
            cfg.weights = EnergyWeights(
                lambda_depth=float(w.get("lambda_depth", cfg.weights.lambda_depth)),
                lambda_motion=float(w.get("lambda_motion", cfg.weights.lambda_motion)),
                lambda_2d=float(w.get("lambda_2d", cfg.weights.lambda_2d)),
                lambda_reg=float(w.get("lambda_reg", cfg.weights.lambda_reg)),
            )
        if "solver" in d:
            s = d["solver"]
            cfg.solver = SolverParams(
                max_iters=int(s.get("max_iters", cfg.solver.max_iters)),
                damping=float(s.get("damping", cfg.solver.damping)),
                rel_tol=float(s.get("rel_tol", cfg.solver.rel_tol)),
            )
        if "confidence" in d:
            c = d["confidence"]
            cfg.confidence = WeightParams(
                k=float(c.get("k", cfg.confidence.k)),
                epsilon=float(c.get("epsilon", cfg.confidence.epsilon)),
            )
        if "arap" in d:
            a = d["arap"]
            cfg.arap = ArapParams(
                lambda_anchor=float(a.get("lambda_anchor", cfg.arap.lambda_anchor)),
                lambda_data=float(a.get("lambda_data", cfg.arap.lambda_data)),
                max_iters=int(a.get("max_iters", cfg.arap.max_iters)),
                rel_tol=float(a.get("rel_tol", cfg.arap.rel_tol)),
                damping=float(a.get("damping", cfg.arap.damping)),
                sigma_min=float(a.get("sigma_min", cfg.arap.sigma_min)),
                sigma_hop=float(a.get("sigma_hop", cfg.arap.sigma_hop)),
                sigma_cap=float(a.get("sigma_cap", cfg.arap.sigma_cap)),
                sigma_occluded=float(a.get("sigma_occluded", cfg.arap.sigma_occluded)),
                weight_params=cfg.confidence,
            )
        else:
            cfg.arap = ArapParams(weight_params=cfg.confidence)
        if "skinning" in d:
            k = d["skinning"]
            cfg.skinning = SkinningConfig(
                k=int(k.get("k", cfg.skinning.k)),
                radius=float(k.get("radius", cfg.skinning.radius)),
            )
        if "correspondence" in d:
            c = d["correspondence"]
            md = c.get("max_distance", cfg.correspondence.max_distance)
            cfg.correspondence = CorrespondenceConfig(
                visibility_tol=float(c.get("visibility_tol", cfg.correspondence.visibility_tol)),
                splat_radius=int(c.get("splat_radius", cfg.correspondence.splat_radius)),
                max_distance=None if md is None else float(md),
            )
        if "synth" in d:
            s = d["synth"]
            cam = cfg.synth.camera
            if "camera" in s:
                cam = Camera.from_dict({**cam.to_dict(), **s["camera"]})
            rr = s.get("resize_range", cfg.synth.resize_range)
            cfg.synth = SynthConfig(
                camera=cam,
                margin=float(s.get("margin", cfg.synth.margin)),
                view_direction=tuple(s.get("view_direction", cfg.synth.view_direction)),
                splat_radius=int(s.get("splat_radius", cfg.synth.splat_radius)),
                visibility_tol=float(s.get("visibility_tol", cfg.synth.visibility_tol)),
                noise_sigma_max=float(s.get("noise_sigma_max", cfg.synth.noise_sigma_max)),
                resize_range=None if rr is None else tuple(rr),
            )
        return cfg


def load_config(path) -> Config:
    """Read a TOML or JSON config file (by extension)."""
    path = str(path)
    if path.endswith(".toml"):
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except Exception as exc:
            raise ParseError(str(exc), path=path) from None
    else:
        import json

        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), path=path) from None
    return Config.from_dict(data)

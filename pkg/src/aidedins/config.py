"""Run configuration: a single INI-style file with strictly validated keys."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from .cases import DEGENERATE_CASES, STANDARD_CASES, default_camera
from .features import ModelSet
from .measurements import GlobalMeasModel, PointSensorModel
from .propagation import NoiseParams
from .simulation import (
    FeatureSceneSpec,
    NoiseLevels,
    PriorSigmas,
    TrajectorySpec,
)


class ConfigError(ValueError):
    """Malformed configuration: unknown key, bad value or bad section."""


_SCHEMA = {
    "run": {"seed", "duration", "imu_rate", "cam_rate"},
    "trajectory": {"variant", "pos_amp", "pos_freq", "ang_amp", "ang_freq",
                   "base_vel", "accel", "spin_rate", "spin_amp", "spin_freq",
                   "target", "along", "range_amp", "range_freq"},
    "scene": {"points", "lines", "planes", "point_param", "plane_param",
              "parallel_lines", "line_parallel_plane", "lateral",
              "depth_min", "depth_max", "min_line_angle_deg"},
    "sensors": {"point_model", "focal", "f1", "f2", "c1", "c2", "baseline",
                "line_variant", "globals", "orientation_ref"},
    "noise": {"sigma_g", "sigma_wg", "sigma_a", "sigma_wa", "pixel_sigma",
              "range_sigma", "plane_sigma", "hesse_angle_sigma",
              "direction_sigma", "global_pos_sigma", "global_ori_sigma"},
    "prior": {"theta", "gyro_bias", "vel", "accel_bias", "pos", "feat_point",
              "feat_line", "feat_plane"},
    "filter": {"kind", "modes", "clone_window"},
    "observability": {"cases", "rank_case", "tol"},
    "mc": {"runs"},
}


def _floats(text):
    return tuple(float(x) for x in text.replace(",", " ").split())


@dataclass
class RunConfig:
    seed: int = 0
    traj: TrajectorySpec = field(default_factory=TrajectorySpec)
    scene: FeatureSceneSpec = field(default_factory=FeatureSceneSpec)
    models: ModelSet = field(default_factory=lambda: ModelSet(point=default_camera()))
    imu_noise: NoiseParams = field(default_factory=lambda: NoiseParams(
        sigma_g=1e-3, sigma_wg=1e-5, sigma_a=1e-2, sigma_wa=1e-4))
    levels: NoiseLevels = field(default_factory=NoiseLevels)
    priors: PriorSigmas = field(default_factory=PriorSigmas)
    filter_kind: str = "ekf_slam"
    modes: tuple = ("standard", "ideal")
    clone_window: int = 10
    obs_cases: tuple = tuple(STANDARD_CASES)
    rank_case: str = "single_plane"
    tol: float = 1e-8
    mc_runs: int = 50


def _validate_sections(parser: configparser.ConfigParser):
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"could not read config file {path!r}")
    _validate_sections(parser)
    cfg = RunConfig()
    try:
        return _populate(parser, cfg)
    except ConfigError:
        raise
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def _populate(p: configparser.ConfigParser, cfg: RunConfig) -> RunConfig:
    run = p["run"] if p.has_section("run") else {}
    cfg.seed = int(run.get("seed", cfg.seed))
    duration = float(run.get("duration", cfg.traj.duration))
    imu_rate = float(run.get("imu_rate", cfg.traj.imu_rate))
    cam_rate = float(run.get("cam_rate", cfg.traj.cam_rate))

    tkw = dict(duration=duration, imu_rate=imu_rate, cam_rate=cam_rate)
    if p.has_section("trajectory"):
        t = p["trajectory"]
        if "variant" in t:
            tkw["variant"] = t["variant"]
        for key in ("pos_amp", "pos_freq", "ang_amp", "ang_freq", "base_vel",
                    "accel", "target", "along"):
            if key in t:
                tkw[key] = _floats(t[key])
        for key in ("spin_rate", "spin_amp", "spin_freq", "range_amp",
                    "range_freq"):
            if key in t:
                tkw[key] = float(t[key])
    cfg.traj = TrajectorySpec(**tkw)

    if p.has_section("scene"):
        s = p["scene"]
        skw = {}
        for key in ("points", "lines", "planes"):
            if key in s:
                skw[key] = int(s[key])
        for key in ("point_param", "plane_param"):
            if key in s:
                skw[key] = s[key]
        for key in ("parallel_lines", "line_parallel_plane"):
            if key in s:
                skw[key] = s.getboolean(key)
        for key in ("lateral", "depth_min", "depth_max", "min_line_angle_deg"):
            if key in s:
                skw[key] = float(s[key])
        cfg.scene = FeatureSceneSpec(**skw)

    point = default_camera()
    line_variant = "projective"
    gmodels = ()
    if p.has_section("sensors"):
        s = p["sensors"]
        focal = float(s.get("focal", 460.0))
        kw = dict(variant=s.get("point_model", "mono"),
                  f1=float(s.get("f1", focal)), f2=float(s.get("f2", focal)),
                  c1=float(s.get("c1", 320.0)), c2=float(s.get("c2", 240.0)))
        if "baseline" in s:
            kw["baseline"] = float(s["baseline"])
        point = PointSensorModel(**kw)
        line_variant = s.get("line_variant", "projective")
        if "globals" in s:
            ref = _floats(s.get("orientation_ref", "1 0.2 0.3"))
            gmodels = tuple(
                GlobalMeasModel(v.strip()) if v.strip() != "orientation"
                else GlobalMeasModel("orientation", np.asarray(ref))
                for v in s["globals"].split(",") if v.strip())
    cfg.models = ModelSet(point=point, line_variant=line_variant,
                          globals=gmodels)

    if p.has_section("noise"):
        s = p["noise"]
        cfg.imu_noise = NoiseParams(
            sigma_g=float(s.get("sigma_g", 1e-3)),
            sigma_wg=float(s.get("sigma_wg", 1e-5)),
            sigma_a=float(s.get("sigma_a", 1e-2)),
            sigma_wa=float(s.get("sigma_wa", 1e-4)))
        lkw = {}
        for key in ("pixel_sigma", "range_sigma", "plane_sigma",
                    "hesse_angle_sigma", "direction_sigma",
                    "global_pos_sigma", "global_ori_sigma"):
            if key in s:
                lkw[key] = float(s[key])
        cfg.levels = NoiseLevels(**lkw)

    if p.has_section("prior"):
        s = p["prior"]
        pkw = {k: float(s[k]) for k in s}
        cfg.priors = PriorSigmas(**pkw)

    if p.has_section("filter"):
        s = p["filter"]
        cfg.filter_kind = s.get("kind", cfg.filter_kind)
        if cfg.filter_kind not in ("ekf_slam", "msckf"):
            raise ConfigError(f"unknown filter kind {cfg.filter_kind!r}")
        if "modes" in s:
            cfg.modes = tuple(m.strip() for m in s["modes"].split(",")
                              if m.strip())
            for m in cfg.modes:
                if m not in ("standard", "ideal"):
                    raise ConfigError(f"unknown filter mode {m!r}")
        cfg.clone_window = int(s.get("clone_window", cfg.clone_window))

    if p.has_section("observability"):
        s = p["observability"]
        if "cases" in s and s["cases"].strip() != "all":
            cases = tuple(c.strip() for c in s["cases"].split(",") if c.strip())
            for c in cases:
                if c not in STANDARD_CASES:
                    raise ConfigError(f"unknown observability case {c!r}")
            cfg.obs_cases = cases
        cfg.rank_case = s.get("rank_case", cfg.rank_case)
        if cfg.rank_case not in STANDARD_CASES:
            raise ConfigError(f"unknown rank case {cfg.rank_case!r}")
        cfg.tol = float(s.get("tol", cfg.tol))

    if p.has_section("mc"):
        cfg.mc_runs = int(p["mc"].get("runs", cfg.mc_runs))
        if cfg.mc_runs < 1:
            raise ConfigError("mc runs must be positive")
    return cfg

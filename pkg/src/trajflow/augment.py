"""Scenario-level augmentation: target identity swap plus four geometric
transforms applied identically to agent states, ground-truth futures, and
map geometry.

`sample_augmentation` only draws numbers (a declarative, JSON-serializable
record); `apply_augmentation` realizes a record against a concrete scene, so
any training batch can be replayed from its logged draws.
"""

import dataclasses

import numpy as np

from .scenario import T_HISTORY, SHEADING, SSPEED, copy_scenario, wrap_angle


@dataclasses.dataclass
class AugmentConfig:
    p_flip: float = 0.5
    translation_range: float = 3.0
    rotation_range: float = np.pi / 6.0
    resize_range: tuple = (0.8, 1.2)
    p_agent_swap: float = 0.3
    seed: int = 0

    def validate(self):
        for name in ("p_flip", "p_agent_swap"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.translation_range < 0.0 or self.rotation_range < 0.0:
            raise ValueError("ranges must be non-negative")
        if not self.resize_range[0] <= self.resize_range[1]:
            raise ValueError("resize_range must be ordered")
        return self


def translate(s, d):
    """Shift every coordinate by d; headings and speeds unchanged."""
    d = np.asarray(d, dtype=np.float64)
    out = copy_scenario(s)
    for a in out.agents:
        a.states[:, :2] += d
    for m in out.map:
        m.points = m.points + d
    return out


def rotate(s, theta):
    """Rotate all coordinates about the origin by theta; headings follow."""
    c, sn = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -sn], [sn, c]])
    out = copy_scenario(s)
    for a in out.agents:
        a.states[:, :2] = a.states[:, :2] @ rot.T
        a.states[:, SHEADING] = wrap_angle(a.states[:, SHEADING] + theta)
    for m in out.map:
        m.points = m.points @ rot.T
    return out


def flip_y(s):
    """Mirror across the y axis: x -> -x, heading -> wrap(pi - heading)."""
    out = copy_scenario(s)
    for a in out.agents:
        a.states[:, 0] = -a.states[:, 0]
        a.states[:, SHEADING] = wrap_angle(np.pi - a.states[:, SHEADING])
    for m in out.map:
        m.points[:, 0] = -m.points[:, 0]
    return out


def resize(s, c):
    """Scale the scene about the origin; speeds scale too, keeping the
    position/velocity relation truthful."""
    out = copy_scenario(s)
    for a in out.agents:
        a.states[:, :2] *= c
        a.states[:, SSPEED] *= c
    for m in out.map:
        m.points = m.points * c
    return out


def swap_eligible(s):
    """Agents that may become the target: full valid history, sorted by id."""
    return sorted(
        a.id
        for a in s.agents
        if a.id != s.target_id and (a.states[:T_HISTORY, 4] > 0.0).all()
    )


def agent_swap(s, new_target):
    ids = {a.id for a in s.agents}
    if new_target not in ids:
        raise ValueError(f"swap target {new_target!r} not in scenario {s.scenario_id!r}")
    track = next(a for a in s.agents if a.id == new_target)
    if not (track.states[:T_HISTORY, 4] > 0.0).all():
        raise ValueError(
            f"swap target {new_target!r} lacks a fully valid history in {s.scenario_id!r}"
        )
    out = copy_scenario(s)
    out.target_id = new_target
    return out


def sample_augmentation(cfg, rng):
    """Draw one declarative augmentation record.

    The rng consumption is fixed (every field is always drawn) so records
    stay aligned however the coins land.
    """
    record = {
        "translation": list(rng.uniform(-cfg.translation_range, cfg.translation_range, size=2)),
        "rotation": float(rng.uniform(-cfg.rotation_range, cfg.rotation_range)),
        "flip": bool(rng.random() < cfg.p_flip),
        "resize": float(rng.uniform(*cfg.resize_range)),
        "swap": bool(rng.random() < cfg.p_agent_swap),
        "swap_u": float(rng.random()),
    }
    return record


def apply_augmentation(s, record):
    """Realize a draw record: swap (if any), then flip, resize, rotate,
    translate, in that fixed order.  Resolves the swap choice against the
    scene's eligible agents and writes it back as record["swap_target"]."""
    out = s
    record["swap_target"] = None
    if record["swap"]:
        eligible = swap_eligible(out)
        if eligible:
            pick = eligible[min(int(record["swap_u"] * len(eligible)), len(eligible) - 1)]
            out = agent_swap(out, pick)
            record["swap_target"] = pick
    if record["flip"]:
        out = flip_y(out)
    out = resize(out, record["resize"])
    out = rotate(out, record["rotation"])
    out = translate(out, record["translation"])
    return out

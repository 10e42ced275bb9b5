"""Scenario data model, JSONL persistence, target-centric normalization,
radius filtering, synthetic corpus generation, and tensorization.

A scenario is an 11-second scene at 10 Hz: 50 history frames are model
input, 60 future frames are ground truth.  All geometry lives in a 2D
bird's-eye plane, headings in radians wrapped to (-pi, pi].
"""

import dataclasses
import json

import numpy as np

T_HISTORY = 50
T_FUTURE = 60
T_TOTAL = T_HISTORY + T_FUTURE
DT = 0.1
ANCHOR_FRAME = T_HISTORY - 1  # most recent observed frame, the scene origin

# state row layout
SX, SY, SHEADING, SSPEED, SVALID = range(5)

POLYLINE_KINDS = ("lane-center", "boundary")
SCHEMA_VERSION = 1


@dataclasses.dataclass(eq=False)
class AgentTrack:
    id: str
    states: np.ndarray  # [T_TOTAL, 5] rows (x, y, heading, speed, valid)


@dataclasses.dataclass(eq=False)
class MapPolyline:
    id: str
    kind: str
    points: np.ndarray  # [n, 2]


@dataclasses.dataclass(eq=False)
class Scenario:
    scenario_id: str
    target_id: str
    agents: list
    map: list


@dataclasses.dataclass(eq=False)
class NormalizedScene(Scenario):
    # applied world->scene transform: p' = R(rotation) p + translation
    rotation: float = 0.0
    translation: np.ndarray = None


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a), 2.0 * np.pi)


def _rot(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def transform_points(points, rotation, translation):
    return points @ _rot(rotation).T + translation


def copy_scenario(s):
    agents = [AgentTrack(a.id, a.states.copy()) for a in s.agents]
    polys = [MapPolyline(m.id, m.kind, m.points.copy()) for m in s.map]
    if isinstance(s, NormalizedScene):
        return NormalizedScene(
            s.scenario_id, s.target_id, agents, polys, s.rotation, np.array(s.translation)
        )
    return Scenario(s.scenario_id, s.target_id, agents, polys)


def target_track(s):
    for a in s.agents:
        if a.id == s.target_id:
            return a
    raise ValueError(f"target agent {s.target_id!r} not in scenario {s.scenario_id!r}")


# -- normalization ------------------------------------------------------------

_STATIONARY_DIST = 0.1


def _target_direction(track):
    """Direction the scene is aligned against: heading at the anchor frame,
    falling back for near-stationary targets to the whole-history
    displacement, then to +X."""
    xy = track.states[:, :2]
    recent = np.linalg.norm(xy[ANCHOR_FRAME] - xy[ANCHOR_FRAME - 10])
    if recent >= _STATIONARY_DIST:
        return float(track.states[ANCHOR_FRAME, SHEADING])
    total = xy[ANCHOR_FRAME] - xy[0]
    if np.linalg.norm(total) >= _STATIONARY_DIST:
        return float(np.arctan2(total[1], total[0]))
    return 0.0


def normalize(s):
    """Re-express the scene in the target frame: anchor-frame position at the
    origin, travel direction along +X, identical rigid motion everywhere."""
    tgt = target_track(s)
    if tgt.states[ANCHOR_FRAME, SVALID] == 0.0:
        raise ValueError(f"target of {s.scenario_id!r} invalid at the anchor frame")
    origin = tgt.states[ANCHOR_FRAME, :2].copy()
    rotation = -_target_direction(tgt)
    translation = -(_rot(rotation) @ origin)
    out = copy_scenario(s)
    for a in out.agents:
        a.states[:, :2] = transform_points(a.states[:, :2], rotation, translation)
        a.states[:, SHEADING] = wrap_angle(a.states[:, SHEADING] + rotation)
    for m in out.map:
        m.points = transform_points(m.points, rotation, translation)
    return NormalizedScene(
        out.scenario_id, out.target_id, out.agents, out.map, rotation, translation
    )


def denormalize_points(ns, points):
    """Invert the stored transform, mapping scene coordinates back to world."""
    return (np.asarray(points) - ns.translation) @ _rot(-ns.rotation).T


# -- filtering ----------------------------------------------------------------


def _agent_distance(track):
    valid = track.states[:, SVALID] > 0.0
    if not valid.any():
        return np.inf
    return float(np.linalg.norm(track.states[valid, :2], axis=1).min())


def filter_radius(ns, radius=100.0):
    """Drop agents and polylines farther than `radius` from the origin
    (minimum over valid frames / vertices); the target is always kept.
    Agents without a single valid history frame are dropped too."""
    agents = []
    for a in ns.agents:
        if a.id == ns.target_id:
            agents.append(a)
            continue
        if not (a.states[:T_HISTORY, SVALID] > 0.0).any():
            continue
        if _agent_distance(a) <= radius:
            agents.append(a)
    polys = [m for m in ns.map if np.linalg.norm(m.points, axis=1).min() <= radius]
    return NormalizedScene(
        ns.scenario_id, ns.target_id, agents, polys, ns.rotation, ns.translation
    )


# -- synthetic corpus ---------------------------------------------------------


@dataclasses.dataclass
class GeneratorConfig:
    speed_range: tuple = (0.0, 15.0)
    curvature_range: tuple = (-0.1, 0.1)
    noise_sigma: float = 0.05
    partial_track_prob: float = 0.3  # non-target agents observed only in a window
    heading_jitter: float = 0.05
    curvature_jitter: float = 0.005
    lane_step: float = 5.0
    lane_points: int = 25
    spawn_radius: float = 30.0


def _arc_step(x, y, heading, speed, curvature, dt):
    """Advance one frame along a constant-speed, constant-curvature arc."""
    dtheta = curvature * speed * dt
    if curvature == 0.0:
        nx = x + speed * dt * np.cos(heading)
        ny = y + speed * dt * np.sin(heading)
    else:
        chord = 2.0 / curvature * np.sin(dtheta / 2.0)
        nx = x + chord * np.cos(heading + dtheta / 2.0)
        ny = y + chord * np.sin(heading + dtheta / 2.0)
    nh = heading + dtheta
    if nh > np.pi or nh <= -np.pi:  # wrap only when needed, it rounds otherwise
        nh = float(wrap_angle(nh))
    return nx, ny, nh


def _roll_track(rng, start, heading, speed, curvature, n, noise_sigma):
    states = np.zeros((n, 5))
    x, y, th = float(start[0]), float(start[1]), float(heading)
    for t in range(n):
        states[t] = (x, y, th, speed, 1.0)
        x, y, th = _arc_step(x, y, th, speed, curvature, DT)
    if noise_sigma > 0.0:
        states[:, :2] += rng.normal(0.0, noise_sigma, size=(n, 2))
    return states


def _make_lane(rng, lane_id, cfg):
    start = rng.uniform(-cfg.spawn_radius, cfg.spawn_radius, size=2)
    heading = rng.uniform(-np.pi, np.pi)
    curvature = rng.uniform(*cfg.curvature_range)
    pts = np.zeros((cfg.lane_points, 2))
    x, y, th = float(start[0]), float(start[1]), heading
    step_dt = cfg.lane_step  # reuse the arc stepper with speed 1, dt = step
    for i in range(cfg.lane_points):
        pts[i] = (x, y)
        x, y, th = _arc_step(x, y, th, 1.0, curvature, step_dt)
    return MapPolyline(lane_id, "lane-center", pts), heading, curvature


def _lane_offset(points, offset):
    deltas = np.diff(points, axis=0)
    deltas = np.vstack([deltas, deltas[-1:]])
    normals = np.stack([-deltas[:, 1], deltas[:, 0]], axis=1)
    normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-9)
    return points + offset * normals


def generate_one(seed, index, n_agents, n_lanes, cfg=None):
    """One synthetic scenario; deterministic in (seed, index)."""
    cfg = cfg or GeneratorConfig()
    rng = np.random.default_rng([seed, index])
    lanes = []
    lane_geo = []
    for li in range(n_lanes):
        lane, heading, curvature = _make_lane(rng, f"lane{li:02d}", cfg)
        lanes.append(lane)
        lane_geo.append((lane.points, heading, curvature))
    polys = list(lanes)
    for li in range(0, n_lanes, 2):
        polys.append(
            MapPolyline(f"edge{li:02d}", "boundary", _lane_offset(lanes[li].points, 1.75))
        )

    agents = []
    for ai in range(n_agents):
        if lane_geo:
            pts, heading, curvature = lane_geo[int(rng.integers(len(lane_geo)))]
            k = int(rng.integers(len(pts) // 2))
            start = pts[k] + rng.normal(0.0, 0.5, size=2)
            heading = heading if k == 0 else float(
                np.arctan2(*(pts[k] - pts[k - 1])[::-1])
            )
            heading += float(rng.normal(0.0, cfg.heading_jitter))
            curvature += float(rng.normal(0.0, cfg.curvature_jitter))
            curvature = float(np.clip(curvature, *cfg.curvature_range))
        else:
            start = rng.uniform(-cfg.spawn_radius, cfg.spawn_radius, size=2)
            heading = float(rng.uniform(-np.pi, np.pi))
            curvature = float(rng.uniform(*cfg.curvature_range))
        speed = float(rng.uniform(*cfg.speed_range))
        if ai == 0:
            speed = max(speed, 1.0)  # the target must move
        states = _roll_track(rng, start, heading, speed, curvature, T_TOTAL, cfg.noise_sigma)
        if ai > 0 and rng.random() < cfg.partial_track_prob:
            t0 = int(rng.integers(0, 41))
            t1 = int(rng.integers(70, T_TOTAL + 1))
            states[:t0, SVALID] = 0.0
            states[t1:, SVALID] = 0.0
        agents.append(AgentTrack(f"a{ai:02d}", states))

    return Scenario(f"synth-{seed}-{index:05d}", "a00", agents, polys)


def generate_synthetic(seed, n_scenarios, n_agents=8, n_lanes=6, cfg=None):
    if n_scenarios < 1 or n_agents < 1:
        raise ValueError("need at least one scenario and one agent")
    return [generate_one(seed, i, n_agents, n_lanes, cfg) for i in range(n_scenarios)]


# -- persistence ----------------------------------------------------------------


def _scenario_to_dict(s):
    return {
        "version": SCHEMA_VERSION,
        "scenario_id": s.scenario_id,
        "target_id": s.target_id,
        "agents": [{"id": a.id, "states": a.states.tolist()} for a in s.agents],
        "map": [
            {"id": m.id, "kind": m.kind, "points": m.points.tolist()} for m in s.map
        ],
    }


def _scenario_from_dict(d):
    version = d.get("version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"schema version {version!r}, expected {SCHEMA_VERSION}")
    agents = []
    for a in d["agents"]:
        states = np.asarray(a["states"], dtype=np.float64)
        if states.shape != (T_TOTAL, 5):
            raise ValueError(f"agent {a['id']!r} has states of shape {states.shape}")
        agents.append(AgentTrack(str(a["id"]), states))
    polys = []
    for m in d["map"]:
        pts = np.asarray(m["points"], dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError(f"polyline {m['id']!r} needs >= 2 2-d points")
        if m["kind"] not in POLYLINE_KINDS:
            raise ValueError(f"polyline {m['id']!r} has unknown kind {m['kind']!r}")
        polys.append(MapPolyline(str(m["id"]), str(m["kind"]), pts))
    s = Scenario(str(d["scenario_id"]), str(d["target_id"]), agents, polys)
    target_track(s)  # existence check
    return s


def save_jsonl(corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in corpus:
            fh.write(json.dumps(_scenario_to_dict(s), separators=(",", ":")))
            fh.write("\n")


def load_jsonl(path):
    corpus = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                corpus.append(_scenario_from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: malformed scenario: {e}") from e
    return corpus


# -- tensorization ----------------------------------------------------------------


def resample_polyline(points, p=10):
    """Uniform arc-length resampling to `p` points, endpoints preserved."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0.0:
        return np.repeat(points[:1], p, axis=0)
    s = np.linspace(0.0, total, p)
    return np.stack([np.interp(s, cum, points[:, 0]), np.interp(s, cum, points[:, 1])], axis=1)


def _agent_sort_key(ns):
    def key(a):
        anchored = a.states[ANCHOR_FRAME, SVALID] > 0.0
        dist = np.linalg.norm(a.states[ANCHOR_FRAME, :2]) if anchored else np.inf
        return (a.id != ns.target_id, not anchored, dist, a.id)

    return key


def to_model_tensors(ns, a_max, m_max, p=10):
    """Pack a normalized, filtered scene into fixed-capacity model inputs.

    Agents are sorted by anchor-frame distance to the origin (target first,
    ties by id), clipped to `a_max`, zero-padded.  Polylines are resampled to
    `p` points, the `m_max` nearest kept.  Returns
    (agents [a_max, T_h, 6], map [m_max, p, 6], masks) with agent features
    (x, y, cos h, sin h, speed, valid) and map features (x, y, dx, dy, kind one-hot).
    """
    if a_max < 1:
        raise ValueError("a_max must be >= 1")
    agents = sorted(ns.agents, key=_agent_sort_key(ns))[:a_max]
    agent_feat = np.zeros((a_max, T_HISTORY, 6))
    agent_mask = np.zeros((a_max, T_HISTORY), dtype=bool)
    for i, a in enumerate(agents):
        hist = a.states[:T_HISTORY]
        valid = hist[:, SVALID] > 0.0
        agent_mask[i] = valid
        feat = np.stack(
            [
                hist[:, SX],
                hist[:, SY],
                np.cos(hist[:, SHEADING]),
                np.sin(hist[:, SHEADING]),
                hist[:, SSPEED],
                valid.astype(np.float64),
            ],
            axis=1,
        )
        feat[~valid] = 0.0
        agent_feat[i] = feat

    polys = sorted(
        ns.map, key=lambda m: (float(np.linalg.norm(m.points, axis=1).min()), m.id)
    )[:m_max]
    map_feat = np.zeros((m_max, p, 6))
    map_mask = np.zeros(m_max, dtype=bool)
    kind_hot = {k: np.eye(2)[i] for i, k in enumerate(POLYLINE_KINDS)}
    for i, m in enumerate(polys):
        pts = resample_polyline(m.points, p)
        deltas = np.vstack([np.diff(pts, axis=0), np.zeros((1, 2))])
        if p > 1:
            deltas[-1] = deltas[-2]
        map_feat[i] = np.concatenate(
            [pts, deltas, np.broadcast_to(kind_hot[m.kind], (p, 2))], axis=1
        )
        map_mask[i] = True

    return agent_feat, map_feat, {"agent": agent_mask, "map": map_mask}


def target_future(s):
    """Ground-truth future of the target: positions [T_f, 2] and validity."""
    tgt = target_track(s)
    fut = tgt.states[T_HISTORY:]
    return fut[:, :2].copy(), fut[:, SVALID] > 0.0

"""Synthetic turning-episode simulator.

Kinematic agents move through a fixed intersection layout: one target
vehicle follows an entry-arc-exit turning path while pedestrians/cyclists
cross or bypass the exit road, and background traffic passes in the
through lane. Episodes are rendered into per-class occupancy rasters
(one binary channel per road-user group) and dense-motion rasters
(orientation / saturation / magnitude, HSV-style).

All layout quantities are fractions of the frame size, so the same
(config, seed) pair produces geometrically similar episodes at any
resolution and the interaction label depends only on the trajectories.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import BoundsError, ConfigurationError, DataError

TWO_PI = 2.0 * math.pi

OBJECT_CHANNELS = 4
FLOW_CHANNELS = 3

FORMAT_VERSION = 1


class AgentClass(Enum):
    """Road-user groups; the enum value is the occupancy-channel index."""

    PEDESTRIAN = 0
    BIKE_MOTOR = 1
    CAR_TRUCK = 2
    BUS = 3


VRU_CLASSES = (AgentClass.PEDESTRIAN, AgentClass.BIKE_MOTOR)
VEHICLE_CLASSES = (AgentClass.CAR_TRUCK, AgentClass.BUS)


class InteractionLabel(Enum):
    NON_INTERACTION = 0
    INTERACTION = 1

    @property
    def one_hot(self) -> np.ndarray:
        vec = np.zeros(2, dtype=np.float32)
        vec[self.value] = 1.0
        return vec

    @classmethod
    def from_name(cls, name: str) -> "InteractionLabel":
        return cls[name.upper()]


@dataclass(frozen=True)
class AgentState:
    """Single-step snapshot of one agent (pixel units, velocity px/step)."""

    agent_class: AgentClass
    center: np.ndarray
    box_extent: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        if not np.all(np.asarray(self.box_extent) > 0):
            raise ConfigurationError(f"box_extent must be positive, got {self.box_extent}")


@dataclass
class AgentTrack:
    """One agent's trajectory: centers/velocities per step, extents per step."""

    agent_class: AgentClass
    centers: np.ndarray      # (T, 2) float64
    extents: np.ndarray      # (T, 2) float64, axis-aligned box width/height
    velocities: np.ndarray   # (T, 2) float64, velocities[t] = centers[t+1] - centers[t]

    def state_at(self, t: int) -> AgentState:
        return AgentState(self.agent_class, self.centers[t], self.extents[t], self.velocities[t])

    def box_bounds(self, t: int) -> tuple[int, int, int, int]:
        """Inclusive integer pixel bounds (x0, x1, y0, y1) of the box at step t."""
        cx, cy = self.centers[t]
        ex, ey = self.extents[t]
        x0 = int(round(cx - ex / 2.0))
        x1 = int(round(cx + ex / 2.0))
        y0 = int(round(cy - ey / 2.0))
        y1 = int(round(cy + ey / 2.0))
        return x0, x1, y0, y1


@dataclass
class RegionMask:
    """Binary turning-region mask over the (W, H) pixel grid."""

    grid: np.ndarray  # (W, H) bool

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=bool)
        if self.grid.ndim != 2 or not self.grid.any():
            raise ConfigurationError("region mask must be a nonempty 2D grid")
        _, n_components = ndimage.label(self.grid)
        if n_components != 1:
            raise ConfigurationError(f"region mask must be connected, found {n_components} components")

    @property
    def bbox_diagonal(self) -> float:
        xs, ys = np.nonzero(self.grid)
        return math.hypot(xs.max() - xs.min() + 1, ys.max() - ys.min() + 1)

    def contains(self, x: float, y: float) -> bool:
        xi, yi = int(round(x)), int(round(y))
        w, h = self.grid.shape
        if 0 <= xi < w and 0 <= yi < h:
            return bool(self.grid[xi, yi])
        return False


@dataclass(frozen=True)
class LabelRule:
    """Interaction rule: deceleration below threshold while a VRU is near the
    vehicle's remaining path.

    speed_drop: relative drop w.r.t. the observed free-flow (max) speed.
    conflict_frac: conflict distance as a fraction of the mask bbox diagonal.
    """

    speed_drop: float = 0.30
    conflict_frac: float = 0.25


@dataclass
class ScenarioConfig:
    """Generator knobs. Distances/speeds are fractions of frame width (or
    height where noted) per step, so labels are resolution-invariant."""

    frame_size: tuple[int, int] = (128, 96)   # (W, H) pixels
    step_rate: float = 12.5                   # steps per second
    steps: tuple[int, int] = (40, 80)         # target free-flow journey duration range
    turn: str = "right"                       # "right" or "left" (mirrored geometry)
    intent: str = "non_interaction"           # class the generator aims for
    vru_count: tuple[int, int] = (1, 3)
    vehicle_speed: tuple[float, float] = (0.045, 0.065)  # fraction of W per step
    vru_speed: tuple[float, float] = (0.012, 0.020)      # fraction of W per step
    ambiguity: float = 0.0                    # 0 = clearly separated, 1 = borderline
    through_traffic: tuple[int, int] = (0, 2)
    v_cap: float = 8.0                        # px/step cap for motion-magnitude encoding
    label_rule: LabelRule = field(default_factory=LabelRule)

    def validate(self):
        w, h = self.frame_size
        if w < 8 or h < 8:
            raise ConfigurationError(f"frame_size too small: {self.frame_size}")
        if self.step_rate <= 0:
            raise ConfigurationError("step_rate must be positive")
        if self.steps[0] < 4 or self.steps[1] < self.steps[0]:
            raise ConfigurationError(f"invalid steps range {self.steps}")
        if self.turn not in ("right", "left"):
            raise ConfigurationError(f"turn must be 'right' or 'left', got {self.turn!r}")
        if self.intent not in ("interaction", "non_interaction"):
            raise ConfigurationError(f"invalid intent {self.intent!r}")
        if self.vru_count[0] < 0 or self.vru_count[1] < self.vru_count[0]:
            raise ConfigurationError(f"invalid vru_count range {self.vru_count}")
        if self.intent == "interaction" and self.vru_count[1] < 1:
            raise ConfigurationError("interaction intent requires at least one VRU")
        if not (0.0 <= self.ambiguity <= 1.0):
            raise ConfigurationError("ambiguity must be in [0, 1]")
        if self.v_cap <= 0:
            raise ConfigurationError("v_cap must be positive")


@dataclass
class Scenario:
    """A fully simulated turning episode."""

    agents: list[AgentTrack]
    vehicle_index: int
    region_mask: RegionMask
    steps: int
    step_rate: float
    metadata: dict = field(default_factory=dict)

    def boxes_at(self, t: int) -> list[tuple[AgentClass, tuple[int, int, int, int]]]:
        return [(a.agent_class, a.box_bounds(t)) for a in self.agents]


# ---------------------------------------------------------------------------
# Intersection layout (canonical right turn; left turn mirrors x)
# ---------------------------------------------------------------------------

class _Layout:
    """Turning path and fixed landmarks, all in pixels for a given frame."""

    def __init__(self, w: int, h: int):
        self.w, self.h = w, h
        self.y_through = 0.20 * h
        self.y_entry = 0.42 * h
        self.x_exit = 0.60 * w
        self.radius = 0.16 * w
        self.arc_start_x = self.x_exit - self.radius   # turn begins here
        self.arc_center = (self.arc_start_x, self.y_entry + self.radius)
        self.y_arc_end = self.y_entry + self.radius
        self.y_cross = min(0.80 * h, self.y_arc_end + 0.22 * h)  # crossing line on exit road
        self.road_half = 0.07 * w
        self.x_path_start = 0.06 * w
        self.y_path_end = 1.10 * h  # beyond the frame: vehicle fully exits

        self.len_entry = self.arc_start_x - self.x_path_start
        self.len_arc = self.radius * math.pi / 2.0
        self.len_exit = self.y_path_end - self.y_arc_end
        self.total_len = self.len_entry + self.len_arc + self.len_exit
        # conflict point: where the exit leg crosses the crossing line
        self.s_conflict = self.len_entry + self.len_arc + (self.y_cross - self.y_arc_end)

    def point(self, s: float) -> tuple[float, float]:
        # the exit leg extends past total_len so the vehicle keeps its speed
        # while leaving the frame instead of parking at the path end
        s = max(s, 0.0)
        if s <= self.len_entry:
            return (self.x_path_start + s, self.y_entry)
        if s <= self.len_entry + self.len_arc:
            phi = (s - self.len_entry) / self.radius
            cx, cy = self.arc_center
            return (cx + self.radius * math.sin(phi), cy - self.radius * math.cos(phi))
        return (self.x_exit, self.y_arc_end + (s - self.len_entry - self.len_arc))

    def heading(self, s: float) -> tuple[float, float]:
        if s <= self.len_entry:
            return (1.0, 0.0)
        if s <= self.len_entry + self.len_arc:
            phi = (s - self.len_entry) / self.radius
            return (math.cos(phi), math.sin(phi))
        return (0.0, 1.0)

    def mask(self) -> RegionMask:
        grid = np.zeros((self.w, self.h), dtype=bool)
        x0 = int(round(self.arc_start_x - 0.06 * self.w))
        x1 = int(round(self.x_exit + self.road_half + 0.10 * self.w))
        y0 = int(round(self.y_entry - 0.10 * self.h))
        y1 = int(round(self.y_cross + 0.08 * self.h))
        grid[max(x0, 0):min(x1, self.w), max(y0, 0):min(y1, self.h)] = True
        return RegionMask(grid)


def _mirror_x(track: AgentTrack, w: int) -> AgentTrack:
    centers = track.centers.copy()
    centers[:, 0] = (w - 1) - centers[:, 0]
    velocities = track.velocities.copy()
    velocities[:, 0] = -velocities[:, 0]
    return AgentTrack(track.agent_class, centers, track.extents.copy(), velocities)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def gen_scenario(config: ScenarioConfig, seed: int) -> Scenario:
    """Simulate one labeled turning episode, deterministic in (config, seed).

    The target vehicle follows the turning path under a yield controller:
    it brakes while a crossing VRU occupies the conflict zone ahead of it,
    otherwise it travels at its free-flow speed. VRU crossing times are
    scheduled so that the episode realizes the configured intent; the
    realized label is re-derived from the trajectories and the generator
    retries with a derived sub-seed on the rare scheduling miss.
    """
    config.validate()
    root = np.random.SeedSequence(seed)
    for attempt, child in enumerate(root.spawn(8)):
        rng = np.random.Generator(np.random.PCG64(child))
        scenario = _simulate(config, rng, seed)
        if label_scenario(scenario, config.label_rule) == _intended_label(config):
            return scenario
    raise DataError(
        f"could not realize intent {config.intent!r} for seed {seed} in 8 attempts"
    )


def _intended_label(config: ScenarioConfig) -> InteractionLabel:
    return InteractionLabel.INTERACTION if config.intent == "interaction" else InteractionLabel.NON_INTERACTION


def _simulate(config: ScenarioConfig, rng: np.random.Generator, seed: int) -> Scenario:
    w, h = config.frame_size
    lay = _Layout(w, h)
    amb = config.ambiguity

    target_steps = int(rng.integers(config.steps[0], config.steps[1] + 1))
    v0 = lay.total_len / target_steps
    lo, hi = (s * w for s in config.vehicle_speed)
    v0 = float(min(max(v0, lo), hi))

    # yield controller constants (px / px-per-step)
    lookahead = 0.30 * w
    standoff = 0.05 * w
    block_radius = lay.road_half + 0.02 * w
    a_dec = 0.30 * v0
    a_acc = 0.20 * v0
    yield_floor = (0.10 + 0.50 * amb) * v0

    t_free_conflict = lay.s_conflict / v0  # free-flow arrival step at the conflict point

    vrus = _schedule_vrus(config, lay, rng, v0, t_free_conflict, block_radius)

    max_steps = int(config.steps[1] * 3 + 24)
    veh_pos: list[tuple[float, float]] = []
    speeds: list[float] = []
    s = 0.0
    vel = v0
    for t in range(max_steps):
        veh_pos.append(lay.point(s))
        speeds.append(vel)
        blocking = any(v.blocks(t, lay, block_radius) for v in vrus)
        approaching = (lay.s_conflict - lookahead) < s < (lay.s_conflict - standoff)
        if blocking and approaching:
            vel = max(vel - a_dec, yield_floor)
        else:
            vel = min(vel + a_acc, v0)
        s += vel
        if s >= lay.total_len and t + 1 >= config.steps[0]:
            veh_pos.append(lay.point(s))
            speeds.append(vel)
            break
    steps = len(veh_pos)
    if steps < 4:
        steps = 4
        while len(veh_pos) < steps:
            veh_pos.append(lay.point(lay.total_len))
            speeds.append(0.0)

    veh_len, veh_wid = 0.11 * w, 0.055 * w
    centers = np.asarray(veh_pos, dtype=np.float64)
    extents = np.empty_like(centers)
    s_acc = 0.0
    for t in range(steps):
        hx, hy = lay.heading(s_acc)
        extents[t, 0] = abs(hx) * veh_len + abs(hy) * veh_wid
        extents[t, 1] = abs(hx) * veh_wid + abs(hy) * veh_len
        s_acc += speeds[t]
    vehicle = AgentTrack(AgentClass.CAR_TRUCK, centers, extents, _diff_velocities(centers))

    agents = [vehicle]
    for vru in vrus:
        agents.append(vru.track(steps, w))
    agents.extend(_through_traffic(config, lay, rng, steps))

    if config.turn == "left":
        agents = [_mirror_x(a, w) for a in agents]
        mask_grid = lay.mask().grid[::-1, :].copy()
        mask = RegionMask(mask_grid)
    else:
        mask = lay.mask()

    scenario = Scenario(
        agents=agents,
        vehicle_index=0,
        region_mask=mask,
        steps=steps,
        step_rate=config.step_rate,
        metadata={
            "seed": seed,
            "intent": config.intent,
            "ambiguity": amb,
            "turn": config.turn,
            "v_cap": config.v_cap,
            "free_flow_speed": v0,
            "min_speed": float(min(speeds)),
        },
    )
    scenario.metadata["ambiguous"] = _is_ambiguous(scenario, config.label_rule)
    return scenario


def _diff_velocities(centers: np.ndarray) -> np.ndarray:
    vel = np.zeros_like(centers)
    if len(centers) > 1:
        vel[:-1] = centers[1:] - centers[:-1]
        vel[-1] = vel[-2]
    return vel


class _CrossingVru:
    """A VRU walking a straight line across (or along) the exit road."""

    def __init__(self, agent_class, start, velocity, extent, x_stop=None):
        self.agent_class = agent_class
        self.start = np.asarray(start, dtype=np.float64)
        self.velocity = np.asarray(velocity, dtype=np.float64)
        self.extent = np.asarray(extent, dtype=np.float64)
        self.x_stop = x_stop  # clamp: walker stops at the far sidewalk

    def position(self, t: float) -> np.ndarray:
        pos = self.start + t * self.velocity
        if self.x_stop is not None and self.velocity[0] != 0.0:
            if (self.velocity[0] > 0 and pos[0] > self.x_stop) or (
                self.velocity[0] < 0 and pos[0] < self.x_stop
            ):
                pos = pos.copy()
                pos[0] = self.x_stop
        return pos

    def blocks(self, t: int, lay: _Layout, block_radius: float) -> bool:
        px, py = self.position(t)
        return math.hypot(px - lay.x_exit, py - lay.y_cross) < block_radius

    def track(self, steps: int, w: int) -> AgentTrack:
        centers = np.stack([self.position(t) for t in range(steps)])
        extents = np.tile(self.extent, (steps, 1))
        return AgentTrack(self.agent_class, centers, extents, _diff_velocities(centers))


def _schedule_vrus(config, lay, rng, v0, t_free_conflict, block_radius):
    """Place VRUs so the realized label matches the configured intent."""
    w, h = config.frame_size
    amb = config.ambiguity
    n = int(rng.integers(config.vru_count[0], config.vru_count[1] + 1))
    vrus: list[_CrossingVru] = []
    if n == 0:
        return vrus

    interaction = config.intent == "interaction"
    lookahead_steps = (0.30 * w) / v0
    for i in range(n):
        speed = float(rng.uniform(*config.vru_speed)) * w
        is_bike = rng.random() < 0.25
        cls = AgentClass.BIKE_MOTOR if is_bike else AgentClass.PEDESTRIAN
        if is_bike:
            speed *= 2.0
        extent = (0.040 * w, 0.050 * w) if not is_bike else (0.055 * w, 0.045 * w)
        y_line = lay.y_cross - (0.045 * h if is_bike else 0.0) + float(rng.uniform(-0.01, 0.01)) * h
        direction = 1.0 if rng.random() < 0.5 else -1.0

        if i == 0 and interaction:
            # collision course with the conflict point: forces a yield
            t_hit = t_free_conflict + float(rng.uniform(-1.0, 1.0))
        elif i == 0:
            # clear margin between the VRU leaving the zone and the vehicle
            # approach window opening; ambiguity shrinks the margin
            margin = (1.0 - amb) * 10.0 + 2.5
            if amb >= 0.5 or rng.random() < 0.5:
                t_hit = t_free_conflict - lookahead_steps - block_radius / speed - margin
            else:
                t_hit = t_free_conflict + block_radius / speed + margin + 2.0
        else:
            # background walkers: stroll the far sidewalk or wait, never
            # blocking and farther from the path than the conflict distance
            x_side = lay.x_exit + lay.road_half + 0.13 * w
            if rng.random() < 0.5:
                start = (x_side, float(rng.uniform(0.50, 0.95)) * h)
                vrus.append(_CrossingVru(cls, start, (0.0, direction * speed * 0.6), extent))
            else:
                start = (x_side - 2 * (lay.road_half + 0.13 * w), lay.y_cross + 0.06 * h)
                vrus.append(_CrossingVru(cls, start, (0.0, 0.0), extent))  # waiting, static
            continue

        x_start = lay.x_exit - direction * speed * t_hit
        x_stop = lay.x_exit + direction * (lay.road_half + 0.12 * w)
        vrus.append(_CrossingVru(cls, (x_start, y_line), (direction * speed, 0.0), extent, x_stop))
    return vrus


def _through_traffic(config, lay, rng, steps):
    """Background vehicles in the through lane next to the turning region."""
    w, h = config.frame_size
    n = int(rng.integers(config.through_traffic[0], config.through_traffic[1] + 1))
    tracks = []
    for _ in range(n):
        is_bus = rng.random() < 0.2
        cls = AgentClass.BUS if is_bus else AgentClass.CAR_TRUCK
        length = (0.16 if is_bus else 0.10) * w
        speed = float(rng.uniform(0.05, 0.08)) * w
        x0 = float(rng.uniform(-0.4, 0.6)) * w
        centers = np.stack(
            [np.asarray((x0 + speed * t, lay.y_through)) for t in range(steps)]
        )
        extents = np.tile(np.asarray((length, 0.05 * h)), (steps, 1))
        tracks.append(AgentTrack(cls, centers, extents, _diff_velocities(centers)))
    return tracks


# ---------------------------------------------------------------------------
# Labeling
# ---------------------------------------------------------------------------

def label_scenario(s: Scenario, rule: LabelRule | None = None) -> InteractionLabel:
    """Apply the interaction rule to the trajectories.

    Interaction iff at some step the vehicle runs below (1 - speed_drop) of
    its observed free-flow (max) speed while a VRU is within the conflict
    distance of any point on the vehicle's remaining path.
    """
    rule = rule or LabelRule()
    vehicle = s.agents[s.vehicle_index]
    speeds = np.linalg.norm(vehicle.velocities[:-1], axis=1) if s.steps > 1 else np.zeros(1)
    if speeds.size == 0:
        return InteractionLabel.NON_INTERACTION
    v_free = float(speeds.max())
    if v_free <= 0:
        return InteractionLabel.NON_INTERACTION
    conflict_dist = rule.conflict_frac * s.region_mask.bbox_diagonal
    slow = speeds < (1.0 - rule.speed_drop) * v_free
    vru_tracks = [a for a in s.agents if a.agent_class in VRU_CLASSES]
    for t in np.nonzero(slow)[0]:
        future = vehicle.centers[t:]
        for vru in vru_tracks:
            d = np.linalg.norm(future - vru.centers[t], axis=1).min()
            if d < conflict_dist:
                return InteractionLabel.INTERACTION
    return InteractionLabel.NON_INTERACTION


def _is_ambiguous(s: Scenario, rule: LabelRule) -> bool:
    """Near-threshold episodes: mild yields, or close passes without a yield."""
    vehicle = s.agents[s.vehicle_index]
    if s.steps <= 1:
        return False
    speeds = np.linalg.norm(vehicle.velocities[:-1], axis=1)
    v_free = float(speeds.max())
    if v_free <= 0:
        return False
    conflict_dist = rule.conflict_frac * s.region_mask.bbox_diagonal
    vru_tracks = [a for a in s.agents if a.agent_class in VRU_CLASSES]
    label = label_scenario(s, rule)
    if label is InteractionLabel.INTERACTION:
        # yield barely past the deceleration threshold; the parked tail after
        # the vehicle leaves the frame does not count as a yield
        moving = speeds[speeds > 1e-9]
        return bool(moving.size) and float(moving.min()) > 0.45 * v_free
    if not vru_tracks:
        return False
    # no yield, but a moving VRU entered the conflict corridor while the
    # vehicle was close behind: a near-miss pass
    for t in range(s.steps - 1):
        future = vehicle.centers[t:]
        for vru in vru_tracks:
            if np.linalg.norm(vru.velocities[t]) == 0.0:
                continue
            d_path = np.linalg.norm(future - vru.centers[t], axis=1).min()
            d_vehicle = float(np.linalg.norm(vehicle.centers[t] - vru.centers[t]))
            if d_path < conflict_dist and d_vehicle < 3.2 * conflict_dist:
                return True
    return False


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _check_step(s: Scenario, t: int, upper: int):
    if not (0 <= t < upper):
        raise BoundsError(f"step {t} outside [0, {upper})")


def _fill_box(channel: np.ndarray, bounds: tuple[int, int, int, int], value=1):
    w, h = channel.shape
    x0, x1, y0, y1 = bounds
    x0, x1 = max(x0, 0), min(x1, w - 1)
    y0, y1 = max(y0, 0), min(y1, h - 1)
    if x0 <= x1 and y0 <= y1:
        channel[x0:x1 + 1, y0:y1 + 1] = value


def render_object_frame(s: Scenario, t: int) -> np.ndarray:
    """Rasterize bounding boxes at step t into a (W, H, 4) binary frame."""
    _check_step(s, t, s.steps)
    w, h = s.region_mask.grid.shape
    frame = np.zeros((w, h, OBJECT_CHANNELS), dtype=np.uint8)
    for agent in s.agents:
        _fill_box(frame[:, :, agent.agent_class.value], agent.box_bounds(t))
    return frame


def render_flow_frame(s: Scenario, t: int, v_cap: float | None = None) -> np.ndarray:
    """Rasterize per-agent motion at step t into a (W, H, 3) frame in [0, 1].

    Channel 0 holds the motion orientation, atan2 wrapped from [0, 2pi) onto
    [0, 1); channel 1 is saturated to 1 inside moving boxes; channel 2 holds
    the speed clamped by v_cap. Static agents and background stay zero.
    """
    _check_step(s, t, s.steps - 1)
    if v_cap is None:
        v_cap = float(s.metadata.get("v_cap", 8.0))
    if v_cap <= 0:
        raise ConfigurationError("v_cap must be positive")
    w, h = s.region_mask.grid.shape
    frame = np.zeros((w, h, FLOW_CHANNELS), dtype=np.float32)
    for agent in s.agents:
        dx, dy = agent.velocities[t]
        speed = math.hypot(dx, dy)
        if speed == 0.0:
            continue
        angle = math.atan2(dy, dx) % TWO_PI
        hue = (angle / TWO_PI) % 1.0
        if np.float32(hue) >= 1.0:  # keep the stored value half-open after rounding
            hue = 0.0
        mag = min(speed / v_cap, 1.0)
        x0, x1, y0, y1 = agent.box_bounds(t)
        _fill_box(frame[:, :, 0], (x0, x1, y0, y1), hue)
        _fill_box(frame[:, :, 1], (x0, x1, y0, y1), 1.0)
        _fill_box(frame[:, :, 2], (x0, x1, y0, y1), mag)
    return frame


def apply_lane_filter(
    frame: np.ndarray,
    boxes: list[tuple[AgentClass, tuple[int, int, int, int]]],
    mask: RegionMask,
) -> np.ndarray:
    """Erase vehicle-class boxes whose lower-midpoint falls outside the mask.

    Keeps turning vehicles (their lower midpoint sits inside the turning
    region) and removes through-lane traffic from the occupancy channels.
    VRU channels are never touched. Returns a new frame.
    """
    out = frame.copy()
    for agent_class, (x0, x1, y0, y1) in boxes:
        if agent_class not in VEHICLE_CLASSES:
            continue
        x_mid = (x0 + x1) / 2.0
        if not mask.contains(x_mid, y1):
            _fill_box(out[:, :, agent_class.value], (x0, x1, y0, y1), 0)
    return out


def render_scenario(s: Scenario, lane_filter: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Render a scenario into aligned object/flow frame stacks of length T-1.

    Motion frames need a next step, so the final object frame is dropped to
    keep the two streams index-aligned.
    """
    n = s.steps - 1
    w, h = s.region_mask.grid.shape
    objects = np.zeros((n, w, h, OBJECT_CHANNELS), dtype=np.uint8)
    flows = np.zeros((n, w, h, FLOW_CHANNELS), dtype=np.float32)
    for t in range(n):
        obj = render_object_frame(s, t)
        if lane_filter:
            obj = apply_lane_filter(obj, s.boxes_at(t), s.region_mask)
        objects[t] = obj
        flows[t] = render_flow_frame(s, t)
    return objects, flows


# ---------------------------------------------------------------------------
# On-disk container
# ---------------------------------------------------------------------------

def write_dataset(
    out_dir: str | Path,
    sequences: list[dict],
    mask: RegionMask,
    dataset_meta: dict,
):
    """Write the dataset container: one directory per sequence plus a shared
    mask and a dataset manifest.

    Each entry in `sequences` holds: id, label (InteractionLabel), objects,
    flows, fps, seed and optional extra metadata.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "mask.npy", mask.grid.astype(np.uint8))
    ids = []
    for entry in sequences:
        seq_dir = out / f"seq_{entry['id']}"
        seq_dir.mkdir(exist_ok=True)
        np.save(seq_dir / "object.npy", np.asarray(entry["objects"], dtype=np.uint8))
        np.save(seq_dir / "flow.npy", np.asarray(entry["flows"], dtype=np.float32))
        manifest = {
            "id": entry["id"],
            "label": entry["label"].name.lower(),
            "length": int(len(entry["objects"])),
            "fps": float(entry["fps"]),
            "seed": int(entry["seed"]),
        }
        manifest.update(entry.get("extra", {}))
        (seq_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))
        ids.append(entry["id"])
    meta = {"format_version": FORMAT_VERSION, "ids": ids}
    meta.update(dataset_meta)
    (out / "dataset.json").write_text(json.dumps(meta, sort_keys=True, indent=2))

import numpy as np
import pytest

from turnwatch.ingest import TurningSequence
from turnwatch.scenario import (
    AgentClass,
    AgentTrack,
    InteractionLabel,
    RegionMask,
    Scenario,
    ScenarioConfig,
    gen_scenario,
    label_scenario,
    render_scenario,
)

SMALL_FRAME = (64, 48)


def desk_config(intent="interaction", ambiguity=0.0, **kw):
    defaults = dict(frame_size=SMALL_FRAME, steps=(12, 20), intent=intent, ambiguity=ambiguity)
    defaults.update(kw)
    return ScenarioConfig(**defaults)


def make_track(agent_class, centers, extent, velocities=None):
    centers = np.asarray(centers, dtype=np.float64)
    if velocities is None:
        velocities = np.zeros_like(centers)
        if len(centers) > 1:
            velocities[:-1] = centers[1:] - centers[:-1]
            velocities[-1] = velocities[-2]
    else:
        velocities = np.asarray(velocities, dtype=np.float64)
    extents = np.tile(np.asarray(extent, dtype=np.float64), (len(centers), 1))
    return AgentTrack(agent_class, centers, extents, velocities)


def hand_scenario(tracks, frame_size=(40, 30), steps=None, mask=None):
    """Scenario assembled from explicit tracks; first track is the vehicle."""
    w, h = frame_size
    if mask is None:
        grid = np.zeros((w, h), dtype=bool)
        grid[w // 4: 3 * w // 4, h // 4: 3 * h // 4] = True
        mask = RegionMask(grid)
    steps = steps or len(tracks[0].centers)
    return Scenario(tracks, 0, mask, steps, 12.5, {"v_cap": 8.0})


def sequence_from_seed(seed, intent="interaction", ambiguity=0.0, **kw):
    cfg = desk_config(intent, ambiguity, **kw)
    scen = gen_scenario(cfg, seed)
    objects, flows = render_scenario(scen)
    return TurningSequence(
        f"seq{seed}", objects, flows, label_scenario(scen, cfg.label_rule),
        cfg.step_rate, meta={"ambiguous": scen.metadata["ambiguous"]},
    )


def random_sequence(rng, t, w=6, h=5):
    """Small random-content sequence for parsing round-trip tests."""
    obj = rng.integers(0, 2, size=(t, w, h, 4)).astype(np.uint8)
    flow = rng.random((t, w, h, 3)).astype(np.float32)
    label = InteractionLabel.INTERACTION if rng.random() < 0.5 else InteractionLabel.NON_INTERACTION
    return TurningSequence(f"r{t}", obj, flow, label, 12.5)


@pytest.fixture(scope="session")
def rendered_pair():
    """One interaction and one non-interaction desk-scale sequence."""
    return sequence_from_seed(3, "interaction"), sequence_from_seed(4, "non_interaction")

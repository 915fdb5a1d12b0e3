import numpy as np
import pytest

from tspn.data import RelationInstance, Trajectory, VideoAnnotation

OBJECTS = ("person", "dog", "car")
PREDICATES = ("left-of", "chases")


def static_traj(tid, cat, begin, end, box, n_cls=len(OBJECTS)):
    boxes = np.tile(np.asarray(box, dtype=np.float64), (end - begin, 1))
    return Trajectory(tid, cat, begin, end, boxes, n_cls=n_cls)


def make_video(trajs, rels=(), frames=100, vid="v0"):
    return VideoAnnotation(vid, frames, list(trajs), list(rels), OBJECTS, PREDICATES, 200, 100)


@pytest.fixture
def tiny_video():
    a = static_traj(0, 0, 0, 100, (10, 10, 30, 30))
    b = static_traj(1, 1, 20, 80, (50, 10, 70, 30))
    return make_video([a, b], [RelationInstance(0, 0, 1, 20, 80)])


@pytest.fixture(scope="session")
def small_benchmark():
    from tspn import synth
    videos = synth.generate(synth.ScenarioConfig(seed=3, n_videos=30))
    return synth.split(videos)


# acceptance criteria report one line each; the lines are repeated in the summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

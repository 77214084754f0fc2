import numpy as np
import pytest

from handmine.records import KeypointRecord, RecordSet


def random_record(rng, video="v0", frame=0, hand="right", score=0.9):
    kp = rng.uniform(0.0, 1.0, (21, 2))
    return KeypointRecord.from_array(video, frame, hand, kp, score)


def make_records(rng, hands, video_prefix="v", per_video=10):
    recs = []
    for i, hand in enumerate(hands):
        recs.append(random_record(rng, f"{video_prefix}{i // per_video}", i, hand))
    return RecordSet(tuple(recs))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

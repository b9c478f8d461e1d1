import numpy as np
import pytest
import torch

from eventvid.events import EventStream


@pytest.fixture(autouse=True)
def _single_threaded_torch():
    torch.set_num_threads(2)


def random_stream(rng: np.random.Generator, n_events: int, sensor=(16, 16), t_max=100_000) -> EventStream:
    h, w = sensor
    t = np.sort(rng.integers(0, t_max, size=n_events))
    return EventStream(
        x=rng.integers(0, w, size=n_events),
        y=rng.integers(0, h, size=n_events),
        t=t,
        p=rng.choice([-1, 1], size=n_events),
        sensor_size=sensor,
    )

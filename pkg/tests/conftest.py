import datetime as dt

import numpy as np
import pytest
from hypothesis import settings

from spectrohpo.dataset import N_BANDS, Dataset, RawSample
from spectrohpo.experiments import desk_dataset
from spectrohpo.nnet import TrainSchedule
from spectrohpo.splits import SplitSpec, split_dataset

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

# a few epochs are enough to exercise every code path
TINY_SCHEDULE = TrainSchedule(max_epochs=3, batch_size=16, lr_patience=2, es_patience=3)


@pytest.fixture(scope="session")
def small_dataset() -> Dataset:
    return desk_dataset(seed=3, per_season=30)


@pytest.fixture(scope="session")
def small_split(small_dataset):
    return split_dataset(small_dataset, SplitSpec("random", test_season="2018"))


def make_meta_samples(season_counts: dict[str, int], spectrum=None) -> list[RawSample]:
    """Samples carrying only metadata; every spectrum is the same ramp."""
    spectrum = np.linspace(0.1, 1.0, N_BANDS) if spectrum is None else spectrum
    samples = []
    for season, n in season_counts.items():
        start = dt.date(int(season), 1, 1)
        for i in range(n):
            samples.append(RawSample(f"{season}-{i:05d}", start + dt.timedelta(days=i % 365), season, 15.0,
                                     spectrum))
    return samples


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from datetime import date, datetime, timezone

import pytest

from mpi.identity import DemographicProfile, Sex


class FakeClock:
    """Deterministic, strictly advancing clock for registry tests."""

    def __init__(self, start=datetime(2026, 1, 1, tzinfo=timezone.utc)):
        self.now = start

    def __call__(self) -> datetime:
        return self.now

    def advance(self, **kwargs):
        from datetime import timedelta
        self.now = self.now + timedelta(**kwargs)
        return self.now


@pytest.fixture
def clock():
    return FakeClock()


def make_profile(family="PERERA", given=("NIMAL",), dob=date(1985, 5, 12),
                 sex=Sex.M, address=("NO 1, GALLE ROAD", "COLOMBO"), **kwargs):
    return DemographicProfile(family_name=family, given_names=tuple(given),
                              date_of_birth=dob, sex=sex,
                              address_lines=tuple(address), **kwargs)


@pytest.fixture
def profile():
    return make_profile()

import pytest

from simulst.bench import FULL, INCREMENTAL, bench_scaling, records_from_csv, records_to_csv
from simulst.errors import InvalidConfig
from simulst.streaming import Clock

from conftest import SMALL


def test_records_round_trip():
    records = bench_scaling(SMALL, 4, clock=Clock.uniform(1.0))
    text = records_to_csv(records)
    lines = text.splitlines()
    assert lines[0] == "# format_version: 1"
    assert lines[1] == "variant,step,wall_ms,macs"
    back = records_from_csv(text)
    assert [(r.variant, r.step, r.macs) for r in back] == [(r.variant, r.step, r.macs) for r in records]


def test_simulated_wall_time_tracks_macs():
    records = bench_scaling(SMALL, 5, variants=(INCREMENTAL,), clock=Clock.uniform(2.0))
    for r in records:
        assert r.wall_ms == pytest.approx(r.macs * 2e-6)


def test_incremental_is_cheaper():
    records = bench_scaling(SMALL, 8, variants=(FULL, INCREMENTAL), clock=Clock.uniform(1.0))
    last = {r.variant: r.macs for r in records if r.step == 8}
    assert last[FULL] > last[INCREMENTAL]


@pytest.mark.parametrize("kwargs", [{"num_segments": 3}, {"variants": ("fast",)}])
def test_invalid(kwargs):
    with pytest.raises(InvalidConfig):
        bench_scaling(SMALL, **{"num_segments": 4, **kwargs})


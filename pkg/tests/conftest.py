import numpy as np
import pytest

from forestseg.grids import BinaryMask, GeoGrid

# Collected by the acceptance module; printed in the terminal summary.
ACCEPTANCE_RESULTS: list[tuple[str, str, str]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid, desc, status in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{status}] {cid}: {desc}")


def make_grid(h=16, w=16, pixel_size_m=10.0, lon0=-6.0, lat0=6.0):
    deg = pixel_size_m / 111_320.0
    return GeoGrid(
        lon_min=lon0,
        lon_max=lon0 + w * deg,
        lat_min=lat0,
        lat_max=lat0 + h * deg,
        pixel_size_m=pixel_size_m,
        width_px=w,
        height_px=h,
    )


def random_mask(rng, h=16, w=16, p=0.5, pixel_size_m=10.0) -> BinaryMask:
    return BinaryMask(
        grid=make_grid(h, w, pixel_size_m),
        labels=(rng.random((h, w)) < p).astype(np.uint8),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

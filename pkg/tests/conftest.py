import numpy as np
import pytest
import torch

from sicvae.data import SyntheticConfig, month_index, synthetic_generate
from sicvae.grid import PolarGrid, make_land_mask

torch.set_num_threads(1)


def quiet_config(**kw):
    """Synthetic config with every noise and bias term off unless overridden."""
    base = dict(
        seed=3,
        trend_per_year=0.0,
        bias_amplitude=0.0,
        bias_lead_growth=0.0,
        member_noise_sd=0.0,
        obs_noise_sd=0.0,
        anomaly_sd=0.05,
        forecast_error_sd=0.0,
        state_bias=0.0,
        anomaly_gain=1.0,
        n_member=3,
    )
    base.update(kw)
    return SyntheticConfig(**base)


@pytest.fixture
def small_grid():
    return PolarGrid(8, 16, land_mask=make_land_mask(8, 16, 0.15, pole_hole_rows=1, seed=2))


@pytest.fixture
def interior_config():
    """Noise free, with a bias and a truth kept inside (0.2, 0.8) so clipping never binds."""
    return quiet_config(spatial_contrast=0.2, seasonal_amplitude=0.05, bias_amplitude=0.08, bias_lead_growth=0.005)


@pytest.fixture
def cube_pair(small_grid):
    cfg = SyntheticConfig(seed=11, n_member=4)
    return synthetic_generate(cfg, small_grid, range(month_index(2010, 1), month_index(2014, 1)))


def random_ensemble(rng, t, n, shape, land=None):
    ens = rng.random((t, n, *shape))
    obs = rng.random((t, *shape))
    if land is not None:
        ens[..., land] = np.nan
        obs[..., land] = np.nan
    return ens, obs


# ---------------------------------------------------------------- acceptance summary

_ACCEPTANCE: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): test belongs to a numbered acceptance criterion")


def _entry(item):
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return None
    number, title = marker.args
    return _ACCEPTANCE.setdefault(number, {"title": title, "status": "PASS", "notes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    entry = _entry(item)
    if entry is None:
        return
    if rep.failed:
        entry["status"] = "FAIL"
    elif rep.skipped and entry["status"] == "PASS":
        entry["status"] = "SKIP"


@pytest.fixture
def acceptance_note(request):
    """Attach a measured value to the criterion's summary line."""
    entry = _entry(request.node)
    return entry["notes"].append if entry is not None else (lambda _text: None)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{e['status']:4}  {number:>2}. {e['title']}")
        for note in e["notes"]:
            terminalreporter.write_line(f"          {note}")

import pytest

from breathscreen.pipeline import featurize_manifest
from breathscreen.synth import SynthConfig, gen_dataset

# criterion number -> list of (nodeid, outcome)
_ACCEPT: dict[int, list] = {}
_TITLES: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): acceptance criterion n")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("acceptance")
        if m is not None:
            n, title = m.args
            _TITLES[n] = title
            item.user_properties.append(("acceptance", n))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("acceptance")
    if crit is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _ACCEPT.setdefault(crit, []).append((report.nodeid, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPT:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_TITLES):
        runs = _ACCEPT.get(n, [])
        if not runs:
            status = "NOT RUN"
        else:
            status = "PASS" if all(o == "passed" for _, o in runs) else "FAIL"
        tr.write_line(f"[{status}] criterion {n}: {_TITLES[n]}")


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """Default 128-clip synthetic dataset written to disk once per session."""
    d = tmp_path_factory.mktemp("synth")
    gen_dataset(SynthConfig(), d)
    return d


@pytest.fixture(scope="session")
def synth_manifest(synth_dir):
    from breathscreen.audio import read_manifest

    return read_manifest(synth_dir / "manifest.csv")


@pytest.fixture(scope="session")
def synth_features(synth_manifest):
    return featurize_manifest(synth_manifest, mask="paper57")


@pytest.fixture(scope="session")
def synth_features_csv(synth_features, tmp_path_factory):
    from breathscreen.stats import write_feature_csv

    p = tmp_path_factory.mktemp("feat") / "features.csv"
    write_feature_csv(synth_features, p)
    return p

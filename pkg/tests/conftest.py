import numpy as np
import pytest

from vbattery.loads import identify_tcl_chain, nominal_tcl_params, pool_controlled_model, tcl_controlled_model


@pytest.fixture(scope="session")
def ac_factors():
    return identify_tcl_chain(nominal_tcl_params("ac"), seed=0)


@pytest.fixture(scope="session")
def ac_model(ac_factors):
    return tcl_controlled_model(ac_factors, name="ac")


@pytest.fixture(scope="session")
def wh_models():
    return {k: tcl_controlled_model(identify_tcl_chain(nominal_tcl_params(k), seed=0), name=k)
            for k in ("fwh", "swh")}


@pytest.fixture(scope="session")
def pool_model():
    return pool_controlled_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def nominal_mix():
    from vbattery.scenarios import build_mix

    return build_mix(seed=0, subgroups=1)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, passed, detail)``; the lines are printed at the end of the run."""
    log = request.config.stash[_ACCEPTANCE]

    def record(criterion, passed, detail, info=False):
        log.append((criterion, bool(passed), detail, info))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(_ACCEPTANCE, [])
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail, info in sorted(log, key=lambda r: (int(r[0].split(".")[0].rstrip("abc")), r[0], r[3])):
        tag = "INFO" if info else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"{tag}  criterion {crit}: {detail}")

import pytest

from cacheqa.fixtures import build_fixture_store
from cacheqa.trace_model import save


@pytest.fixture(scope="session")
def fixture_store():
    return build_fixture_store()


@pytest.fixture(scope="session")
def blend_lru(fixture_store):
    return fixture_store["blend_evictions_lru"]


@pytest.fixture(scope="session")
def store_dir(fixture_store, tmp_path_factory):
    path = tmp_path_factory.mktemp("store") / "demo"
    save(fixture_store, path)
    return path

import importlib.util
import json
import pathlib

import pytest

FIXTURES = pathlib.Path(__file__).parent / "fixtures"
ORACLES = pathlib.Path(__file__).parent / "oracles"


def load_oracle(name: str):
    """Import an oracle script by file path (oracles are not a package)."""
    spec = importlib.util.spec_from_file_location(name, ORACLES / f"{name}.py")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture(scope="session")
def bundle_bytes() -> bytes:
    return (FIXTURES / "synthea_bundle.json").read_bytes()


@pytest.fixture(scope="session")
def bundle_doc(bundle_bytes) -> dict:
    return json.loads(bundle_bytes)

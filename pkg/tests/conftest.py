import numpy as np
import pytest

from ardn import tensor_core
from ardn.dataio import DatasetManifest, write_pgm
from ardn.synthetic import make_scene_bytes

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture(params=tensor_core.available_backends())
def backend(request):
    """Run a test once per convolution backend."""
    prev = tensor_core.BACKEND
    tensor_core.set_backend(request.param)
    yield request.param
    tensor_core.set_backend(prev)


@pytest.fixture
def rs():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def scene_dir(tmp_path_factory):
    """Ten 128x128 training scenes and two held-out scenes as 8-bit PGMs."""
    d = tmp_path_factory.mktemp("scenes")
    train, held = [], []
    for i in range(10):
        p = d / f"train_{i:02d}.pgm"
        write_pgm(make_scene_bytes(128, 128, i), p)
        train.append(p)
    for i in range(2):
        p = d / f"test_{i:02d}.pgm"
        write_pgm(make_scene_bytes(128, 128, 1000 + i), p)
        held.append(p)
    (d / "train.txt").write_text("# training scenes\n" + "".join(f"{p.name}\n" for p in train))
    (d / "test.txt").write_text("".join(f"{p.name}\n" for p in held))
    return d


@pytest.fixture(scope="session")
def train_manifest(scene_dir):
    return DatasetManifest.from_paths(sorted(scene_dir.glob("train_*.pgm")), "train")


@pytest.fixture(scope="session")
def test_manifest(scene_dir):
    return DatasetManifest.from_paths(sorted(scene_dir.glob("test_*.pgm")), "test")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0][2:])):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")

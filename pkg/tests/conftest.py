import numpy as np
import pytest

from pcgscreen.signal_io import write_wav


@pytest.fixture
def rng():
    return np.random.default_rng(20240831)


def make_wav(path, samples, rate=2000):
    write_wav(path, samples, rate)
    return path


@pytest.fixture
def physionet_tree(tmp_path):
    """Tiny PhysioNet-style tree: two subsets with REFERENCE.csv labels."""
    rng = np.random.default_rng(7)
    layout = {
        "training-a": [("a0001", -1), ("a0002", 1), ("a0003", -1)],
        "training-b": [("b0001", 1), ("b0002", -1), ("b0003", 0)],  # 0 = uncertain
    }
    root = tmp_path / "physionet"
    for subset, rows in layout.items():
        d = root / subset
        d.mkdir(parents=True)
        with open(d / "REFERENCE.csv", "w") as fh:
            for name, lab in rows:
                fh.write(f"{name},{lab}\n")
        for name, _ in rows:
            make_wav(d / f"{name}.wav", rng.normal(0, 0.1, 4000), rate=2000)
    return root


@pytest.fixture
def pascal_tree(tmp_path):
    """Tiny PASCAL-style tree: class-named folders for subsets A and B."""
    rng = np.random.default_rng(8)
    layout = {
        "Atraining_normal": 2,
        "Atraining_murmur": 1,
        "Atraining_artifact": 1,
        "Btraining_normal": 2,
        "Btraining_extrastole": 1,
        "Aunlabelledtest": 2,  # must be skipped
    }
    root = tmp_path / "pascal"
    n = 0
    for folder, count in layout.items():
        d = root / folder
        d.mkdir(parents=True)
        for i in range(count):
            make_wav(d / f"rec{n}_{i}.wav", rng.normal(0, 0.1, 4000), rate=4000)
            n += 1
    return root

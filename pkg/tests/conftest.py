import numpy as np
import pytest

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def blocky_image(rng, h, w, c=3, block=4, noise=0.02):
    """Piecewise-constant blocks plus a little noise: yields several regions."""
    coarse = rng.random((-(-h // block), -(-w // block), c))
    x = np.repeat(np.repeat(coarse, block, axis=0), block, axis=1)[:h, :w]
    return np.clip(x + noise * rng.standard_normal((h, w, c)), 0.0, 1.0)


def two_tone(h=32, w=32, left=(0.1, 0.3, 0.8), right=(0.9, 0.2, 0.1)):
    x = np.empty((h, w, 3))
    x[:, : w // 2] = left
    x[:, w // 2 :] = right
    return x

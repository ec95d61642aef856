import struct

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def wav_bytes(frames: np.ndarray, rate: int, fmt: str = "pcm16", extensible: bool = False) -> bytes:
    """Build a RIFF/WAVE file by hand; ``frames`` is [n, channels]."""
    frames = np.atleast_2d(np.asarray(frames).T).T
    channels = frames.shape[1]
    if fmt == "pcm16":
        tag, width, payload = 1, 2, np.asarray(frames, dtype="<i2").tobytes()
    elif fmt == "float32":
        tag, width, payload = 3, 4, np.asarray(frames, dtype="<f4").tobytes()
    elif fmt == "pcm8":
        tag, width, payload = 1, 1, np.asarray(frames, dtype="u1").tobytes()
    elif fmt == "mulaw":
        tag, width, payload = 7, 1, np.asarray(frames, dtype="u1").tobytes()
    else:
        raise ValueError(fmt)
    block = channels * width
    if extensible:
        fmt_body = struct.pack("<HHIIHHHHI16s", 0xFFFE, channels, rate, rate * block, block, 8 * width,
                               22, 8 * width, 0, struct.pack("<H14s", tag, b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"))
    else:
        fmt_body = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, 8 * width)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt_body)) + fmt_body
    body += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


# ------------------------------------------------------ acceptance reporting

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        verdict = "PASS" if rep.outcome == "passed" else "FAIL"
        if _criteria.get(number, ("", "PASS"))[1] != "FAIL":
            _criteria[number] = (title, verdict)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, verdict = _criteria[number]
        terminalreporter.write_line(f"{verdict}  criterion {number:2d}: {title}")

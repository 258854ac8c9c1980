import numpy as np
import pytest

from voiceqc.audio import AudioBuffer
from voiceqc.synth import VoiceParams, synth_vowel

# criterion number -> one-line verdict, filled by test_acceptance.py
ACCEPTANCE_LINES = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def vowel():
    """Two seconds of a healthy-sounding synthetic /a/."""
    return synth_vowel(VoiceParams(duration_s=2.0), 8000, seed=3)


def tone(freq, seconds=1.0, rate=8000, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t), rate)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])

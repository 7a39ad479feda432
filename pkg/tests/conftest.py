import numpy as np
import pytest

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split(".")[0])):
        ok, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


TINY_SPEC = dict(labels=("low", "mid", "high"), bands=("100-130", "200-250", "380-460"),
                 envelopes=("rising", "falling", "rising"), speakers=4, utterances=2, reps=2,
                 train_speakers=3, duration=0.5)

TINY_TRAIN = dict(epochs=3, warmup_epochs=1, batch_size=8, frames=24, n_mfcc=8, n_mels=16, lstm_hidden=4,
                  lstm_epochs=1, lstm_stride=3, conv1_channels=2, conv1_kernel=5, conv2_channels=4,
                  conv2_kernel=5, capsule_dim=4, class_capsule_dim=4, decoder_widths=(8, 8),
                  first_stage_width=200, lr=1e-2)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    from compcaps import synth
    from compcaps.config import SynthSpec

    out = tmp_path_factory.mktemp("corpus")
    synth.synth_corpus(SynthSpec(**TINY_SPEC), 3, out)
    return out


@pytest.fixture
def tiny_config():
    from compcaps.config import TrainConfig

    return TrainConfig(**TINY_TRAIN)

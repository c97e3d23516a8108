import pytest

from gevadapt import adapt, am, maskestim, sim
from gevadapt.grad.pipeline import System


@pytest.fixture(scope="session")
def ff_pretrained():
    """Feed-forward mask net fit to 20 speaker-A scenes for 30 epochs."""
    scenes = sim.make_scenes(sim.SceneConfig(), range(20))
    cfg = maskestim.MaskNetConfig()
    params, losses = maskestim.pretrain_supervised(scenes, maskestim.init_params(cfg), 30,
                                                   3e-3, cfg)
    return cfg, params, losses


@pytest.fixture(scope="session")
def small_system(ff_pretrained):
    """Front-end from ``ff_pretrained`` plus an acoustic model trained on speakers A-D."""
    mask_cfg, mask_params, _ = ff_pretrained
    am_cfg = am.AmConfig()
    system = System(mask_cfg, mask_params.copy(), am_cfg, None)
    scenes = [sim.make_scene(sim.SceneConfig(speaker=sim.SPEAKERS[name], seed=500 + i))
              for i, name in enumerate("ABCD" * 5)]
    adapt.train_acoustic_model(system, scenes, am_cfg, epochs=5, lr=1e-3)
    return system


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    def record(name: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

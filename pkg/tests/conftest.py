import os

import numpy as np
import pytest

from vinepfn import pfn
from vinepfn.prior import default_hypothesis_prior

TOY_CONFIG = pfn.PfnConfig(n_layers=2, emb_dim=64, n_heads=4, ff_dim=128, max_features=4, max_classes=2)
TOY_STEPS = 2000
TOY_CHECKPOINTS = (250, 1000, 2000)


@pytest.fixture(scope="session")
def tiny_weights():
    cfg = pfn.PfnConfig(n_layers=2, emb_dim=16, n_heads=2, ff_dim=24, max_features=8, max_classes=4)
    return pfn.PfnWeights(cfg, pfn.init_params(cfg, np.random.default_rng(0)))


@pytest.fixture(scope="session")
def toy_run():
    """PFN trained on the eight-hypothesis prior, with intermediate checkpoints."""
    import time

    prior = default_hypothesis_prior(0.1)
    snaps = {}

    def keep(step, w):
        if step in TOY_CHECKPOINTS:
            snaps[step] = w

    t0 = time.perf_counter()
    final = pfn.train_offline(prior, TOY_CONFIG, steps=TOY_STEPS, batch=32, lr=3e-3, seed=0, n_range=(2, 16),
                              checkpoint_every=250, on_checkpoint=keep, log_every=0)
    snaps[TOY_STEPS] = final
    return {"prior": prior, "weights": final, "checkpoints": snaps, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def default_weights():
    from vinepfn.fileio import default_weights_path, load_weights

    path = default_weights_path()
    if not os.path.exists(path):
        pytest.fail(f"packaged weights missing at {path}")
    return load_weights(path)


_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """``with criterion(n, text) as notes:`` records a PASS/FAIL line for the summary.

    Strings appended to ``notes`` (measured values) are shown after the text.
    """
    import contextlib

    @contextlib.contextmanager
    def check(number, text):
        notes = []
        try:
            yield notes
        except BaseException:
            _ACCEPTANCE.append((number, "FAIL", text, notes))
            raise
        _ACCEPTANCE.append((number, "PASS", text, notes))

    return check


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, text, notes in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        extra = f" [{'; '.join(notes)}]" if notes else ""
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {text}{extra}")

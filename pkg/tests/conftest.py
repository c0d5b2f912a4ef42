"""Shared fixtures: the desk-scale training runs reused across test modules.

The desk runs mirror the reference experiment shape — 737 synthetic sprites,
k=10 latents, batch 64, lr 1e-3, mlp — over three seeds for three objective
variants. They are expensive (a few minutes each), so they run once per
session and every consumer reads from the same artifacts.
"""

import re

import pytest

from gcvae.harness import RunConfig, StoppingConfig, train

DESK_SETTINGS = dict(dataset="synth", subsample_n=737, data_seed=0, arch="mlp",
                     latent_dim=10, batch_size=64, lr=1e-3, max_steps=2000)
DESK_VARIANTS = ("elbo", "info_vae", "gcvae2")
DESK_SEEDS = (0, 1, 2)
STOPPING_WARMUP = 2000


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    """Nine full training runs: {(variant, seed): RunLog}."""
    root = tmp_path_factory.mktemp("desk-runs")
    runs = {}
    for variant in DESK_VARIANTS:
        for seed in DESK_SEEDS:
            cfg = RunConfig(variant=variant, seed=seed,
                            out_dir=str(root / f"{variant}-s{seed}"),
                            stopping=StoppingConfig(enabled=False),
                            **DESK_SETTINGS)
            runs[(variant, seed)] = train(cfg)
    return runs


@pytest.fixture(scope="session")
def stopping_run(tmp_path_factory):
    """One gcvae2 desk run with the plateau stopping rule armed."""
    root = tmp_path_factory.mktemp("stopping-run")
    settings = dict(DESK_SETTINGS, max_steps=STOPPING_WARMUP + 500)
    cfg = RunConfig(variant="gcvae2", seed=0, out_dir=str(root / "gcvae2-stop"),
                    stopping=StoppingConfig(enabled=True, eps_a=1e-4, eps_b=1e-3,
                                            warmup=STOPPING_WARMUP),
                    **settings)
    return train(cfg)


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion at the end of the run
# ---------------------------------------------------------------------------

_CRITERION_PATTERN = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = {}
    for status, label in (("passed", "PASS"), ("failed", "FAIL"),
                          ("error", "FAIL"), ("skipped", "SKIP")):
        for report in terminalreporter.stats.get(status, []):
            match = _CRITERION_PATTERN.search(getattr(report, "nodeid", ""))
            if not match:
                continue
            num = int(match.group(1))
            # a FAIL in any phase outranks an earlier PASS record
            if results.get(num) != "FAIL":
                results[num] = label
    if not results:
        return
    try:
        from test_acceptance import CRITERIA
    except ImportError:
        CRITERIA = {}
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        text = CRITERIA.get(num, "")
        terminalreporter.write_line(f"criterion {num}: {results[num]}  {text}")

import numpy as np
import pytest

from fakebench.template import canonical_template

# one "criterion N: PASS/FAIL" line per acceptance criterion, echoed in the
# terminal summary so they survive output capture
acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def template_96():
    return canonical_template((96, 96))


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mouth_corpus(tmp_path_factory):
    """Small Mouth-artifact corpus shared by pipeline-level tests."""
    from fakebench import synth
    from fakebench.regions import RegionKind

    root = tmp_path_factory.mktemp("mouth_corpus")
    manifest = synth.generate_manifest(
        root, n_identities=6, videos_per_identity=2, frames_per_video=3,
        fake_fraction=0.5, artifact_region=RegionKind.MOUTH, seed=7)
    return root, manifest

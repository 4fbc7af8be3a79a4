"""Golden-run oracles: fixed-seed pipeline runs reproduce committed bytes.

Regenerate with `python tests/make_goldens.py` (same platform/BLAS).
"""
import pytest

from make_goldens import GOLDEN, build


@pytest.fixture(scope="module")
def rebuilt(tmp_path_factory):
    td = tmp_path_factory.mktemp("golden_rebuild")
    return build(td)


def test_fixture_cloud_matches(rebuilt):
    assert rebuilt["fixture.cloud.csv"].read_bytes() == (GOLDEN / "fixture.cloud.csv").read_bytes()


def test_plan_ranking_reproduced_bitwise(rebuilt):
    assert rebuilt["plan_artifact.json"].read_bytes() == (GOLDEN / "plan_artifact.json").read_bytes()


def test_experiment_report_reproduced_bitwise(rebuilt):
    assert rebuilt["report.json"].read_bytes() == (GOLDEN / "report.json").read_bytes()


def test_scores_csv_reproduced_bitwise(rebuilt):
    assert rebuilt["scores.csv"].read_bytes() == (GOLDEN / "scores.csv").read_bytes()

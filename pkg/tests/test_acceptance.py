"""One test per acceptance criterion; the whole suite runs once per module.

Criteria that are not met fail here on purpose.  The pass/fail lines are
repeated in the terminal summary.
"""
import pytest

from kinsplit.harness.acceptance import TITLES, AcceptanceSuite

from conftest import ACCEPTANCE_LINES


@pytest.fixture(scope="module")
def results(tmp_path_factory):
    suite = AcceptanceSuite(workers=1, log=None, work_dir=tmp_path_factory.mktemp("accept"))
    out = {r.number: r for r in suite.run()}
    ACCEPTANCE_LINES.extend(out[n].line() for n in sorted(out))
    return out


@pytest.mark.parametrize("number", sorted(TITLES), ids=lambda n: f"{n:02d}-{TITLES[n].replace(' ', '-')}")
def test_criterion(results, number):
    res = results[number]
    print(res.line())
    assert res.passed, res.line()

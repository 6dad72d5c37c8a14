from __future__ import annotations

import pytest

from stepwise_qa.datamodel import MultiHopExample, Paragraph
from stepwise_qa.filter import RelevantContext

# criterion name -> "PASS" / "FAIL" / "SKIP", filled from tests marked with @pytest.mark.criterion
ACCEPTANCE: dict[str, str] = {}


def make_example(
    ex_id: str,
    question: str,
    paras: list[tuple[str, list[str]]],
    answer: str,
    supports: list[tuple[str, int]],
    qtype: str | None = None,
) -> MultiHopExample:
    paragraphs = tuple(Paragraph(t, tuple(s), i) for i, (t, s) in enumerate(paras))
    return MultiHopExample(ex_id, question, paragraphs, answer, tuple(supports), qtype=qtype)


@pytest.fixture
def bridge_example() -> MultiHopExample:
    # The answer string only occurs in the "Hormel" paragraph.
    return make_example(
        "bridge-1",
        "Which company makes the canned meat product that Spam Musubi is made with?",
        [
            ("Spam Musubi", ["Spam musubi is a snack popular in Hawaii.", " It is made with Spam."]),
            ("Spam (food)", ["Spam is a brand of canned cooked pork.", " Spam is made by Hormel Foods Corporation."]),
            ("Poi", ["Poi is a Polynesian staple food."]),
        ],
        "Hormel Foods Corporation",
        [("Spam Musubi", 1), ("Spam (food)", 0), ("Spam (food)", 1)],
        qtype="bridge",
    )


@pytest.fixture
def comparison_example() -> MultiHopExample:
    return make_example(
        "cmp-1",
        "Are Kozorra and Bimarai both comedy films?",
        [
            ("Tulamo", ["Tulamo is a city."]),
            ("Bimarai", ["Bimarai is a 1990 comedy film.", " It was directed by Sef."]),
            ("Kozorra", ["Kozorra is a 1975 comedy film.", " It was directed by Pim."]),
        ],
        "yes",
        [("Kozorra", 0), ("Bimarai", 0)],
        qtype="comparison",
    )


@pytest.fixture
def macg_context() -> RelevantContext:
    return RelevantContext.of([
        Paragraph("MACG-28", ("Marine Air Control Group 28 is based at Cherry Point.", " It was formed in 1967."), 0),
    ])


_RANK = {"PASS": 0, "SKIP": 1, "FAIL": 2}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        status = "SKIP" if report.skipped else "PASS" if report.passed else "FAIL"
        # one criterion may span several tests; the worst outcome wins
        if _RANK[status] >= _RANK[ACCEPTANCE.get(name, "PASS")]:
            ACCEPTANCE[name] = status


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in ACCEPTANCE.items():
        terminalreporter.write_line(f"{status:<5} {name}")

"""Answer, supporting-fact and joint EM/F1 (HotpotQA scoring protocol)."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .datamodel import MultiHopExample, SupportPair
from .text import normalize_answer

logger = logging.getLogger(__name__)

FIELDS = ("answer_em", "answer_f1", "sup_em", "sup_f1", "joint_em", "joint_f1")


@dataclass(frozen=True)
class Scores:
    em: float
    f1: float
    precision: float
    recall: float


@dataclass
class EvalReport:
    answer_em: float
    answer_f1: float
    sup_em: float
    sup_f1: float
    joint_em: float
    joint_f1: float
    n: int
    per_bucket: dict[str, "EvalReport"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_bucket"] = {k: v.to_dict() for k, v in self.per_bucket.items()}
        return d

    def render(self) -> str:
        lines = [" ".join(f"{k}={getattr(self, k):.4f}" for k in FIELDS) + f" n={self.n}"]
        if self.per_bucket:
            lines.append(f"{'bucket':<20}" + "".join(f"{k:>11}" for k in FIELDS) + f"{'n':>7}")
            for label, rep in sorted(self.per_bucket.items()):
                lines.append(f"{label:<20}" + "".join(f"{getattr(rep, k):>11.4f}" for k in FIELDS) + f"{rep.n:>7}")
        return "\n".join(lines)


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def answer_scores(pred: str, gold: str) -> Scores:
    npred, ngold = normalize_answer(pred), normalize_answer(gold)
    em = float(npred == ngold)
    special = ("yes", "no", "noanswer")
    if (npred in special or ngold in special) and npred != ngold:
        return Scores(em, 0.0, 0.0, 0.0)
    ptoks, gtoks = npred.split(), ngold.split()
    common = Counter(ptoks) & Counter(gtoks)
    same = sum(common.values())
    if same == 0:
        return Scores(em, 0.0, 0.0, 0.0)
    p, r = same / len(ptoks), same / len(gtoks)
    return Scores(em, _f1(p, r), p, r)


def sup_scores(pred: Iterable[SupportPair], gold: Iterable[SupportPair]) -> Scores:
    pset = {(t, int(i)) for t, i in pred}
    gset = {(t, int(i)) for t, i in gold}
    tp = len(pset & gset)
    p = tp / len(pset) if pset else 0.0
    r = tp / len(gset) if gset else 0.0
    return Scores(float(pset == gset), _f1(p, r), p, r)


def joint_scores(ans: Scores, sup: Scores) -> tuple[float, float]:
    p = ans.precision * sup.precision
    r = ans.recall * sup.recall
    return ans.em * sup.em, _f1(p, r)


def _mean_report(rows: Sequence[tuple[float, ...]]) -> EvalReport:
    n = len(rows)
    if n == 0:
        return EvalReport(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0)
    sums = [sum(col) / n for col in zip(*rows)]
    return EvalReport(*sums, n=n)


def evaluate(
    predictions: Mapping,
    gold: Sequence[MultiHopExample],
    buckets: Optional[Mapping[str, str]] = None,
) -> EvalReport:
    """Corpus means over ``gold``; ``predictions`` is ``{"answer": {...}, "sp": {...}}``.

    Missing predictions score zero with a warning; duplicate gold ids raise.
    """
    ids = [ex.id for ex in gold]
    dupes = sorted({i for i in ids if ids.count(i) > 1}) if len(set(ids)) != len(ids) else []
    if dupes:
        raise ValueError(f"duplicate example ids: {dupes}")
    answers = predictions.get("answer", {})
    sps = predictions.get("sp", {})
    rows: dict[str, tuple[float, ...]] = {}
    for ex in gold:
        if ex.id not in answers:
            logger.warning("missing answer prediction for %s", ex.id)
            a = Scores(0.0, 0.0, 0.0, 0.0)
        else:
            a = answer_scores(answers[ex.id], ex.answer)
        if ex.id not in sps:
            logger.warning("missing supporting-fact prediction for %s", ex.id)
            s = Scores(0.0, 0.0, 0.0, 0.0)
        else:
            s = sup_scores(sps[ex.id], ex.gold_supports)
        jem, jf1 = joint_scores(a, s)
        rows[ex.id] = (a.em, a.f1, s.em, s.f1, jem, jf1)
    report = _mean_report([rows[i] for i in sorted(rows)])
    if buckets:
        grouped: dict[str, list[tuple[float, ...]]] = {}
        for i in sorted(rows):
            if i in buckets:
                grouped.setdefault(buckets[i], []).append(rows[i])
        report.per_bucket = {label: _mean_report(r) for label, r in grouped.items()}
    return report


def load_predictions(path: str | Path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict) or "answer" not in data or "sp" not in data:
        raise ValueError(f"{path}: expected an object with 'answer' and 'sp' maps")
    return data


def write_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True), encoding="utf-8")

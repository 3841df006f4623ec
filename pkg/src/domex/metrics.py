"""Page-level precision/recall/F1 per field.

A (page, field) extraction is correct iff the predicted normalized text
matches one of that page's ground-truth strings for the field.  Precision
counts only pages where a prediction was made; absent predictions hurt
recall only.  A field with neither predictions nor truth scores zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .dom import normalize_text
from .errors import DuplicatePrediction


@dataclass
class FieldMetrics:
    field_name: str
    page_precision: float
    page_recall: float
    page_f1: float
    pages_with_truth: int
    pages_with_prediction: int
    pages_correct: int

    def to_dict(self) -> dict:
        return {
            "field": self.field_name,
            "precision": self.page_precision,
            "recall": self.page_recall,
            "f1": self.page_f1,
            "pages_with_truth": self.pages_with_truth,
            "pages_with_prediction": self.pages_with_prediction,
            "pages_correct": self.pages_correct,
        }


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def page_level_f1(predictions: Sequence[dict[str, tuple[str, str] | None]],
                  truths: Sequence[dict[str, set[str]]],
                  fields: Sequence[str]) -> tuple[list[FieldMetrics], float]:
    """Score per-page field predictions against truth.

    ``predictions[i][field]`` is an (xpath, text) tuple or None/absent;
    ``truths[i][field]`` is the set of acceptable strings.  Returns per-field
    metrics plus their unweighted mean F1.
    """
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths must align page-wise")
    out: list[FieldMetrics] = []
    for field_name in fields:
        with_truth = with_pred = correct = 0
        for pred, truth in zip(predictions, truths):
            truth_values = {normalize_text(v) for v in truth.get(field_name, set())}
            if truth_values:
                with_truth += 1
            chosen = pred.get(field_name)
            if chosen is not None:
                with_pred += 1
                if normalize_text(chosen[1]) in truth_values:
                    correct += 1
        precision = correct / with_pred if with_pred else 0.0
        recall = correct / with_truth if with_truth else 0.0
        out.append(FieldMetrics(
            field_name=field_name,
            page_precision=precision,
            page_recall=recall,
            page_f1=_f1(precision, recall),
            pages_with_truth=with_truth,
            pages_with_prediction=with_pred,
            pages_correct=correct,
        ))
    macro = sum(m.page_f1 for m in out) / len(out) if out else 0.0
    return out, macro


def assemble_predictions(records: Sequence[dict], page_ids: Sequence[str],
                         fields: Sequence[str]) -> list[dict[str, tuple[str, str] | None]]:
    """Group prediction records {page_id, field, xpath, text} by page.

    Raises DuplicatePrediction when a (page, field) slot is filled twice.
    """
    index = {pid: i for i, pid in enumerate(page_ids)}
    out: list[dict[str, tuple[str, str] | None]] = [{} for _ in page_ids]
    for record in records:
        pid = record["page_id"]
        field_name = record["field"]
        if pid not in index or field_name not in fields:
            continue
        slot = out[index[pid]]
        if field_name in slot:
            raise DuplicatePrediction(f"two predictions for page {pid!r} field {field_name!r}")
        slot[field_name] = (record.get("xpath", ""), record["text"])
    return out


def metrics_to_dict(per_field: list[FieldMetrics], macro: float) -> dict:
    return {
        "macro_f1": macro,
        "per_field": {m.field_name: m.to_dict() for m in per_field},
    }

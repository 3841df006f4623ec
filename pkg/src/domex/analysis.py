"""Corpus analyses: inter-field distance matrices and the voting-fraction
F1 curve.  Both emit plain data series; figure rendering lives in report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import match_truth_nodes
from .dom import Page, SiteCorpus, VerticalSchema
from .filtering import DEFAULT_TOP_K, filter_site
from .metrics import page_level_f1
from .relation_model import site_vote


def distance_matrix(site: SiteCorpus, filter_top_k: int = DEFAULT_TOP_K) -> np.ndarray:
    """Mean signed ordinal distance between ground-truth nodes of each field
    pair, normalized by page size, then min-max scaled to [-1, 1].

    Entry (row, col) is positive when the column field sits after the row
    field.  Distances count retained (variable) nodes; pages missing either
    field are skipped.  The matrix is antisymmetric before scaling.
    """
    schema = site.vertical
    filtered, _ = filter_site(site, filter_top_k)
    k = schema.k
    sums = np.zeros((k, k))
    counts = np.zeros((k, k))
    for page in filtered.pages:
        matches = match_truth_nodes(page, schema)
        positions = {
            f: min(matches[f]) for f in schema.fields if matches[f]
        }
        size = max(len(page.nodes), 1)
        for r, fr in enumerate(schema.fields):
            for c, fc in enumerate(schema.fields):
                if fr in positions and fc in positions:
                    sums[r, c] += (positions[fc] - positions[fr]) / size
                    counts[r, c] += 1
    matrix = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    peak = np.abs(matrix).max()
    if peak > 0:
        matrix = matrix / peak
    return matrix


def matrix_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of the off-diagonal entries of two matrices."""
    mask = ~np.eye(a.shape[0], dtype=bool)
    x, y = a[mask], b[mask]
    if x.std() == 0 or y.std() == 0:
        return 0.0
    return float(np.corrcoef(x, y)[0, 1])


@dataclass
class VotingCurvePoint:
    fraction: float
    macro_f1: float
    per_field: dict

    def to_dict(self) -> dict:
        return {"fraction": self.fraction, "macro_f1": self.macro_f1,
                "per_field": self.per_field}


def voting_fraction_curve(site_results: list[tuple[list[dict[str, int | None]], list[Page]]],
                          schema: VerticalSchema,
                          fractions: list[float] | None = None) -> list[VotingCurvePoint]:
    """Re-run site-level voting at several fractions over precomputed
    per-page choices and score each variant.

    ``site_results`` holds one (pre-vote choices, pages) pair per target
    site; fraction 0 uses no pages for voting (choices pass through).
    """
    if fractions is None:
        fractions = [round(0.1 * i, 1) for i in range(11)]
    points = []
    for fraction in fractions:
        predictions = []
        truths = []
        for choices, pages in site_results:
            voted = site_vote(choices, pages, fraction)
            for choice, page in zip(voted, pages):
                row = {}
                for field_name, ordinal in choice.items():
                    row[field_name] = None if ordinal is None else (
                        page.nodes[ordinal].xpath, page.nodes[ordinal].text)
                predictions.append(row)
                truths.append(page.truth)
        per_field, macro = page_level_f1(predictions, truths, schema.fields)
        points.append(VotingCurvePoint(
            fraction=fraction, macro_f1=macro,
            per_field={m.field_name: m.page_f1 for m in per_field}))
    return points

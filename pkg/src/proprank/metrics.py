"""Recall-style quality metrics over ranked candidate lists.

Detection rate at (threshold, budget) is the percentage of groundtruth
objects whose best overlap within the first m ranked candidates exceeds the
threshold (strictly by default). ABO is the mean best overlap per class, and
MABO the unweighted mean of ABO over the classes present. No matching or
suppression is performed: one candidate may cover several objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .core import DataError, Dataset, GroundTruthObject, ImageRecord, dataset_digest, iou

DEFAULT_THRESHOLDS = (0.5, 0.7, 0.9)
DEFAULT_BUDGETS = (1, 10, 50, 100, 200, 500, 800, 1000)


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    proposal_budgets: tuple[int, ...] = DEFAULT_BUDGETS
    strict: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "iou_thresholds", tuple(float(d) for d in self.iou_thresholds))
        object.__setattr__(self, "proposal_budgets", tuple(int(m) for m in self.proposal_budgets))
        if not self.iou_thresholds or not self.proposal_budgets:
            raise DataError("thresholds and budgets must be non-empty")
        for d in self.iou_thresholds:
            if not 0.0 < d <= 1.0:
                raise DataError(f"IoU threshold must lie in (0, 1], got {d}")
        for lo, hi in zip(self.proposal_budgets, self.proposal_budgets[1:]):
            if hi <= lo:
                raise DataError("proposal budgets must be strictly increasing")
        if self.proposal_budgets[0] < 1:
            raise DataError("proposal budgets must be positive")

    def to_dict(self) -> dict:
        return {
            "iou_thresholds": list(self.iou_thresholds),
            "proposal_budgets": list(self.proposal_budgets),
            "strict": self.strict,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalConfig":
        return cls(
            tuple(obj.get("iou_thresholds", DEFAULT_THRESHOLDS)),
            tuple(obj.get("proposal_budgets", DEFAULT_BUDGETS)),
            bool(obj.get("strict", True)),
        )


def _check_ranking(record: ImageRecord, ranking: Sequence[int]) -> list[int]:
    order = [int(i) for i in ranking]
    if sorted(order) != list(range(record.num_candidates)):
        raise DataError(
            f"{record.image_id}: ranking is not a permutation of "
            f"0..{record.num_candidates - 1}"
        )
    return order


def _rankings_for(dataset: Dataset, rankings: Mapping[str, Sequence[int]]) -> list[list[int]]:
    out = []
    for rec in dataset.records:
        if rec.image_id not in rankings:
            raise DataError(f"no ranking supplied for image {rec.image_id}")
        out.append(_check_ranking(rec, rankings[rec.image_id]))
    return out


def identity_rankings(dataset: Dataset) -> dict[str, list[int]]:
    """Rankings that keep each record's candidate order as-is."""
    return {rec.image_id: list(range(rec.num_candidates)) for rec in dataset.records}


def best_overlap(gt: GroundTruthObject, record: ImageRecord, ranking: Sequence[int], m: int) -> float:
    """Best IoU between the object and the first m ranked candidates (0.0 if none)."""
    if m < 1:
        raise DataError(f"budget must be at least 1, got {m}")
    order = _check_ranking(record, ranking)
    best = 0.0
    for idx in order[:m]:
        value = iou(gt.box, record.candidates[idx].box)
        if value > best:
            best = value
    return best


def detection_rate(
    dataset: Dataset,
    rankings: Mapping[str, Sequence[int]],
    delta: float,
    m: int,
    strict: bool = True,
) -> float:
    """Percentage of groundtruth objects covered within the first m candidates."""
    orders = _rankings_for(dataset, rankings)
    total = 0
    covered = 0
    for rec, order in zip(dataset.records, orders):
        for gt in rec.groundtruth:
            total += 1
            best = best_overlap(gt, rec, order, m)
            if (best > delta) if strict else (best >= delta):
                covered += 1
    if total == 0:
        raise DataError("detection rate is undefined: dataset has no groundtruth objects")
    return 100.0 * covered / total


def mabo(
    dataset: Dataset,
    rankings: Mapping[str, Sequence[int]],
    m: int,
) -> tuple[dict[str, float], float]:
    """Per-class average best overlap and its unweighted mean over classes."""
    orders = _rankings_for(dataset, rankings)
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for rec, order in zip(dataset.records, orders):
        for gt in rec.groundtruth:
            best = best_overlap(gt, rec, order, m)
            sums[gt.class_label] = sums.get(gt.class_label, 0.0) + best
            counts[gt.class_label] = counts.get(gt.class_label, 0) + 1
    if not counts:
        raise DataError("MABO is undefined: dataset has no groundtruth objects")
    abo = {cls: sums[cls] / counts[cls] for cls in sorted(counts)}
    return abo, sum(abo.values()) / len(abo)


@dataclass(frozen=True, eq=False)
class EvalReport:
    """All configured metric values for one ranking source."""

    dr: dict
    abo: dict
    mabo: dict
    counts: dict
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "dr": [
                {"delta": d, "budget": m, "value": v} for (d, m), v in sorted(self.dr.items())
            ],
            "abo": [
                {"class": c, "budget": m, "value": v} for (c, m), v in sorted(self.abo.items())
            ],
            "mabo": [{"budget": m, "value": v} for m, v in sorted(self.mabo.items())],
            "counts": dict(self.counts),
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        return cls(
            dr={(float(e["delta"]), int(e["budget"])): float(e["value"]) for e in obj.get("dr", [])},
            abo={(str(e["class"]), int(e["budget"])): float(e["value"]) for e in obj.get("abo", [])},
            mabo={int(e["budget"]): float(e["value"]) for e in obj.get("mabo", [])},
            counts={str(k): int(v) for k, v in obj.get("counts", {}).items()},
            metadata=dict(obj.get("metadata", {})),
        )


def evaluate(
    dataset: Dataset,
    rankings: Mapping[str, Sequence[int]],
    config: EvalConfig,
    label: str = "ranking",
) -> EvalReport:
    """Detection rate and (M)ABO at every configured threshold and budget.

    Computes each object's best-overlap prefix over its ranked candidates
    once, so the result is identical to calling the single-point metrics at
    every (threshold, budget) pair.
    """
    orders = _rankings_for(dataset, rankings)
    budgets = config.proposal_budgets
    # prefix_best[i] = best overlap within the first i+1 candidates
    per_object: list[tuple[str, list[float]]] = []
    for rec, order in zip(dataset.records, orders):
        for gt in rec.groundtruth:
            prefix: list[float] = []
            best = 0.0
            for idx in order:
                value = iou(gt.box, rec.candidates[idx].box)
                if value > best:
                    best = value
                prefix.append(best)
            per_object.append((gt.class_label, prefix))
    if not per_object:
        raise DataError("metrics are undefined: dataset has no groundtruth objects")

    def best_at(prefix: list[float], m: int) -> float:
        if not prefix:
            return 0.0
        return prefix[min(m, len(prefix)) - 1]

    dr: dict = {}
    for d in config.iou_thresholds:
        for m in budgets:
            covered = 0
            for _, prefix in per_object:
                best = best_at(prefix, m)
                if (best > d) if config.strict else (best >= d):
                    covered += 1
            dr[(d, m)] = 100.0 * covered / len(per_object)
    abo: dict = {}
    mabo_values: dict = {}
    classes = sorted({cls for cls, _ in per_object})
    for m in budgets:
        means = []
        for cls in classes:
            values = [best_at(prefix, m) for c, prefix in per_object if c == cls]
            abo[(cls, m)] = sum(values) / len(values)
            means.append(abo[(cls, m)])
        mabo_values[m] = sum(means) / len(means)
    counts = {cls: sum(1 for c, _ in per_object if c == cls) for cls in classes}
    return EvalReport(
        dr=dr,
        abo=abo,
        mabo=mabo_values,
        counts=counts,
        metadata={"source": label, "dataset_digest": dataset_digest(dataset)},
    )


@dataclass(frozen=True, eq=False)
class ComparisonReport:
    """Two ranking sources evaluated side by side, with rendered tables."""

    a: EvalReport
    b: EvalReport
    config: EvalConfig
    text: str
    csv: str

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "sources": [self.a.to_dict(), self.b.to_dict()]}


def render_text(reports: Sequence[EvalReport], config: EvalConfig) -> str:
    """Aligned tables: one detection-rate table per threshold, then MABO."""
    labels = [str(r.metadata.get("source", f"ranking-{i}")) for i, r in enumerate(reports)]
    name_w = max(len("source"), *(len(lb) for lb in labels))
    col_w = max(8, *(len(str(m)) for m in config.proposal_budgets))
    header = "source".ljust(name_w) + "".join(str(m).rjust(col_w) for m in config.proposal_budgets)
    lines: list[str] = []
    for d in config.iou_thresholds:
        op = ">" if config.strict else ">="
        lines.append(f"Detection rate (%) vs proposal budget, IoU {op} {d:g}")
        lines.append(header)
        for rep, lb in zip(reports, labels):
            row = lb.ljust(name_w)
            row += "".join(f"{rep.dr[(d, m)]:.2f}".rjust(col_w) for m in config.proposal_budgets)
            lines.append(row)
        lines.append("")
    lines.append("Mean average best overlap (MABO) vs proposal budget")
    lines.append(header)
    for rep, lb in zip(reports, labels):
        row = lb.ljust(name_w)
        row += "".join(f"{rep.mabo[m]:.4f}".rjust(col_w) for m in config.proposal_budgets)
        lines.append(row)
    lines.append("")
    return "\n".join(lines)


def render_csv(reports: Sequence[EvalReport], config: EvalConfig) -> str:
    lines = ["metric,delta,budget,source,value"]
    for rep in reports:
        label = str(rep.metadata.get("source", "ranking"))
        for d in config.iou_thresholds:
            for m in config.proposal_budgets:
                lines.append(f"dr,{d:g},{m},{label},{rep.dr[(d, m)]:.2f}")
        for m in config.proposal_budgets:
            lines.append(f"mabo,,{m},{label},{rep.mabo[m]:.4f}")
    return "\n".join(lines) + "\n"


def report(
    dataset: Dataset,
    rankings_a: Mapping[str, Sequence[int]],
    rankings_b: Mapping[str, Sequence[int]],
    config: EvalConfig,
    label_a: str = "source-order",
    label_b: str = "reranked",
) -> ComparisonReport:
    """Evaluate two ranking sources over one dataset and render the tables."""
    rep_a = evaluate(dataset, rankings_a, config, label_a)
    rep_b = evaluate(dataset, rankings_b, config, label_b)
    pair = (rep_a, rep_b)
    return ComparisonReport(
        a=rep_a,
        b=rep_b,
        config=config,
        text=render_text(pair, config),
        csv=render_csv(pair, config),
    )

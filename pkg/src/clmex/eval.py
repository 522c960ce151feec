"""Single-view accuracy, confusion matrices, and the view-drop and label-fraction studies."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data.dataset import MultiViewDataset
from .models import Network
from .training.config import RunConfig
from .training.loops import downstream_train, predict_dataset, supervised_baseline

log = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (1.0, 0.75, 0.5, 0.25, 0.1, 0.05)


class EvaluationError(ValueError):
    pass


@dataclass
class EvalResult:
    overall_accuracy: float
    per_view_accuracy: dict[int, float]
    per_view_counts: dict[int, int]
    confusion: np.ndarray  # rows: true class, columns: predicted class
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "per_view_accuracy": {str(k): v for k, v in self.per_view_accuracy.items()},
            "per_view_counts": {str(k): v for k, v in self.per_view_counts.items()},
            "confusion": self.confusion.tolist(),
            "n_samples": self.n_samples,
        }


def score(predictions: np.ndarray, labels: np.ndarray, views: np.ndarray, num_classes: int) -> EvalResult:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise EvaluationError("empty test set")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    correct = predictions == labels
    per_view, counts = {}, {}
    for angle in sorted(set(np.asarray(views).tolist())):
        m = views == angle
        per_view[int(angle)] = float(correct[m].mean())
        counts[int(angle)] = int(m.sum())
    return EvalResult(
        overall_accuracy=float(np.trace(confusion) / confusion.sum()),
        per_view_accuracy=per_view,
        per_view_counts=counts,
        confusion=confusion,
        n_samples=int(len(labels)),
    )


def evaluate(net: Network, dataset: MultiViewDataset) -> EvalResult:
    """Accuracy of single-view predictions over every test image."""
    if len(dataset) == 0:
        raise EvaluationError("empty test set")
    if net.classifier is None or net.classifier.num_classes != dataset.num_classes:
        have = None if net.classifier is None else net.classifier.num_classes
        raise EvaluationError(f"classifier has {have} classes, test set vocabulary has {dataset.num_classes}")
    return score(predict_dataset(net, dataset), dataset.labels, dataset.view_angles, dataset.num_classes)


def evaluate_multiview_vote(net: Network, dataset: MultiViewDataset) -> float:
    """Accuracy when all views of a capture vote on one label. Not used by the studies."""
    pred = predict_dataset(net, dataset)
    correct = 0
    groups = dataset.groups()
    for idx in groups.values():
        votes = np.bincount(pred[idx], minlength=dataset.num_classes)
        correct += int(np.argmax(votes) == dataset.labels[idx[0]])
    return correct / len(groups)


# -- studies --------------------------------------------------------------------


def view_drop_table(clmex: EvalResult, baseline: EvalResult, frontal: int = 0) -> list[dict]:
    """Per angle: accuracy(frontal) - accuracy(angle) for both models."""
    angles = sorted(set(clmex.per_view_accuracy) | set(baseline.per_view_accuracy))
    for res, name in ((clmex, "clmex"), (baseline, "baseline")):
        missing = [a for a in angles if a not in res.per_view_accuracy]
        if frontal not in res.per_view_accuracy:
            missing.append(frontal)
        if missing:
            raise EvaluationError(f"{name} result lacks views {sorted(set(missing))}")
    rows = []
    for a in angles:
        rows.append({
            "angle": a,
            "clmex_accuracy": clmex.per_view_accuracy[a],
            "baseline_accuracy": baseline.per_view_accuracy[a],
            "clmex_drop": clmex.per_view_accuracy[frontal] - clmex.per_view_accuracy[a],
            "baseline_drop": baseline.per_view_accuracy[frontal] - baseline.per_view_accuracy[a],
        })
    return rows


def view_drop_study(clmex_net: Network, baseline_net: Network, test: MultiViewDataset, frontal: int = 0) -> list[dict]:
    if frontal not in set(test.view_angles.tolist()):
        raise EvaluationError(f"test set has no frontal ({frontal} deg) images")
    return view_drop_table(evaluate(clmex_net, test), evaluate(baseline_net, test), frontal)


def extreme_view_drop(rows: Sequence[dict], key: str) -> float:
    """Mean drop over the largest |angle| present in the table."""
    widest = max(abs(r["angle"]) for r in rows)
    return float(np.mean([r[key] for r in rows if abs(r["angle"]) == widest]))


@dataclass
class StudyCache:
    """Evaluation results keyed by (model kind, label fraction, seed)."""

    results: dict = field(default_factory=dict)
    hits: int = 0

    def get_or_compute(self, key, compute):
        if key in self.results:
            self.hits += 1
            return self.results[key]
        value = compute()
        self.results[key] = value
        return value


def _with_fraction(config: RunConfig, fraction: float) -> RunConfig:
    cfg = copy.deepcopy(config)
    cfg.downstream = replace(cfg.downstream, label_fraction=float(fraction))
    return cfg.validate()


def run_fraction(
    pretrained_state: dict,
    pretrained_arch: dict,
    train: MultiViewDataset,
    test: MultiViewDataset,
    config: RunConfig,
    fraction: float,
) -> tuple[EvalResult, EvalResult, dict]:
    """Downstream from the shared pre-trained weights, and the baseline, at one label fraction."""
    cfg = _with_fraction(config, fraction)
    net = Network.from_architecture(pretrained_arch)
    net.load_state_dict(pretrained_state)
    net, rep = downstream_train(net, train, cfg)
    base, brep = supervised_baseline(train, cfg)
    budget = {"clmex_steps": rep.final_metrics["total_steps"], "baseline_steps": brep.final_metrics["total_steps"]}
    return evaluate(net, test), evaluate(base, test), budget


def _run_fraction_job(args):
    return run_fraction(*args)


def label_fraction_sweep(
    pretrained: Network,
    train: MultiViewDataset,
    test: MultiViewDataset,
    config: RunConfig,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    cache: Optional[StudyCache] = None,
    jobs: int = 1,
) -> list[dict]:
    """fraction -> (CL-MEx accuracy, supervised accuracy), with matched step budgets."""
    bad = [f for f in fractions if not 0.0 < f <= 1.0]
    if bad:
        raise EvaluationError(f"label fractions must lie in (0, 1]: {bad}")
    cache = cache if cache is not None else StudyCache()
    state, arch = pretrained.state_dict(), pretrained.architecture()
    todo = [f for f in fractions if ("fraction", float(f), config.seed) not in cache.results]
    if jobs > 1 and len(todo) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_run_fraction_job, [(state, arch, train, test, config, f) for f in todo]))
        for f, out in zip(todo, outs):
            cache.results[("fraction", float(f), config.seed)] = out
    rows = []
    for f in fractions:
        clmex_res, base_res, budget = cache.get_or_compute(
            ("fraction", float(f), config.seed), lambda f=f: run_fraction(state, arch, train, test, config, f)
        )
        if budget["clmex_steps"] != budget["baseline_steps"]:
            raise EvaluationError(f"budget mismatch at fraction {f}: {budget}")
        log.info("fraction %.2f: clmex %.3f baseline %.3f", f, clmex_res.overall_accuracy, base_res.overall_accuracy)
        rows.append({
            "fraction": float(f),
            "clmex_accuracy": clmex_res.overall_accuracy,
            "baseline_accuracy": base_res.overall_accuracy,
            **budget,
        })
    return rows


# -- CSV outputs ----------------------------------------------------------------


def write_csv(rows: Sequence[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        raise EvaluationError("nothing to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def write_confusion_csv(result: EvalResult, vocabulary: Sequence[str], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\predicted", *vocabulary])
        for name, row in zip(vocabulary, result.confusion.tolist()):
            w.writerow([name, *row])
    return path

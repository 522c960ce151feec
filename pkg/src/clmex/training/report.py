from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

# wall-clock time is the one field that cannot repeat across runs
NONDETERMINISTIC_FIELDS = ("wall_time",)


@dataclass
class TrainReport:
    stage: str
    seed: int
    config: dict[str, Any]
    records: list[dict[str, Any]] = field(default_factory=list)
    final_metrics: dict[str, Any] = field(default_factory=dict)
    checkpoint_path: Optional[str] = None

    def add(self, **record) -> None:
        if not math.isfinite(record.get("loss", 0.0)):
            raise ValueError(f"non-finite loss in record {record}")
        if self.records and record["epoch"] != self.records[-1]["epoch"] + 1:
            raise ValueError("epoch records must be contiguous")
        self.records.append(record)

    @property
    def total_steps(self) -> int:
        return sum(r.get("steps", 0) for r in self.records)

    def summary(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "seed": self.seed,
            "epochs": len(self.records),
            "total_steps": self.total_steps,
            "final_metrics": self.final_metrics,
            "checkpoint_path": self.checkpoint_path,
            "config": self.config,
        }

    def deterministic_view(self) -> dict[str, Any]:
        """Everything except wall-clock fields, for run-to-run comparison."""
        records = [{k: v for k, v in r.items() if k not in NONDETERMINISTIC_FIELDS} for r in self.records]
        return {"records": records, "summary": self.summary()}

    def write(self, out_dir, name: Optional[str] = None) -> Path:
        """``<name>_report.jsonl`` and ``<name>_summary.json`` hold only reproducible
        fields; wall-clock times go to ``<name>_timing.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        name = name or self.stage
        view = self.deterministic_view()
        with open(out / f"{name}_report.jsonl", "w") as fh:
            for r in view["records"]:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        timings = [{k: r[k] for k in ("epoch", *NONDETERMINISTIC_FIELDS) if k in r} for r in self.records]
        (out / f"{name}_timing.json").write_text(json.dumps(timings, indent=2) + "\n")
        (out / f"{name}_summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return out / f"{name}_report.jsonl"

"""JSONL trace format.

One object per line::

    {"prompt_id": "p00017", "phi": [0.1, -0.3], "lengths": [212, 198, 640], "meta": {"split": "train"}}

``phi`` and ``meta`` are optional.  Ingestion is all-or-nothing: every
problem in the file is collected with its line number and reported in one
``TraceFormatError``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class TraceFormatError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid trace file:\n  " + "\n  ".join(problems))


@dataclass
class TraceRecord:
    prompt_id: str
    lengths: list[int]
    phi: list[float] | None = None
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        obj = {"prompt_id": self.prompt_id}
        if self.phi is not None:
            obj["phi"] = [float(x) for x in self.phi]
        obj["lengths"] = [int(x) for x in self.lengths]
        if self.meta:
            obj["meta"] = {str(k): str(v) for k, v in self.meta.items()}
        return json.dumps(obj, sort_keys=False, separators=(", ", ": "))


def _parse_line(raw: str, lineno: int, problems: list[str]) -> TraceRecord | None:
    where = f"line {lineno}"
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        problems.append(f"{where}: malformed JSON ({exc.msg})")
        return None
    if not isinstance(obj, dict):
        problems.append(f"{where}: expected a JSON object")
        return None
    pid = obj.get("prompt_id")
    if not isinstance(pid, str) or not pid:
        problems.append(f"{where}: missing or non-string prompt_id")
        return None
    if "lengths" not in obj:
        problems.append(f"{where}: missing lengths field")
        return None
    lengths = obj["lengths"]
    if not isinstance(lengths, list) or not lengths:
        problems.append(f"{where}: lengths must be a non-empty list")
        return None
    for x in lengths:
        if isinstance(x, bool) or not isinstance(x, int) and not (isinstance(x, float) and x.is_integer()):
            problems.append(f"{where}: non-integer length {x!r}")
            return None
        if x < 0:
            problems.append(f"{where}: negative length {x!r}")
            return None
    phi = obj.get("phi")
    if phi is not None:
        if not isinstance(phi, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v) for v in phi
        ):
            problems.append(f"{where}: phi must be a list of finite numbers")
            return None
        phi = [float(v) for v in phi]
    meta = obj.get("meta") or {}
    if not isinstance(meta, dict):
        problems.append(f"{where}: meta must be an object")
        return None
    return TraceRecord(prompt_id=pid, lengths=[int(x) for x in lengths], phi=phi, meta=meta)


def ingest(path) -> list[TraceRecord]:
    """Read and validate a JSONL trace file."""
    problems: list[str] = []
    records: list[TraceRecord] = []
    dims: dict[int, int] = {}
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            rec = _parse_line(raw, lineno, problems)
            if rec is None:
                continue
            if rec.prompt_id in seen:
                problems.append(f"line {lineno}: duplicate prompt_id {rec.prompt_id!r} (first on line {seen[rec.prompt_id]})")
                continue
            seen[rec.prompt_id] = lineno
            if rec.phi is not None:
                dims.setdefault(len(rec.phi), lineno)
            records.append(rec)
    if len(dims) > 1:
        desc = ", ".join(f"d={d} (first on line {ln})" for d, ln in sorted(dims.items()))
        problems.append(f"inconsistent phi dimension: {desc}")
    if problems:
        raise TraceFormatError(problems)
    return records


def write_traces(records, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    return path


def prompts_to_traces(prompts, pools, meta_extra: dict | None = None) -> list[TraceRecord]:
    """Synthetic prompts plus their sample pools as trace records."""
    out = []
    for p, pool in zip(prompts, pools):
        meta = dict(meta_extra or {})
        if p.dist is not None:
            meta.update({
                "family": p.dist.family,
                "body_median": repr(p.dist.body_median),
                "tail_weight": repr(p.dist.tail_weight),
            })
        meta["clamped"] = str(int(np.count_nonzero(pool.clamped)))
        out.append(TraceRecord(prompt_id=p.id, lengths=pool.lengths.tolist(), phi=p.phi.tolist(), meta=meta))
    return out

"""Sandbox report ingestion and the canonical trace format.

Only the ``behavior.processes[].calls[].{api,time}`` subset of a Cuckoo v2
report is read. Calls from all processes are merged into one sequence ordered
by timestamp; equal timestamps keep document order (process order, then call
order within the process).
"""

import csv
import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from callgram.exceptions import EmptyTraceError, ReportParseError, SchemaError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class Label(enum.IntEnum):
    BENIGN = 0
    MALICIOUS = 1

    @classmethod
    def parse(cls, token):
        if isinstance(token, Label):
            return token
        if isinstance(token, str):
            try:
                return cls[token.strip().upper()]
            except KeyError:
                pass
        raise SchemaError(f"unknown label token {token!r}; expected 'benign' or 'malicious'")

    @property
    def token(self):
        return self.name.lower()


@dataclass(frozen=True)
class ApiCall:
    name: str
    time: float

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise SchemaError("API call name must be a non-empty string")
        if self.time < 0:
            raise SchemaError(f"negative timestamp {self.time} for {self.name}")


@dataclass
class Trace:
    """One sample's ordered API-call sequence.

    ``meta`` carries provenance (source path, base sample, mutation
    generation, planted pattern spans) and is not used as a feature.
    """

    sample_id: str
    label: Label
    calls: List[ApiCall]
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.label = Label.parse(self.label)
        for prev, cur in zip(self.calls, self.calls[1:]):
            if cur.time < prev.time:
                raise SchemaError(f"trace {self.sample_id}: timestamps are not sorted")

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.calls]

    def __len__(self):
        return len(self.calls)

    def to_dict(self) -> dict:
        out = {
            "sample_id": self.sample_id,
            "label": self.label.token,
            "calls": [{"name": c.name, "time": c.time} for c in self.calls],
        }
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "Trace":
        try:
            calls = [ApiCall(c["name"], float(c["time"])) for c in doc["calls"]]
            return cls(doc["sample_id"], Label.parse(doc["label"]), calls, dict(doc.get("meta", {})))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"not a canonical trace document: {exc}") from exc

    @classmethod
    def from_names(cls, sample_id, label, names, dt=0.001, meta=None) -> "Trace":
        """Build a trace with evenly spaced synthetic timestamps."""
        calls = [ApiCall(name, round(i * dt, 6)) for i, name in enumerate(names)]
        return cls(sample_id, Label.parse(label), calls, dict(meta or {}))


@dataclass
class Dataset:
    traces: List[Trace]
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for t in self.traces:
            if t.sample_id in seen:
                raise SchemaError(f"duplicate sample_id {t.sample_id!r}")
            seen.add(t.sample_id)

    def __len__(self):
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)

    @property
    def sample_ids(self) -> List[str]:
        return [t.sample_id for t in self.traces]

    @property
    def labels(self) -> List[int]:
        return [int(t.label) for t in self.traces]

    def class_counts(self) -> Dict[str, int]:
        counts = {lab.token: 0 for lab in Label}
        for t in self.traces:
            counts[t.label.token] += 1
        return counts

    def subset(self, sample_ids) -> "Dataset":
        """Traces whose id is in ``sample_ids``, in dataset order."""
        wanted = set(sample_ids)
        return Dataset([t for t in self.traces if t.sample_id in wanted], dict(self.provenance))


def _load_json(raw: Union[bytes, str]):
    if isinstance(raw, bytes):
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ReportParseError("report is not valid UTF-8", exc.start) from exc
    else:
        text = raw
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ReportParseError(f"malformed JSON: {exc.msg}", offset) from exc


def parse_report(raw: Union[bytes, str], label, sample_id: Optional[str] = None) -> Trace:
    """Parse a sandbox behavior report into a :class:`Trace`.

    Raises ReportParseError for malformed JSON, SchemaError when the behavior
    section is missing or malformed, EmptyTraceError when no calls exist.
    """
    doc = _load_json(raw)
    if not isinstance(doc, dict) or not isinstance(doc.get("behavior"), dict):
        raise SchemaError("report has no 'behavior' section")
    processes = doc["behavior"].get("processes")
    if not isinstance(processes, list):
        raise SchemaError("'behavior.processes' must be a list")

    keyed = []
    for p_idx, proc in enumerate(processes):
        calls = proc.get("calls", []) if isinstance(proc, dict) else None
        if not isinstance(calls, list):
            raise SchemaError(f"process {p_idx}: 'calls' must be a list")
        for c_idx, call in enumerate(calls):
            try:
                api, t = call["api"], call["time"]
            except (KeyError, TypeError) as exc:
                raise SchemaError(f"process {p_idx} call {c_idx}: missing 'api' or 'time'") from exc
            if not isinstance(api, str) or isinstance(t, bool) or not isinstance(t, (int, float)):
                raise SchemaError(f"process {p_idx} call {c_idx}: bad field types")
            keyed.append((float(t), p_idx, c_idx, api))
    if not keyed:
        raise EmptyTraceError("report contains zero API calls")

    # (time, process index, call index) is the document-order tie-break
    keyed.sort(key=lambda k: k[:3])
    if sample_id is None:
        target = doc.get("target", {}).get("file", {}) if isinstance(doc.get("target"), dict) else {}
        sample_id = str(target.get("sha256") or doc.get("info", {}).get("id", "sample"))
    return Trace(sample_id, Label.parse(label), [ApiCall(api, t) for t, _, _, api in keyed])


def read_trace_file(path: PathLike, label=None, sample_id: Optional[str] = None) -> Trace:
    """Read either a canonical trace file or a raw sandbox report."""
    raw = Path(path).read_bytes()
    doc = _load_json(raw)
    if isinstance(doc, dict) and "calls" in doc and "sample_id" in doc:
        trace = Trace.from_dict(doc)
        if sample_id is not None:
            trace.sample_id = sample_id
        if label is not None:
            trace.label = Label.parse(label)
        return trace
    if label is None:
        raise SchemaError(f"{path}: raw report needs a label")
    trace = parse_report(raw, label, sample_id=sample_id)
    trace.meta["source"] = str(path)
    return trace


def write_trace_file(trace: Trace, path: PathLike) -> None:
    Path(path).write_text(json.dumps(trace.to_dict(), sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(manifest: PathLike) -> List[Tuple[str, str, Label]]:
    """Rows of a headerless ``sample_id,relative_path,label`` manifest."""
    rows = []
    seen = set()
    with open(manifest, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3:
                raise SchemaError(f"{manifest}:{lineno}: expected 3 fields, got {len(row)}")
            sample_id, rel, token = (cell.strip() for cell in row)
            if sample_id in seen:
                raise SchemaError(f"{manifest}:{lineno}: duplicate sample_id {sample_id!r}")
            seen.add(sample_id)
            rows.append((sample_id, rel, Label.parse(token)))
    return rows


def write_manifest(rows, manifest: PathLike) -> None:
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for sample_id, rel, label in rows:
            writer.writerow([sample_id, rel, Label.parse(label).token])


def load_dataset(directory: PathLike, manifest: PathLike) -> Tuple[Dataset, List[Tuple[str, str]]]:
    """Load every manifest row, resolving paths against ``directory``.

    Returns the dataset and a list of ``(sample_id, reason)`` for rows whose
    file could not be read or parsed. Duplicate ids and unknown labels are
    hard errors.
    """
    directory = Path(directory)
    traces, skipped = [], []
    for sample_id, rel, label in read_manifest(manifest):
        path = directory / rel
        try:
            traces.append(read_trace_file(path, label=label, sample_id=sample_id))
        except (OSError, ReportParseError, EmptyTraceError, SchemaError) as exc:
            logger.warning("skipping %s (%s): %s", sample_id, path, exc)
            skipped.append((sample_id, str(exc)))
    provenance = {"manifest": str(manifest), "directory": str(directory), "skipped": len(skipped)}
    return Dataset(traces, provenance), skipped

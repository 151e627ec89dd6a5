"""Reading and writing records, decisions and JSON artifacts."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from .model import DatasetError, FilterDecision, SampleRecord, ScoredGeneration


def record_from_json(obj: dict) -> SampleRecord:
    gens = tuple(
        ScoredGeneration(
            gen_id=str(g["gen_id"]),
            surrogate=_num(g["surrogate"]),
            gold=None if g.get("gold") is None else _num(g["gold"]),
            smoothed_surrogate=None if g.get("smoothed") is None else _num(g["smoothed"]),
        )
        for g in obj["generations"]
    )
    return SampleRecord(
        sample_id=str(obj["sample_id"]),
        embedding=tuple(_num(v) for v in obj["embedding"]),
        label=str(obj.get("label", "")),
        generations=gens,
    )


def record_to_json(rec: SampleRecord) -> dict:
    gens = []
    for g in rec.generations:
        item = {"gen_id": g.gen_id, "surrogate": g.surrogate, "gold": g.gold}
        if g.smoothed_surrogate is not None:
            item["smoothed"] = g.smoothed_surrogate
        gens.append(item)
    return {
        "sample_id": rec.sample_id,
        "embedding": list(rec.embedding),
        "label": rec.label,
        "generations": gens,
    }


def _num(x) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise TypeError(f"expected a number, got {x!r}")
    return float(x)


def read_jsonl(path) -> list[SampleRecord]:
    records, errors = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(record_from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                errors.append(f"{path}:{lineno}: {exc}")
    if errors:
        raise DatasetError(errors)
    return records


def read_csv(path) -> list[SampleRecord]:
    """Long-format CSV: one row per generation, embedding repeated per row."""
    by_id: dict[str, dict] = {}
    errors = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        emb_cols = sorted(
            (c for c in reader.fieldnames or [] if c.startswith("emb_")),
            key=lambda c: int(c[4:]),
        )
        for lineno, row in enumerate(reader, 2):
            try:
                sid = row["sample_id"]
                emb = tuple(float(row[c]) for c in emb_cols)
                gold = row.get("gold", "")
                gen = ScoredGeneration(
                    gen_id=row["gen_id"],
                    surrogate=float(row["surrogate"]),
                    gold=None if gold in ("", None) else float(gold),
                )
            except (KeyError, ValueError) as exc:
                errors.append(f"{path}:{lineno}: {exc}")
                continue
            entry = by_id.setdefault(sid, {"embedding": emb, "label": row.get("label", ""), "gens": []})
            if entry["embedding"] != emb:
                errors.append(f"{path}:{lineno}: embedding differs across rows of {sid}")
            entry["gens"].append(gen)
    if errors:
        raise DatasetError(errors)
    return [
        SampleRecord(sample_id=sid, embedding=e["embedding"], label=e["label"], generations=tuple(e["gens"]))
        for sid, e in by_id.items()
    ]


def read_records(path) -> list[SampleRecord]:
    if str(path).endswith(".csv"):
        return read_csv(path)
    return read_jsonl(path)


def dumps(obj) -> str:
    # repr-based float formatting round-trips exactly
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path, rows: Iterable[dict]) -> None:
    atomic_write(path, "".join(dumps(r) + "\n" for r in rows))


def write_records(path, records: Sequence[SampleRecord]) -> None:
    write_jsonl(path, (record_to_json(r) for r in records))


def write_decisions(path, decisions: Sequence[FilterDecision]) -> None:
    write_jsonl(path, (d.to_json() for d in decisions))


def read_decisions(path) -> list[FilterDecision]:
    with open(path, encoding="utf-8") as fh:
        return [FilterDecision.from_json(json.loads(line)) for line in fh if line.strip()]


def write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()

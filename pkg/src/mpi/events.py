"""Append-only persistence: TAB-separated event log plus periodic
snapshots, both plain files. Recovery = load last snapshot, replay the
events after it; the result must be byte-identical to the pre-crash state.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional

from .errors import MalformedInput
from .registry import Registry

EVENT_LOG_NAME = "events.log"
SNAPSHOT_NAME = "snapshot.mpi"
SNAPSHOT_HEADER = "MPIv1"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def format_event_line(event: dict) -> str:
    return "\t".join([
        str(event["seq"]), event["at"], event["actor"], event["type"],
        canonical_json(event["payload"]),
    ]) + "\n"


def parse_event_line(line: str) -> dict:
    parts = line.rstrip("\n").split("\t", 4)
    if len(parts) != 5:
        raise MalformedInput(f"bad event line: {line!r}")
    return {
        "seq": int(parts[0]),
        "at": parts[1],
        "actor": parts[2],
        "type": parts[3],
        "payload": json.loads(parts[4]),
    }


class EventLog:
    """One event per line; every append is flushed and fsynced before the
    caller acknowledges the mutation."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, event: dict) -> None:
        self._fh.write(format_event_line(event))
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()

    @staticmethod
    def read_events(path, after_seq: int = 0) -> list:
        path = Path(path)
        if not path.exists():
            return []
        events = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                if not line.endswith("\n"):
                    break  # torn tail write from a crash; ignore the partial record
                event = parse_event_line(line)
                if event["seq"] > after_seq:
                    events.append(event)
        return events


def snapshot_bytes(registry: Registry) -> bytes:
    return (SNAPSHOT_HEADER + "\n" + canonical_json(registry.state_dict()) + "\n").encode("utf-8")


def write_snapshot(path, registry: Registry) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_bytes(snapshot_bytes(registry))
    os.replace(tmp, path)


def load_snapshot(path) -> Optional[dict]:
    path = Path(path)
    if not path.exists():
        return None
    text = path.read_text(encoding="utf-8")
    header, _, body = text.partition("\n")
    if header != SNAPSHOT_HEADER:
        raise MalformedInput(f"snapshot header {header!r} is not {SNAPSHOT_HEADER!r}")
    return json.loads(body)


def open_registry(data_dir, clock=None) -> tuple:
    """Recover registry state from ``data_dir`` and attach a live event log.

    Returns (registry, event_log).
    """
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    registry = Registry(clock=clock)
    state = load_snapshot(data_dir / SNAPSHOT_NAME)
    if state is not None:
        registry.load_state(state)
    registry.replay(EventLog.read_events(data_dir / EVENT_LOG_NAME,
                                         after_seq=registry.event_seq))
    log = EventLog(data_dir / EVENT_LOG_NAME)
    registry.on_event = log.append
    return registry, log

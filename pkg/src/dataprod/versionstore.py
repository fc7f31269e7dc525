"""Append-only, content-addressed commit log for generated artifacts.

Every commit id is the hash of its own header (parent, author, timestamp,
message, payload digests), so any single-byte mutation of stored content or
headers is detectable by ``verify_chain``. The store persists to a plain
directory (objects by digest plus a JSONL commit log) and can materialize the
head as a worktree directory ready to be initialized as a standard
version-control working tree.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from typing import Callable, Optional

from .errors import EmptyArtifactListError, ValidationError


@dataclass(frozen=True)
class Payload:
    name: str        # path-like artifact name, e.g. "sql/q0001/v2.sql"
    digest: str      # sha256 of content
    content: bytes


@dataclass(frozen=True)
class Commit:
    commit_id: str
    parent_id: Optional[str]
    author: str
    timestamp: float
    message: str
    payloads: tuple[Payload, ...]


def _content_digest(content: bytes) -> str:
    return hashlib.sha256(content).hexdigest()


def _commit_digest(parent_id: Optional[str], author: str, timestamp: float,
                   message: str, payloads: tuple[Payload, ...]) -> str:
    header = json.dumps({
        "parent": parent_id,
        "author": author,
        "timestamp": repr(timestamp),
        "message": message,
        "payloads": [[p.name, p.digest] for p in payloads],
    }, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(header.encode("utf-8")).hexdigest()


class VersionStore:
    """Single-writer commit log; readers may traverse history concurrently."""

    def __init__(self, directory: str, clock: Callable[[], float] = time.time):
        self.directory = directory
        self._objects_dir = os.path.join(directory, "objects")
        self._log_path = os.path.join(directory, "commits.jsonl")
        self._clock = clock
        self._commits: dict[str, Commit] = {}
        self._order: list[str] = []
        os.makedirs(self._objects_dir, exist_ok=True)
        self._load()

    # -- persistence ---------------------------------------------------------

    def _load(self) -> None:
        if not os.path.exists(self._log_path):
            return
        with open(self._log_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                payloads = tuple(
                    Payload(name, digest, self._read_object(digest))
                    for name, digest in record["payloads"]
                )
                commit = Commit(record["commit_id"], record["parent_id"],
                                record["author"], record["timestamp"],
                                record["message"], payloads)
                self._commits[commit.commit_id] = commit
                self._order.append(commit.commit_id)

    def _object_path(self, digest: str) -> str:
        return os.path.join(self._objects_dir, digest)

    def _read_object(self, digest: str) -> bytes:
        with open(self._object_path(digest), "rb") as fh:
            return fh.read()

    def _write_object(self, digest: str, content: bytes) -> None:
        path = self._object_path(digest)
        if not os.path.exists(path):
            with open(path, "wb") as fh:
                fh.write(content)

    # -- writes -----------------------------------------------------------------

    @property
    def head(self) -> Optional[str]:
        return self._order[-1] if self._order else None

    def __len__(self) -> int:
        return len(self._order)

    def commit(self, artifacts: dict[str, bytes] | list[tuple[str, bytes]],
               author: str, message: str) -> str:
        """Record a new head commit of the given named artifacts."""
        items = list(artifacts.items()) if isinstance(artifacts, dict) else list(artifacts)
        if not items:
            raise EmptyArtifactListError("a commit requires at least one artifact")
        names = [name for name, _ in items]
        if len(names) != len(set(names)):
            raise ValidationError("artifact names must be unique within a commit")
        payloads = tuple(
            Payload(name, _content_digest(content), content)
            for name, content in sorted(items)
        )
        timestamp = self._clock()
        commit_id = _commit_digest(self.head, author, timestamp, message, payloads)
        commit = Commit(commit_id, self.head, author, timestamp, message, payloads)
        for payload in payloads:
            self._write_object(payload.digest, payload.content)
        with open(self._log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({
                "commit_id": commit.commit_id,
                "parent_id": commit.parent_id,
                "author": commit.author,
                "timestamp": commit.timestamp,
                "message": commit.message,
                "payloads": [[p.name, p.digest] for p in commit.payloads],
            }, sort_keys=True) + "\n")
        self._commits[commit_id] = commit
        self._order.append(commit_id)
        return commit_id

    # -- reads ------------------------------------------------------------------

    def get(self, commit_id: str) -> Commit:
        return self._commits[commit_id]

    def log(self) -> list[Commit]:
        return [self._commits[cid] for cid in self._order]

    def verify_chain(self) -> bool:
        """True iff every commit id recomputes from its fields, every payload
        digest matches the stored object, and every parent resolves."""
        previous: Optional[str] = None
        for cid in self._order:
            commit = self._commits[cid]
            if commit.parent_id != previous:
                return False
            if commit.parent_id is not None and commit.parent_id not in self._commits:
                return False
            for payload in commit.payloads:
                try:
                    content = self._read_object(payload.digest)
                except OSError:
                    return False
                if _content_digest(content) != payload.digest:
                    return False
            recomputed = _commit_digest(commit.parent_id, commit.author,
                                        commit.timestamp, commit.message,
                                        commit.payloads)
            if recomputed != commit.commit_id:
                return False
            previous = cid
        return True

    def head_tree(self) -> dict[str, bytes]:
        """Artifact name -> content at head, folding history from the root."""
        tree: dict[str, bytes] = {}
        for cid in self._order:
            for payload in self._commits[cid].payloads:
                tree[payload.name] = payload.content
        return tree

    def export_worktree(self, directory: str) -> None:
        """Materialize head artifacts under the standard layout
        (questions/, sql/, views/, topics/), one artifact per file."""
        for sub in ("questions", "sql", "views", "topics"):
            os.makedirs(os.path.join(directory, sub), exist_ok=True)
        for name, content in sorted(self.head_tree().items()):
            relative = name.replace("/", os.sep)
            if os.path.isabs(relative) or ".." in name.split("/"):
                raise ValidationError(f"unsafe artifact name {name!r}")
            path = os.path.join(directory, relative)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(path, "wb") as fh:
                fh.write(content)

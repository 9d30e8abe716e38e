"""SHA-256 integrity digests and run-scoped interaction logs.

Text is hashed as UTF-8 bytes with no newline normalization; timestamps are
RFC-3339 UTC at second precision. Logs are append-only: records are added in
started_at order and never mutated.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

from .bundle import InputBundle, canonical_bytes
from .errors import InvalidLabel, MalformedSyntax
from .invoke import ModelConfig, utc_now_rfc3339
from .template import Stage

if TYPE_CHECKING:
    from .invoke import Invocation

RUN_ID_RE = re.compile(r"^ro-[a-z0-9-]+$")
_LABEL_RE = re.compile(r"^[a-z0-9-]+$")
_HEX_RE = re.compile(r"^[0-9a-f]{64}$")


@dataclass(frozen=True)
class Digest:
    hex: str
    algorithm: str = "sha256"

    def __post_init__(self):
        if self.algorithm != "sha256":
            raise ValueError(f"unsupported digest algorithm: {self.algorithm}")
        if not _HEX_RE.match(self.hex):
            raise ValueError("digest hex must be 64 lowercase hexadecimal characters")

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm, "hex": self.hex}

    @classmethod
    def from_dict(cls, data: dict) -> "Digest":
        return cls(hex=data["hex"], algorithm=data.get("algorithm", "sha256"))


def sha256_hex(data: bytes) -> Digest:
    return Digest(hex=hashlib.sha256(data).hexdigest())


def sha256_of_text(text: str) -> Digest:
    return sha256_hex(text.encode("utf-8"))


@dataclass(frozen=True)
class InvocationRecord:
    """One logged model interaction; digests are always present, raw texts optional."""

    stage: Stage
    config: ModelConfig
    prompt_sha256: Digest
    response_sha256: Digest
    bundle_sha256: Digest
    started_at: str
    ended_at: str
    attempt: int
    prompt_text: str | None = None
    response_text: str | None = None
    source_paths: tuple[str, ...] | None = None
    host_id: str | None = None

    def linkage_findings(self) -> list[str]:
        """Violations of the raw-text/digest linkage invariant.

        Records loaded from disk are evidence and must stay loadable even when
        tampered; callers that care (verification) check this explicitly.
        record_invocation computes digests from the texts, so records it
        creates always pass.
        """
        findings = []
        if self.prompt_text is not None and sha256_of_text(self.prompt_text) != self.prompt_sha256:
            findings.append("prompt_text does not re-hash to prompt_sha256")
        if (self.response_text is not None
                and sha256_of_text(self.response_text) != self.response_sha256):
            findings.append("response_text does not re-hash to response_sha256")
        return findings

    def to_dict(self) -> dict:
        data = {
            "stage": self.stage.value,
            "config": self.config.to_dict(),
            "prompt_sha256": self.prompt_sha256.to_dict(),
            "response_sha256": self.response_sha256.to_dict(),
            "bundle_sha256": self.bundle_sha256.to_dict(),
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "attempt": self.attempt,
        }
        if self.prompt_text is not None:
            data["prompt_text"] = self.prompt_text
        if self.response_text is not None:
            data["response_text"] = self.response_text
        if self.source_paths is not None:
            data["source_paths"] = list(self.source_paths)
        if self.host_id is not None:
            data["host_id"] = self.host_id
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "InvocationRecord":
        paths = data.get("source_paths")
        return cls(stage=Stage(data["stage"]),
                   config=ModelConfig.from_dict(data["config"]),
                   prompt_sha256=Digest.from_dict(data["prompt_sha256"]),
                   response_sha256=Digest.from_dict(data["response_sha256"]),
                   bundle_sha256=Digest.from_dict(data["bundle_sha256"]),
                   started_at=data["started_at"],
                   ended_at=data["ended_at"],
                   attempt=data["attempt"],
                   prompt_text=data.get("prompt_text"),
                   response_text=data.get("response_text"),
                   source_paths=tuple(paths) if paths is not None else None,
                   host_id=data.get("host_id"))


@dataclass
class InteractionLog:
    run_id: str
    records: list[InvocationRecord] = field(default_factory=list)
    created_at: str = field(default_factory=utc_now_rfc3339)

    def __post_init__(self):
        if not RUN_ID_RE.match(self.run_id):
            raise ValueError(f"run_id must match 'ro-' + lowercase alphanumerics/hyphens, "
                             f"got {self.run_id!r}")
        for earlier, later in zip(self.records, self.records[1:]):
            if later.started_at < earlier.started_at:
                raise ValueError("records must be ordered by started_at, nondecreasing")

    def append(self, record: InvocationRecord) -> None:
        if self.records and record.started_at < self.records[-1].started_at:
            raise ValueError("record started_at precedes the last logged record")
        self.records.append(record)

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "created_at": self.created_at,
                "records": [record.to_dict() for record in self.records]}

    def to_bytes(self) -> bytes:
        return (json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n").encode("utf-8")

    def canonical_bytes(self) -> bytes:
        """Compact sorted-key form: the input to the log's own digest."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"),
                          ensure_ascii=False).encode("utf-8")


def parse_log(raw: bytes) -> InteractionLog:
    try:
        data = json.loads(raw.decode("utf-8"))
        return InteractionLog(run_id=data["run_id"], created_at=data["created_at"],
                              records=[InvocationRecord.from_dict(r) for r in data["records"]])
    except (ValueError, KeyError, TypeError) as err:
        raise MalformedSyntax(f"interaction log unreadable: {err}") from err


def record_invocation(invocation: "Invocation", bundle: InputBundle,
                      paths: Sequence[str] | None = None,
                      host: str | None = None) -> InvocationRecord:
    """Bind an invocation to the bundle with a digest triple; retains raw texts."""
    return InvocationRecord(
        stage=invocation.stage,
        config=invocation.config,
        prompt_sha256=sha256_of_text(invocation.prompt.text),
        response_sha256=sha256_of_text(invocation.response_text),
        bundle_sha256=sha256_hex(canonical_bytes(bundle)),
        started_at=invocation.started_at,
        ended_at=invocation.ended_at,
        attempt=invocation.attempt,
        prompt_text=invocation.prompt.text,
        response_text=invocation.response_text,
        source_paths=tuple(paths) if paths is not None else None,
        host_id=host,
    )


def new_run(label: str) -> str:
    """Normalize a label into a run id: lowercased, whitespace -> hyphens, 'ro-' prefix."""
    normalized = re.sub(r"\s+", "-", label.strip().lower())
    if not normalized or not _LABEL_RE.match(normalized):
        raise InvalidLabel(f"label must reduce to lowercase alphanumerics/hyphens, got {label!r}")
    run_id = f"ro-{normalized}"
    if not RUN_ID_RE.match(run_id):
        raise InvalidLabel(f"label {label!r} does not normalize to a valid run id")
    return run_id

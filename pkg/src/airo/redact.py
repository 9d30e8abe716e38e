"""Tiered log redaction for blind review.

Raw prompts/responses collapse to their integrity hashes, timestamps and
local path/host identifiers are removed, and backend endpoints are
generalized. The digest triples are carried over bitwise so a redacted log
stays verifiable against the artifacts it describes.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence
from urllib.parse import urlsplit

from .errors import MalformedSyntax
from .invoke import ModelConfig
from .provenance import Digest, InteractionLog, sha256_hex
from .template import Stage

GENERALIZED_ENDPOINT = "generalized-endpoint"


class Tier(Enum):
    PUBLIC = "public"
    REVIEWER = "reviewer"
    AUDITOR = "auditor"


@dataclass(frozen=True)
class RedactionPolicy:
    tier: Tier
    drop_timestamps: bool
    drop_raw_text: bool
    drop_paths_and_host: bool
    generalize_endpoint: bool

    def __post_init__(self):
        if self.tier in (Tier.PUBLIC, Tier.REVIEWER):
            if not (self.drop_timestamps and self.drop_raw_text
                    and self.drop_paths_and_host and self.generalize_endpoint):
                raise ValueError(f"{self.tier.value} tier requires all redaction flags set")
        else:  # auditor keeps raw text, still drops attribution material
            if not (self.drop_timestamps and self.drop_paths_and_host):
                raise ValueError("auditor tier requires dropping timestamps and paths/host")
            if self.drop_raw_text:
                raise ValueError("auditor tier retains raw text")

    @classmethod
    def for_tier(cls, tier: Tier | str) -> "RedactionPolicy":
        tier = Tier(tier) if isinstance(tier, str) else tier
        keep_text = tier is Tier.AUDITOR
        return cls(tier=tier, drop_timestamps=True, drop_raw_text=not keep_text,
                   drop_paths_and_host=True, generalize_endpoint=True)

    def to_dict(self) -> dict:
        return {"tier": self.tier.value, "drop_timestamps": self.drop_timestamps,
                "drop_raw_text": self.drop_raw_text,
                "drop_paths_and_host": self.drop_paths_and_host,
                "generalize_endpoint": self.generalize_endpoint}

    @classmethod
    def from_dict(cls, data: dict) -> "RedactionPolicy":
        return cls(tier=Tier(data["tier"]), drop_timestamps=data["drop_timestamps"],
                   drop_raw_text=data["drop_raw_text"],
                   drop_paths_and_host=data["drop_paths_and_host"],
                   generalize_endpoint=data["generalize_endpoint"])


@dataclass(frozen=True)
class RedactedRecord:
    stage: Stage
    config: ModelConfig
    prompt_sha256: Digest
    response_sha256: Digest
    bundle_sha256: Digest
    attempt: int
    prompt_text: str | None = None
    response_text: str | None = None

    def to_dict(self) -> dict:
        data = {"stage": self.stage.value, "config": self.config.to_dict(),
                "prompt_sha256": self.prompt_sha256.to_dict(),
                "response_sha256": self.response_sha256.to_dict(),
                "bundle_sha256": self.bundle_sha256.to_dict(),
                "attempt": self.attempt}
        if self.prompt_text is not None:
            data["prompt_text"] = self.prompt_text
        if self.response_text is not None:
            data["response_text"] = self.response_text
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RedactedRecord":
        return cls(stage=Stage(data["stage"]), config=ModelConfig.from_dict(data["config"]),
                   prompt_sha256=Digest.from_dict(data["prompt_sha256"]),
                   response_sha256=Digest.from_dict(data["response_sha256"]),
                   bundle_sha256=Digest.from_dict(data["bundle_sha256"]),
                   attempt=data["attempt"],
                   prompt_text=data.get("prompt_text"),
                   response_text=data.get("response_text"))


@dataclass(frozen=True)
class RedactedLog:
    run_id: str
    records: tuple[RedactedRecord, ...]
    policy: RedactionPolicy
    redacted_from_sha256: Digest

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "policy": self.policy.to_dict(),
                "redacted_from_sha256": self.redacted_from_sha256.to_dict(),
                "records": [record.to_dict() for record in self.records]}

    def to_bytes(self) -> bytes:
        return (json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def parse_redacted_log(raw: bytes) -> RedactedLog:
    try:
        data = json.loads(raw.decode("utf-8"))
        return RedactedLog(run_id=data["run_id"],
                           policy=RedactionPolicy.from_dict(data["policy"]),
                           redacted_from_sha256=Digest.from_dict(data["redacted_from_sha256"]),
                           records=tuple(RedactedRecord.from_dict(r) for r in data["records"]))
    except (ValueError, KeyError, TypeError) as err:
        raise MalformedSyntax(f"redacted log unreadable: {err}") from err


_IP_HOST_RE = re.compile(r"^[\d.:\[\]]+$")


def generalize_endpoint(endpoint: str, tier: Tier) -> str:
    """Scheme + registrable domain at reviewer/auditor tier; a constant for public.

    The registrable domain is approximated by the last two host labels; IP
    hosts carry direct attribution and collapse to the constant.
    """
    if tier is Tier.PUBLIC:
        return GENERALIZED_ENDPOINT
    if not endpoint:
        return ""
    split = urlsplit(endpoint)
    host = split.hostname
    if not split.scheme or not host:
        return GENERALIZED_ENDPOINT
    if _IP_HOST_RE.match(host):
        return GENERALIZED_ENDPOINT
    labels = host.split(".")
    registrable = ".".join(labels[-2:]) if len(labels) >= 2 else host
    return f"{split.scheme}://{registrable}"


def _redact_config(config: ModelConfig, policy: RedactionPolicy) -> ModelConfig:
    if not policy.generalize_endpoint:
        return config
    return replace(config, endpoint=generalize_endpoint(config.endpoint, policy.tier))


def redact(log: InteractionLog | RedactedLog, policy: RedactionPolicy) -> RedactedLog:
    """Apply a policy; idempotent when re-applied to an already-redacted log."""
    keep_text = not policy.drop_raw_text
    records = []
    for record in log.records:
        records.append(RedactedRecord(
            stage=record.stage,
            config=_redact_config(record.config, policy),
            prompt_sha256=record.prompt_sha256,
            response_sha256=record.response_sha256,
            bundle_sha256=record.bundle_sha256,
            attempt=record.attempt,
            prompt_text=record.prompt_text if keep_text else None,
            response_text=record.response_text if keep_text else None,
        ))
    if isinstance(log, RedactedLog):
        source_digest = log.redacted_from_sha256
    else:
        source_digest = sha256_hex(log.canonical_bytes())
    return RedactedLog(run_id=log.run_id, records=tuple(records), policy=policy,
                       redacted_from_sha256=source_digest)


@dataclass(frozen=True)
class RedactionFinding:
    field_path: str
    pattern: str
    excerpt: str


# Shapes that should never survive redaction in machine-written fields.
BUILTIN_SHAPES = {
    "timestamp": r"\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}",
    "local path": r"(?:/home/|/Users/|/tmp/|/var/|[A-Za-z]:\\Users\\)\S*",
}


def check_redaction(redacted: RedactedLog,
                    forbidden: Sequence[str] = ()) -> list[RedactionFinding]:
    """Scan every retained text field for forbidden patterns; empty result = pass.

    ``forbidden`` entries are regular expressions (plain substrings work as-is
    unless they contain regex metacharacters).
    """
    patterns = [(name, re.compile(expr)) for name, expr in BUILTIN_SHAPES.items()]
    patterns += [(f"forbidden[{i}]", re.compile(expr)) for i, expr in enumerate(forbidden)]

    findings: list[RedactionFinding] = []

    def walk(value, path: str) -> None:
        if isinstance(value, str):
            for name, pattern in patterns:
                match = pattern.search(value)
                if match:
                    findings.append(RedactionFinding(field_path=path, pattern=name,
                                                     excerpt=match.group(0)[:80]))
        elif isinstance(value, dict):
            for key, item in value.items():
                walk(item, f"{path}.{key}" if path else key)
        elif isinstance(value, list):
            for index, item in enumerate(value):
                walk(item, f"{path}[{index}]")

    walk(redacted.to_dict(), "")
    return findings

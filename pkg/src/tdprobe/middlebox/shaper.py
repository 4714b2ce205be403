"""Per-label token-bucket shaping and the rules/policy file."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from ..errors import ConfigError
from .classifier import Classification, ClassifierRule, PayloadPattern

DEFAULT_WEIGHT = 1.0


@dataclass(frozen=True)
class LabelRate:
    rate_bps: float
    burst_bytes: float

    def __post_init__(self):
        if self.rate_bps <= 0 or self.burst_bytes <= 0:
            raise ValueError("rate_bps and burst_bytes must be positive")


@dataclass(frozen=True)
class ShapingPolicy:
    per_label: Mapping[str, LabelRate] = field(default_factory=dict)
    qos_weights: Mapping[str, float] = field(default_factory=dict)
    link_capacity_bps: float = 1e9

    def __post_init__(self):
        if any(w <= 0 for w in self.qos_weights.values()):
            raise ValueError("qos weights must be positive")
        if self.link_capacity_bps <= 0:
            raise ValueError("link_capacity_bps must be positive")

    def weight(self, label: str) -> float:
        return self.qos_weights.get(label, DEFAULT_WEIGHT)

    def rate_for(self, label: str) -> LabelRate | None:
        return self.per_label.get(label)


@dataclass
class TokenBucket:
    """Bucket state in bytes. ``last_refill`` may sit in the future while a release is pending."""

    tokens: float
    last_refill: float


@dataclass
class FlowState:
    key: tuple
    classification: Classification | None = None
    inspected: bytearray = field(default_factory=bytearray)
    bucket: TokenBucket | None = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def set_classification(self, c: Classification) -> bool:
        """Record the verdict once; later calls are ignored. Returns True if it was set."""
        if self.classification is not None:
            return False
        self.classification = c
        return True


def shape(flow: FlowState, n_bytes: int, now: float, policy: ShapingPolicy) -> float:
    """Seconds to hold ``n_bytes`` of this flow before forwarding them.

    Tokens refill at ``rate_bps / 8`` bytes per second up to the burst size.
    When the bucket holds enough, the bytes go at once; otherwise the delay is
    exactly the time for the missing tokens to accrue, and they are spent at
    that release time. Labels without a policy entry are never delayed.
    """
    if flow.classification is None:
        raise ValueError("flow is not classified")
    lr = policy.rate_for(flow.classification.label)
    if lr is None:
        return 0.0
    rate = lr.rate_bps / 8.0
    b = flow.bucket
    if b is None:
        b = flow.bucket = TokenBucket(tokens=float(lr.burst_bytes), last_refill=now)
    if now > b.last_refill:
        b.tokens = min(float(lr.burst_bytes), b.tokens + (now - b.last_refill) * rate)
        b.last_refill = now
    if b.tokens >= n_bytes:
        b.tokens -= n_bytes
        return 0.0
    # release happens once the deficit has refilled; the bucket is empty then
    release = b.last_refill + (n_bytes - b.tokens) / rate
    b.tokens = 0.0
    b.last_refill = release
    return release - now


# -- rules and policy file -------------------------------------------------

def _parse_pattern(raw, where: str) -> PayloadPattern:
    try:
        offset = raw["offset"]
        data = bytes.fromhex(raw["hex"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: bad payload pattern ({exc})") from None
    if offset == "any":
        return PayloadPattern(None, data)
    if isinstance(offset, bool) or not isinstance(offset, int) or offset < 0:
        raise ConfigError(f"{where}: offset must be a non-negative integer or \"any\"")
    return PayloadPattern(offset, data)


def parse_rules_policy(obj: dict) -> tuple[list[ClassifierRule], ShapingPolicy]:
    if not isinstance(obj, dict):
        raise ConfigError("rules file must be a JSON object")
    rules = []
    try:
        for i, r in enumerate(obj.get("rules", [])):
            pats = tuple(_parse_pattern(p, f"rules[{i}]") for p in r.get("payload_patterns", []))
            rules.append(ClassifierRule(r["label"], tuple(r.get("sni_suffixes", [])), pats))
        pol = obj.get("policy", {})
        per_label = {
            label: LabelRate(float(v["rate_bps"]), float(v["burst_bytes"]))
            for label, v in pol.get("per_label", {}).items()
        }
        policy = ShapingPolicy(
            per_label=per_label,
            qos_weights={k: float(v) for k, v in pol.get("qos_weights", {}).items()},
            link_capacity_bps=float(pol.get("link_capacity_bps", 1e9)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid rules/policy: {exc}") from None
    return rules, policy


def load_rules_policy(path) -> tuple[list[ClassifierRule], ShapingPolicy]:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load rules from {path}: {exc}") from None
    return parse_rules_policy(obj)


def rules_policy_to_obj(rules, policy: ShapingPolicy) -> dict:
    return {
        "rules": [
            {
                "label": r.label,
                "sni_suffixes": list(r.sni_suffixes),
                "payload_patterns": [
                    {"offset": "any" if p.offset is None else p.offset, "hex": p.data.hex()}
                    for p in r.payload_patterns
                ],
            }
            for r in rules
        ],
        "policy": {
            "per_label": {
                k: {"rate_bps": v.rate_bps, "burst_bytes": v.burst_bytes} for k, v in policy.per_label.items()
            },
            "qos_weights": dict(policy.qos_weights),
            "link_capacity_bps": policy.link_capacity_bps,
        },
    }

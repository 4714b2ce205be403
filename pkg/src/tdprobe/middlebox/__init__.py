"""Emulated middlebox: classifier, token-bucket shaper, TCP proxy and link simulators."""

from .classifier import (
    HTTP_UNKNOWN,
    HTTPS_UNKNOWN,
    UNKNOWN,
    Classification,
    ClassifierRule,
    Method,
    PayloadPattern,
    classify,
    port_default,
)
from .proxy import ListenSpec, ShaperProxy, run_shaper_proxy
from .shaper import (
    FlowState,
    LabelRate,
    ShapingPolicy,
    TokenBucket,
    load_rules_policy,
    parse_rules_policy,
    rules_policy_to_obj,
    shape,
)
from .simulator import RateProfile, SharedLinkResult, SimulatedPath, simulate_shared_link

__all__ = [
    "HTTP_UNKNOWN",
    "HTTPS_UNKNOWN",
    "UNKNOWN",
    "Classification",
    "ClassifierRule",
    "Method",
    "PayloadPattern",
    "classify",
    "port_default",
    "ListenSpec",
    "ShaperProxy",
    "run_shaper_proxy",
    "FlowState",
    "LabelRate",
    "ShapingPolicy",
    "TokenBucket",
    "load_rules_policy",
    "parse_rules_policy",
    "rules_policy_to_obj",
    "shape",
    "RateProfile",
    "SharedLinkResult",
    "SimulatedPath",
    "simulate_shared_link",
]

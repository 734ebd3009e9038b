"""Scenario description: topology mode, per-link security and experiment knobs."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import InvalidSuiteForInterface, TopologyError
from .suites import AES_GCM_128, UU_NIA2_NEA2, get_suite

UU, F1U, F1C, E1, N3 = "Uu", "F1-U", "F1-C", "E1", "N3"
INTERFACES = (UU, F1U, F1C, E1, N3)
UP_INTERFACES = {"monolithic": (UU, N3), "disaggregated": (UU, F1U, N3)}
CP_INTERFACES = (F1C, E1)
MODES = ("monolithic", "disaggregated")
TRANSPORTS = ("in-process", "udp-loopback")
EXPERIMENTS = ("up-echo", "cp-procedures", "bench")

# which suite kinds each interface may carry
_ALLOWED_KINDS = {UU: {"uu"}, F1U: {"esp"}, N3: {"esp"}, F1C: {"esp", "dtls"}, E1: {"esp", "dtls"}}


def interfaces_for(mode: str) -> tuple[str, ...]:
    if mode == "monolithic":
        return (UU, N3)
    if mode == "disaggregated":
        return INTERFACES
    raise TopologyError(f"unknown topology mode {mode!r}; expected one of {MODES}")


@dataclass(frozen=True)
class LinkSpec:
    interface_name: str
    security: Optional[str] = None
    transport: str = "in-process"
    added_delay_us: float = 0.0
    port: int = 0
    ciphering: bool = True  # Uu only: False selects integrity-only PDCP

    def __post_init__(self):
        if self.interface_name not in INTERFACES:
            raise TopologyError(f"unknown interface {self.interface_name!r}")
        if self.security in ("", "none"):
            object.__setattr__(self, "security", None)
        if self.transport not in TRANSPORTS:
            raise TopologyError(f"unknown transport {self.transport!r}; expected {TRANSPORTS}")
        if self.added_delay_us < 0:
            raise ValueError("added_delay_us must be >= 0")
        if self.security is not None:
            suite = get_suite(self.security)
            if suite.kind not in _ALLOWED_KINDS[self.interface_name]:
                raise InvalidSuiteForInterface(
                    f"{suite.id} cannot protect {self.interface_name}; allowed: "
                    f"{', '.join(sorted(_ALLOWED_KINDS[self.interface_name]))} suites")

    @property
    def suite(self):
        return None if self.security is None else get_suite(self.security)


@dataclass
class ScenarioConfig:
    mode: str = "disaggregated"
    links: dict = field(default_factory=dict)
    experiment: str = "up-echo"
    repetitions: Optional[int] = None
    payload_size: int = 1024
    warmup: int = 100
    seed: int = 0
    keys: dict = field(default_factory=dict)
    name: Optional[str] = None

    def __post_init__(self):
        interfaces_for(self.mode)
        for iface in interfaces_for(self.mode):
            self.links.setdefault(iface, LinkSpec(iface))
        for iface, spec in self.links.items():
            if iface not in interfaces_for(self.mode) and spec.security is not None:
                raise TopologyError(f"{iface} has no endpoints in a {self.mode} topology")

    def link(self, iface: str) -> LinkSpec:
        return self.links[iface]

    def with_link(self, iface: str, **changes) -> "ScenarioConfig":
        links = dict(self.links)
        links[iface] = replace(links.get(iface, LinkSpec(iface)), **changes)
        return replace(self, links=links)

    @property
    def scenario_id(self) -> str:
        if self.name:
            return self.name
        sec = ",".join(f"{i}={s.security}" for i, s in sorted(self.links.items())
                       if s.security is not None) or "none"
        return f"{self.experiment}:{self.mode}:{sec}"


def preset(mode: str = "disaggregated", secure: str = "none", **kwargs) -> ScenarioConfig:
    """Build a scenario from a security preset.

    ``secure`` is ``none``, ``all`` (NIA2+NEA2 on Uu, AES-GCM-128 on every other
    link of the topology) or a comma list such as ``F1-U=AES-GCM-128,Uu=NIA2+NEA2``.
    """
    links = {iface: LinkSpec(iface) for iface in interfaces_for(mode)}
    for iface, suite in parse_secure(secure, mode).items():
        links[iface] = LinkSpec(iface, suite)
    return ScenarioConfig(mode=mode, links=links, **kwargs)


def parse_secure(secure: str, mode: str) -> dict:
    secure = (secure or "none").strip()
    if secure == "none":
        return {}
    if secure == "all":
        return {iface: (UU_NIA2_NEA2.id if iface == UU else AES_GCM_128.id)
                for iface in interfaces_for(mode)}
    out = {}
    for item in secure.split(","):
        iface, sep, suite = item.partition("=")
        iface = iface.strip()
        if not sep or iface not in INTERFACES:
            raise TopologyError(f"bad security item {item!r}; expected IFACE=SUITE")
        out[iface] = get_suite(suite.strip()).id
    return out

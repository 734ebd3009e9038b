"""Desk-scale emulator of the security layers in monolithic and disaggregated 5G RANs.

Wire codecs, security suites, secured links, a node pipeline, control
procedures, a measurement harness and a crypto benchmark.
"""

from .errors import (AuthenticationError, ConfigError, EchoFailure, ExperimentAborted,
                     IntegrityError, MalformedPacket, ProtectionError, RansecError, ReplayError,
                     UnknownSuite)
from .harness import run_cp_experiment, run_up_experiment
from .procedures import (run_bearer_context_setup, run_registration_sequence,
                         run_ue_context_setup)
from .scenario import LinkSpec, ScenarioConfig, preset
from .stats import StatsSummary, compare_scenarios, confidence_interval, linear_fit, percentile
from .suites import SecuritySuite, get_suite, suite_catalog
from .topology import build_topology, send_echo

__version__ = "0.1.0"

__all__ = [
    "AuthenticationError", "ConfigError", "EchoFailure", "ExperimentAborted", "IntegrityError",
    "LinkSpec", "MalformedPacket", "ProtectionError", "RansecError", "ReplayError",
    "ScenarioConfig", "SecuritySuite", "StatsSummary", "UnknownSuite", "build_topology",
    "compare_scenarios", "confidence_interval", "get_suite", "linear_fit", "percentile",
    "preset", "run_bearer_context_setup", "run_cp_experiment", "run_registration_sequence",
    "run_ue_context_setup", "run_up_experiment", "send_echo", "suite_catalog",
]

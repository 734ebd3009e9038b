"""Echo and control-procedure campaigns reduced to mean and 99% CI.

Only the driver thread reads the clock (``time.perf_counter_ns``, monotonic);
pipeline workers may run concurrently when the topology is started.
"""

from __future__ import annotations

import gc
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from .errors import EchoFailure, ExperimentAborted, RansecError, TopologyError
from .procedures import run_registration_sequence
from .scenario import ScenarioConfig
from .stats import StatsSummary, summarize_ns
from .topology import build_topology

DEFAULT_UP_REPETITIONS = 20000
DEFAULT_CP_REPETITIONS = 1000
DEFAULT_PAYLOAD = 1024
DEFAULT_WARMUP = 100


@dataclass
class UpResult:
    scenario_id: str
    summary: StatsSummary
    ops_per_rtt: dict  # node -> {operation kind: count}
    samples_ns: Optional[list] = None

    def total(self, kind: Optional[str] = None) -> int:
        return sum(n for ops in self.ops_per_rtt.values() for k, n in ops.items()
                   if kind is None or k == kind)

    @property
    def crypto_ops(self) -> int:
        return self.total()

    @property
    def esp_ops(self) -> int:
        return self.total("esp")


@dataclass
class CpResult:
    scenario_id: str
    ue_context: StatsSummary
    bearer_context: StatsSummary
    wire_lengths: dict = field(default_factory=dict)
    samples_ns: Optional[dict] = None
    ops_per_run: dict = field(default_factory=dict)

    @property
    def crypto_ops(self) -> int:
        return sum(self.ops_per_run.values())

    def summaries(self) -> dict:
        return {"UeContextSetup": self.ue_context, "BearerContextSetup": self.bearer_context}


def _check_count(name: str, value: int, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value


def _payload(size: int, seed: int) -> bytes:
    return random.Random(seed).randbytes(size)


def run_up_experiment(scenario: ScenarioConfig, repetitions: int = DEFAULT_UP_REPETITIONS,
                      payload_size: int = DEFAULT_PAYLOAD, warmup: int = DEFAULT_WARMUP,
                      seed: Optional[int] = None, keep_samples: bool = False,
                      threaded: bool = False) -> UpResult:
    """Warmup echoes (discarded), then ``repetitions`` timed back-to-back echoes.

    Per-RTT crypto-op counts come from the first timed echo; every echo of a
    scenario performs the same operations, which the loop asserts.
    """
    _check_count("repetitions", repetitions)
    _check_count("payload_size", payload_size, 0)
    _check_count("warmup", warmup, 0)
    payload = _payload(payload_size, scenario.seed if seed is None else seed)
    samples: list[int] = []
    ops: Optional[Counter] = None
    with build_topology(scenario) as topo:
        if threaded:
            topo.start()
        gc_was = gc.isenabled()
        gc.disable()
        try:
            for _ in range(warmup):
                topo.send_echo(payload)
            for _ in range(repetitions):
                res = topo.send_echo(payload)
                samples.append(res.rtt_ns)
                if ops is None:
                    ops = res.crypto_ops
                elif res.crypto_ops != ops:
                    raise TopologyError(f"crypto ops changed mid-campaign: {ops} -> "
                                        f"{res.crypto_ops}")
        except (EchoFailure, RansecError, OSError) as exc:
            raise ExperimentAborted(len(samples), samples, exc) from exc
        finally:
            if gc_was:
                gc.enable()
    summary = summarize_ns(samples, payload_size=payload_size)
    return UpResult(scenario.scenario_id, summary, dict(ops or {}),
                    samples if keep_samples else None)


def run_cp_experiment(scenario: ScenarioConfig, repetitions: int = DEFAULT_CP_REPETITIONS,
                      warmup: int = 0, keep_samples: bool = False) -> CpResult:
    """Repeated registration sequences; one summary per sub-procedure."""
    _check_count("repetitions", repetitions)
    _check_count("warmup", warmup, 0)
    if scenario.mode != "disaggregated":
        raise TopologyError("control-plane campaigns need a disaggregated scenario")
    ue, bearer = [], []
    lengths: dict = {}
    with build_topology(scenario) as topo:
        gc_was = gc.isenabled()
        gc.disable()  # as for echoes: no collector pauses inside a timed procedure
        try:
            for _ in range(warmup):
                run_registration_sequence(topo, install=False)
            for _ in range(repetitions):
                reg = run_registration_sequence(topo, install=False)
                ue.append(reg.ue_context.duration_ns)
                bearer.append(reg.bearer_context.duration_ns)
        except RansecError as exc:
            raise ExperimentAborted(len(ue), ue, exc) from exc
        finally:
            if gc_was:
                gc.enable()
        lengths = {t.procedure: [e.wire_length for e in t.entries]
                   for t in (reg.ue_context, reg.bearer_context)}
        totals = sum((Counter(n.ops) for n in topo.nodes.values()), Counter())
    runs = warmup + repetitions
    if any(v % runs for v in totals.values()):
        raise TopologyError(f"uneven crypto ops across registrations: {dict(totals)}")
    return CpResult(scenario.scenario_id, summarize_ns(ue), summarize_ns(bearer), lengths,
                    {"UeContextSetup": ue, "BearerContextSetup": bearer} if keep_samples
                    else None, {k: v // runs for k, v in totals.items() if v})


def write_samples(path, samples_ns) -> None:
    """Raw-sample file: one duration per line, integer nanoseconds."""
    with open(path, "w") as fh:
        fh.writelines(f"{int(s)}\n" for s in samples_ns)


def read_samples(path) -> list[int]:
    with open(path) as fh:
        return [int(line) for line in fh if line.strip()]

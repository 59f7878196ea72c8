"""Scripted adversary and honest-run suites shared by the tests and the CLI.

Each case is a config plus the rejection it must provoke. A case counts as
detected when the expected reason shows up as a drop in the trace and, for
integrity attacks, the source never accepts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from .netsim import AdversaryScript, ScenarioConfig, SimResult, simulate
from .roles import Scenario
from .wire import HOP_BITS, REPLY_BITS, REQUEST_BITS

HONEST_CASES = (
    (Scenario.DD2D, 2),
    (Scenario.RD2D, 3),
    (Scenario.RD2D, 4),
    (Scenario.RD2D, 5),
    (Scenario.DD2DW, 2),
    (Scenario.RD2DW, 3),
    (Scenario.RD2DW, 4),
    (Scenario.RD2DW, 5),
)

# reasons a role may log when it refuses a packet
PROTOCOL_REASONS = frozenset(
    {
        "MalformedPacket",
        "NotAddressed",
        "SpoofedSource",
        "UnexpectedRequest",
        "UnknownSubscriber",
        "NotInProximity",
        "NoPendingRequest",
        "NoSessionKey",
        "ReplayedId",
        "StaleTimestamp",
        "BadSourceMac",
        "BadHashChain",
        "BadRelayMac",
        "BadReplyMac",
        "BadDisclosedKey",
        "DisclosureTooEarly",
    }
)


@dataclass(frozen=True)
class AttackCase:
    name: str
    config: ScenarioConfig = field(compare=False)
    expect: Optional[str] = None
    must_block: bool = True


@dataclass(frozen=True)
class AttackOutcome:
    case: AttackCase
    accepted: bool
    reasons: tuple[str, ...]

    @property
    def detected(self) -> bool:
        if self.case.must_block and self.accepted:
            return False
        if self.case.expect is not None:
            return self.case.expect in self.reasons
        return any(r in PROTOCOL_REASONS for r in self.reasons)


def honest_config(scenario: Scenario, n: int, seed: int = 0, eavesdrop: bool = True, **hooks) -> ScenarioConfig:
    script = AdversaryScript.parse(["* eavesdrop_all"] if eavesdrop else [])
    return ScenarioConfig(scenario, n, seed=seed, adversary=script, hooks=dict(hooks))


def _config(scenario: Scenario, n: int, lines: Iterable[str], seed: int = 0, **hooks) -> ScenarioConfig:
    return ScenarioConfig(scenario, n, seed=seed, adversary=AdversaryScript.parse(list(lines)), hooks=dict(hooks))


def request_bits(n: int) -> int:
    """Size of the request as it reaches the destination on a line of n nodes."""
    return REQUEST_BITS + HOP_BITS * (n - 2)


def tamper_cases(scenario: Scenario, n: int, seed: int = 0) -> Iterator[AttackCase]:
    """One case per bit of the request the destination receives.

    On relayed lines the first hop (source to first relay) is swept as well.
    """
    for bit in range(request_bits(n)):
        yield AttackCase(
            f"tamper-{scenario.value}-n{n}-to-destination-bit{bit}",
            _config(scenario, n, [f"* tamper kind=request to={n} bit={bit}"], seed),
        )
    if scenario.relayed:
        for bit in range(REQUEST_BITS):
            yield AttackCase(
                f"tamper-{scenario.value}-n{n}-first-hop-bit{bit}",
                _config(scenario, n, [f"* tamper kind=request from=1 to=2 bit={bit}"], seed),
            )


def scripted_cases(seed: int = 0) -> list[AttackCase]:
    """Replay, delay, forgery and early-disclosure attacks on every scenario."""
    cases = []
    for scenario, n in ((Scenario.DD2D, 2), (Scenario.RD2D, 4), (Scenario.DD2DW, 2), (Scenario.RD2DW, 4)):
        tag = f"{scenario.value}-n{n}"
        last_sender = n - 1
        first_hop = 2
        cases += [
            AttackCase(
                f"replay-request-{tag}",
                _config(scenario, n, [f"* replay kind=request from={last_sender} to={n}"], seed),
                "ReplayedId",
                must_block=False,
            ),
            AttackCase(
                f"replay-reply-{tag}",
                _config(scenario, n, ["* replay kind=reply from=2 to=1"], seed),
                "ReplayedId",
                must_block=False,
            ),
            AttackCase(
                f"delayed-request-{tag}",
                _config(
                    scenario,
                    n,
                    ["* drop kind=request from=1 count=1", f"12 replay kind=request from=1 to={first_hop}"],
                    seed,
                ),
                "StaleTimestamp",
            ),
            AttackCase(
                f"forged-reply-mac-{tag}",
                _config(scenario, n, ["* tamper kind=reply to=1 bit=40"], seed),
                "BadReplyMac",
            ),
            AttackCase(
                f"garbage-injection-{tag}",
                _config(scenario, n, [f"3 inject to={first_hop} hex={'1f' * 70}"], seed),
                "MalformedPacket",
                must_block=False,
            ),
        ]
        if scenario.relayed:
            mac_bit = REQUEST_BITS + 8
            cases += [
                AttackCase(
                    f"forged-relay-mac-{tag}",
                    _config(scenario, n, [f"* tamper kind=request to={n} bit={mac_bit}"], seed),
                    "BadRelayMac",
                ),
                AttackCase(
                    f"tampered-disclosed-key-{tag}",
                    _config(scenario, n, [f"* tamper kind=reply from=2 to=1 bit={REPLY_BITS + HOP_BITS * (n - 2) + 8}"], seed),
                    "BadDisclosedKey",
                ),
            ]
        if scenario is Scenario.RD2D:
            # every W-variant party waits out the same delay, so only here can a reply outrun a relay key
            cases.append(
                AttackCase(
                    f"early-disclosure-{tag}",
                    _config(scenario, n, [], seed, early_disclosure="on", tesla_delay="6"),
                    "DisclosureTooEarly",
                )
            )
    return cases


def run_case(case: AttackCase) -> AttackOutcome:
    result = simulate(case.config)
    reasons = tuple(e.detail.get("reason", "") for e in result.trace.of_kind("drop"))
    return AttackOutcome(case, result.accepted, reasons)


def run_honest(scenario: Scenario, n: int, seed: int = 0, **hooks) -> SimResult:
    return simulate(honest_config(scenario, n, seed, **hooks))

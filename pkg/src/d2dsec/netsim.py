"""Deterministic slotted simulator for the four D2D scenarios.

Time advances in integer slots and every transmission arrives one slot after
it is sent. The D2D radio channel is a broadcast to all adjacent nodes and is
fully visible to the scripted adversary; the cellular channel between devices
and the MME is confidential, authentic and invisible to it.

Node ids: the MME is 0, the source 1, relays 2..n-1 and the destination n.
The default topology is a line ``S - R2 - ... - D``.

Config files are flat ``key = value`` text::

    scenario = RD2D
    n = 5
    seed = 7
    adv: 4 tamper kind=request to=5 bit=300
    hook: replay_protection=off

Adversary lines are ``adv: <slot|*> <op> [key=value ...]`` with ``op`` one of
drop, tamper, replay, inject, eavesdrop_all and keys ``kind``
(request/reply/disclosure/any), ``from``, ``to``, ``bit``, ``hex`` and
``count``. Hook lines switch on fault injection for tests:

* ``replay_protection=off``: disable every replay cache
* ``leak_session_key``: hand the MME-issued K to the adversary
* ``mme_split_keys``: the MME gives the destination a different key
* ``early_disclosure``: relays release TESLA keys without waiting
* ``tesla_delay=N``: TESLA disclosure delay in intervals (default 1)

All randomness is drawn from ``random.Random(seed)``, so a run is a pure
function of its config.
"""

from __future__ import annotations

import random
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from . import errors as err
from .crypto import Crypto, KeyKind, SymKey
from .roles import (
    DestinationState,
    MmeState,
    RelayState,
    Scenario,
    SourcePhase,
    SourceState,
    destination_receive,
    destination_validate_and_reply,
    mme_handle_destination_request,
    mme_handle_source_request,
    relay_process_reply,
    relay_process_request,
    source_build_request,
    source_precheck_reply,
    source_verify_reply,
    tag_age,
)
from .tesla import (
    TeslaChain,
    current_interval,
    disclosure_slot,
    generate_chain,
    key_for_interval,
    verify_disclosed_key,
)
from .trace import EventTrace, SimEvent, protocol_event_detail
from .wire import (
    MAX_HOPS,
    MSG_DISCLOSURE,
    MSG_REPLY,
    MSG_REQUEST,
    KeyDisclosure,
    RelayedRequestPacket,
    RequestPacket,
    decode,
    encode,
    packet_kind,
    reply_base,
    reply_keys,
    request_base,
    request_hops,
)

NodeId = int
MME_ID = 0
SOURCE_ID = 1
MAX_INTERVAL = (1 << 12) - 1

HOOKS = ("replay_protection", "leak_session_key", "mme_split_keys", "early_disclosure", "tesla_delay")
ADV_OPS = ("drop", "tamper", "replay", "inject", "eavesdrop_all")
ADV_KINDS = ("any", "request", "reply", "disclosure")
_KIND_BY_TYPE = {MSG_REQUEST: "request", MSG_REPLY: "reply", MSG_DISCLOSURE: "disclosure"}

WAIT_CAPACITY = 64  # packets buffered per node while awaiting a TESLA key

DECODE_ERRORS = (err.TruncatedPacket, err.MalformedPacket, err.FieldOverflow, ValueError)


def wire_kind(data: bytes) -> str:
    """Packet kind from the type nibble alone, so tampered bytes still classify."""
    if not data:
        return "unknown"
    return _KIND_BY_TYPE.get(data[0] >> 4, "unknown")


# -- topology ---------------------------------------------------------------


@dataclass(frozen=True)
class Topology:
    roles: dict
    adjacency: dict
    cellular_coverage: frozenset
    enodeb_count: int = 1

    @classmethod
    def line(cls, n: int, infrastructure: bool, enodeb_count: int = 1) -> "Topology":
        chain = list(range(1, n + 1))
        roles = {node: "relay" for node in chain}
        roles[SOURCE_ID] = "source"
        roles[n] = "destination"
        adjacency = {node: set() for node in chain}
        for a, b in zip(chain, chain[1:]):
            adjacency[a].add(b)
            adjacency[b].add(a)
        coverage: frozenset = frozenset()
        if infrastructure:
            roles[MME_ID] = "mme"
            coverage = frozenset(chain) | {MME_ID}
        return cls(roles, {k: frozenset(v) for k, v in adjacency.items()}, coverage, enodeb_count)

    def neighbors(self, node: NodeId) -> list[NodeId]:
        return sorted(self.adjacency.get(node, ()))

    def adjacent(self, a: NodeId, b: NodeId) -> bool:
        return b in self.adjacency.get(a, ())

    def has_path(self, a: NodeId, b: NodeId) -> bool:
        seen, todo = {a}, deque([a])
        while todo:
            node = todo.popleft()
            if node == b:
                return True
            for nxt in self.adjacency.get(node, ()):
                if nxt not in seen:
                    seen.add(nxt)
                    todo.append(nxt)
        return False

    def d2d_nodes(self) -> list[NodeId]:
        return sorted(self.adjacency)


# -- adversary script -------------------------------------------------------


@dataclass(frozen=True)
class AdvAction:
    slot: Optional[int]
    op: str
    kind: str = "any"
    src: Optional[int] = None
    to: Optional[int] = None
    bit: Optional[int] = None
    data: bytes = b""
    count: Optional[int] = None

    def matches(self, kind: str, sender: Optional[int], receiver: Optional[int]) -> bool:
        return (
            (self.kind == "any" or self.kind == kind)
            and (self.src is None or self.src == sender)
            and (self.to is None or self.to == receiver)
        )

    def active_at(self, slot: int) -> bool:
        return self.slot is None or self.slot == slot

    @classmethod
    def parse(cls, text: str) -> "AdvAction":
        parts = text.split()
        if len(parts) < 2:
            raise err.ConfigInvalid(f"adversary line needs a slot and an action: {text!r}")
        slot_text, op, *rest = parts
        if op not in ADV_OPS:
            raise err.ConfigInvalid(f"unknown adversary action {op!r}")
        try:
            slot = None if slot_text == "*" else int(slot_text)
            opts = dict(item.split("=", 1) for item in rest)
            kind = opts.pop("kind", "any")
            action = cls(
                slot=slot,
                op=op,
                kind=kind,
                src=_opt_int(opts.pop("from", None)),
                to=_opt_int(opts.pop("to", None)),
                bit=_opt_int(opts.pop("bit", None)),
                data=bytes.fromhex(opts.pop("hex", "")),
                count=_opt_int(opts.pop("count", None)),
            )
        except ValueError as exc:
            raise err.ConfigInvalid(f"bad adversary line {text!r}: {exc}") from None
        if opts:
            raise err.ConfigInvalid(f"unknown adversary options {sorted(opts)}")
        if kind not in ADV_KINDS:
            raise err.ConfigInvalid(f"unknown packet kind {kind!r}")
        if op == "tamper" and action.bit is None:
            raise err.ConfigInvalid("tamper needs bit=")
        if op == "inject" and (not action.data or action.to is None):
            raise err.ConfigInvalid("inject needs hex= and to=")
        if slot is not None and slot < 0:
            raise err.ConfigInvalid("adversary slot must be >= 0")
        return action

    def to_line(self) -> str:
        parts = ["*" if self.slot is None else str(self.slot), self.op]
        if self.kind != "any":
            parts.append(f"kind={self.kind}")
        for name, value in (("from", self.src), ("to", self.to), ("bit", self.bit), ("count", self.count)):
            if value is not None:
                parts.append(f"{name}={value}")
        if self.data:
            parts.append(f"hex={self.data.hex()}")
        return " ".join(parts)


def _opt_int(value: Optional[str]) -> Optional[int]:
    return None if value is None else int(value)


@dataclass
class AdversaryScript:
    actions: list[AdvAction] = field(default_factory=list)

    @classmethod
    def parse(cls, lines) -> "AdversaryScript":
        return cls([AdvAction.parse(line) for line in lines])

    def __bool__(self) -> bool:
        return bool(self.actions)


# -- config -----------------------------------------------------------------


@dataclass
class ScenarioConfig:
    """One simulation run.

    ``T_prime``, ``M`` and ``B`` parametrize the overhead model; the
    simulator itself runs a single request/reply session and only records
    them in the trace header.
    """

    scenario: Scenario
    n: int
    seed: int = 0
    T: int = 64
    T_prime: int = 10
    M: int = 1
    B: int = 2
    W: int = 2
    tesla_L: int = 64
    tesla_interval: int = 1
    adversary: AdversaryScript = field(default_factory=AdversaryScript)
    hooks: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.scenario, Scenario):
            self.scenario = _parse_scenario(self.scenario)

    def validate(self) -> None:
        s = self.scenario
        checks = [
            (self.n >= 2, "n must be >= 2"),
            (self.T >= self.T_prime >= 1, "need T >= T_prime >= 1"),
            (self.M >= 1, "M must be >= 1"),
            (self.B >= 1, "B must be >= 1"),
            (self.W >= 0, "W must be >= 0"),
            (0 <= self.seed < 1 << 64, "seed must be a 64-bit unsigned integer"),
            (1 <= self.tesla_L <= MAX_INTERVAL, f"tesla_L must be in 1..{MAX_INTERVAL}"),
            (self.tesla_interval >= 1, "tesla_interval must be >= 1"),
            (not s.relayed or self.n >= 3, f"{s.value} needs n >= 3"),
            (s.relayed or self.n == 2, f"{s.value} is direct and needs n == 2"),
            (self.n - 2 <= MAX_HOPS, f"at most {MAX_HOPS} relays fit a packet"),
        ]
        for ok, message in checks:
            if not ok:
                raise err.ConfigInvalid(message)
        for name in self.hooks:
            if name not in HOOKS:
                raise err.ConfigInvalid(f"unknown hook {name!r}")
        if self.tesla_delay < 1:
            raise err.ConfigInvalid("tesla_delay must be >= 1")

    @property
    def replay_protection(self) -> bool:
        return self.hooks.get("replay_protection", "on") != "off"

    @property
    def tesla_delay(self) -> int:
        try:
            return int(self.hooks.get("tesla_delay", 1))
        except ValueError:
            raise err.ConfigInvalid("tesla_delay must be an integer") from None

    def hook(self, name: str) -> bool:
        return name in self.hooks and self.hooks[name] not in ("off", "0", "false")

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "n": self.n,
            "seed": self.seed,
            "T": self.T,
            "T_prime": self.T_prime,
            "M": self.M,
            "B": self.B,
            "W": self.W,
            "tesla_L": self.tesla_L,
            "tesla_interval": self.tesla_interval,
            "adv": [a.to_line() for a in self.adversary.actions],
            "hooks": dict(sorted(self.hooks.items())),
        }

    def dumps(self) -> str:
        d = self.to_dict()
        lines = [f"{key} = {d[key]}" for key in ("scenario",) + INT_KEYS]
        lines += [f"adv: {line}" for line in d["adv"]]
        lines += [f"hook: {k}" if v == "on" else f"hook: {k}={v}" for k, v in d["hooks"].items()]
        return "\n".join(lines) + "\n"


INT_KEYS = ("n", "seed", "T", "T_prime", "M", "B", "W", "tesla_L", "tesla_interval")


def _parse_scenario(value) -> Scenario:
    try:
        return Scenario(str(value).strip().upper())
    except ValueError:
        raise err.ConfigInvalid(f"unknown scenario {value!r}") from None


def parse_config(text: str, overrides: Optional[dict] = None) -> ScenarioConfig:
    values: dict = {}
    adv_lines: list[str] = []
    hooks: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("adv:"):
            adv_lines.append(line[4:].strip())
            continue
        if line.startswith("hook:"):
            name, _, value = line[5:].strip().partition("=")
            hooks[name.strip()] = value.strip() or "on"
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise err.ConfigInvalid(f"line {lineno}: expected key = value")
        key = key.strip()
        if key not in INT_KEYS and key != "scenario":
            raise err.ConfigInvalid(f"line {lineno}: unknown key {key!r}")
        values[key] = value.strip()
    for key, value in (overrides or {}).items():
        if key not in INT_KEYS and key != "scenario":
            raise err.ConfigInvalid(f"unknown override key {key!r}")
        values[key] = value

    if "scenario" not in values or "n" not in values:
        raise err.ConfigInvalid("config needs at least scenario and n")
    kwargs = {}
    for key in INT_KEYS:
        if key in values:
            try:
                kwargs[key] = int(values[key])
            except ValueError:
                raise err.ConfigInvalid(f"{key} must be an integer, got {values[key]!r}") from None
    cfg = ScenarioConfig(
        scenario=_parse_scenario(values["scenario"]),
        adversary=AdversaryScript.parse(adv_lines),
        hooks=hooks,
        **kwargs,
    )
    cfg.validate()
    return cfg


def load_config(path, overrides: Optional[dict] = None) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise err.ConfigInvalid(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides)


# -- attacker knowledge -----------------------------------------------------


class Adversary:
    """Scripted Dolev-Yao attacker on the D2D channel.

    Knowledge is tracked only when eavesdropping (or when a key is leaked to
    it). The closure holds every observed 256-bit field and packet, one hash
    step and all 16 nonce derivations of each atom used as a key, and every
    decryption of an observed ciphertext under any such key. The attacker
    computes with its own :class:`Crypto` so honest-party counts stay clean.
    """

    def __init__(self, script: AdversaryScript, tracking: bool = False):
        self.script = script
        self.crypto = Crypto()
        self.tracking = tracking or any(a.op == "eavesdrop_all" and a.slot is None for a in script.actions)
        self.eavesdropping = self.tracking
        self.observed: list[tuple[int, int, str, bytes]] = []
        self.known: set[bytes] = set()
        self.key_candidates: set[bytes] = set()
        self.ciphertexts: set[bytes] = set()
        self.used = defaultdict(int)
        self.fired: set[int] = set()

    def _allowed(self, index: int, action: AdvAction) -> bool:
        return action.count is None or self.used[index] < action.count

    def intercept(self, slot: int, kind: str, sender: int, receiver: int, data: bytes) -> Optional[bytes]:
        """Apply drop/tamper actions to one delivery; None means dropped."""
        for index, action in enumerate(self.script.actions):
            if action.op not in ("drop", "tamper") or not action.active_at(slot):
                continue
            if not action.matches(kind, sender, receiver) or not self._allowed(index, action):
                continue
            self.used[index] += 1
            if action.op == "drop":
                return None
            if action.bit < len(data) * 8:
                flipped = bytearray(data)
                flipped[action.bit // 8] ^= 0x80 >> (action.bit % 8)
                data = bytes(flipped)
        return data

    def transmissions(self, slot: int) -> list[tuple[str, Optional[int], bytes]]:
        """Replays and injections due at ``slot`` as (op, target, bytes)."""
        out = []
        for index, action in enumerate(self.script.actions):
            if index in self.fired or not action.active_at(slot):
                continue
            if action.op == "eavesdrop_all":
                self.fired.add(index)
                self.tracking = self.eavesdropping = True
            elif action.op == "inject":
                self.fired.add(index)
                out.append(("inject", action.to, action.data))
            elif action.op == "replay":
                for seen_slot, sender, kind, data in self.observed:
                    if seen_slot < slot and replace(action, to=None).matches(kind, sender, None):
                        self.fired.add(index)
                        out.append(("replay", action.to, data))
                        break
                else:
                    if action.slot is not None:
                        self.fired.add(index)
        return out

    def observe(self, slot: int, sender: int, data: bytes) -> list[bytes]:
        self.observed.append((slot, sender, wire_kind(data), data))
        if not self.eavesdropping:
            return []
        atoms, ciphertexts = [data], []
        try:
            packet = decode(data)
        except DECODE_ERRORS:
            packet = None
        if isinstance(packet, (RequestPacket, RelayedRequestPacket)):
            base = request_base(packet)
            atoms += [base.ciphertext, base.h] + [hop.mac for hop in request_hops(packet)]
            ciphertexts.append(base.ciphertext)
        elif packet is not None and wire_kind(data) == "reply":
            atoms += [reply_base(packet).reply_mac] + list(reply_keys(packet))
            atoms += [hop.mac for hop in getattr(packet, "hops", ())]
        elif isinstance(packet, KeyDisclosure):
            atoms.append(packet.key)
        return self._absorb(atoms, ciphertexts)

    def learn_key(self, key: bytes) -> list[bytes]:
        self.tracking = True
        return self._absorb([key], [])

    def _absorb(self, atoms: list[bytes], ciphertexts: list[bytes]) -> list[bytes]:
        new: list[bytes] = []

        def add(item: bytes) -> bool:
            if item in self.known:
                return False
            self.known.add(item)
            new.append(item)
            return True

        for c in ciphertexts:
            if c not in self.ciphertexts:
                self.ciphertexts.add(c)
                for key in sorted(self.key_candidates):
                    add(self.crypto.decrypt(SymKey(key), c))
        for atom in atoms:
            if not add(atom) or len(atom) != 32:
                continue
            keys = [atom] + [self.crypto.derive_session_key(SymKey(atom), n).bytes for n in range(16)]
            add(self.crypto.hash(atom))
            for key in keys:
                add(key)
                if key in self.key_candidates:
                    continue
                self.key_candidates.add(key)
                for c in sorted(self.ciphertexts):
                    add(self.crypto.decrypt(SymKey(key), c))
        return new


# -- simulator --------------------------------------------------------------


@dataclass
class SimResult:
    config: ScenarioConfig
    trace: EventTrace
    message: bytes
    source: SourceState
    destination: DestinationState
    relays: dict
    mme: Optional[MmeState]
    crypto: Crypto
    adversary: Adversary

    @property
    def accepted(self) -> bool:
        return self.source.accepted > 0

    @property
    def delivered(self) -> list[bytes]:
        return [plaintext for _, _, plaintext in self.destination.delivered]


class Simulator:
    def __init__(self, config: ScenarioConfig):
        config.validate()
        self.cfg = config
        self.scenario = config.scenario
        self.rng = random.Random(config.seed)
        self.crypto = Crypto()
        self.events: list[SimEvent] = []
        self.queue: dict[int, list] = defaultdict(list)
        self.current: list = []
        self.now = 0
        self.topology = Topology.line(config.n, self.scenario.infrastructure, config.B)
        self.adversary = Adversary(config.adversary, tracking=config.hook("leak_session_key"))
        self.source_known: dict = {}
        self.dest_known: dict = {}
        self.source_waiting: list = []
        self.dest_waiting: list = []
        self.flooded: dict = defaultdict(set)
        self._setup()

    # setup

    def _setup(self) -> None:
        cfg, rng = self.cfg, self.rng
        n, relayed, infra = cfg.n, self.scenario.relayed, self.scenario.infrastructure
        self.message = rng.randbytes(32)
        rp = cfg.replay_protection

        chain_owners = list(range(2, n)) if infra else list(range(1, n + 1))
        self.chains: dict[int, TeslaChain] = {
            owner: generate_chain(
                self.crypto, owner, rng.randbytes(32), cfg.tesla_L, cfg.tesla_interval, 0, cfg.tesla_delay
            )
            for owner in chain_owners
        }
        commitments = {owner: chain.commitment() for owner, chain in self.chains.items()}

        self.mme = None
        if infra:
            self.mme = MmeState(
                subscribers={node: True for node in range(1, n + 1)},
                proximity={frozenset((SOURCE_ID, n))},
                rng=rng,
                split_keys=cfg.hook("mme_split_keys"),
                leak=[] if cfg.hook("leak_session_key") else None,
            )
        self.source = SourceState(SOURCE_ID, n, self.scenario, self.crypto, rng, window=cfg.W, replay_protection=rp)
        self.source.commitments = {o: c for o, c in commitments.items() if o != SOURCE_ID}
        self.destination = DestinationState(n, self.scenario, self.crypto, window=cfg.W, replay_protection=rp)
        self.destination.commitments = {o: c for o, c in commitments.items() if o != n}
        if not infra:
            preshared = SymKey(rng.randbytes(32), KeyKind.PRESHARED)
            self.source.session_key = preshared
            self.source.chain = self.chains[SOURCE_ID]
            self.destination.session_keys[SOURCE_ID] = preshared
            self.destination.chain = self.chains[n]
        self.relays = {
            node: RelayState(node, self.chains[node], self.crypto, window=cfg.W, replay_protection=rp)
            for node in range(2, n)
        } if relayed else {}

        self.log(
            "state_transition",
            None,
            what="run_start",
            config=cfg.to_dict(),
            message=self.message.hex(),
            commitments={
                str(o): {
                    "key0": c.key0.hex(),
                    "start": c.start_slot,
                    "interval_len": c.interval_len,
                    "length": c.length,
                    "delay": c.delay,
                }
                for o, c in sorted(commitments.items())
            },
            roles={str(k): v for k, v in sorted(self.topology.roles.items())},
        )

    def _states(self):
        if self.mme is not None:
            yield MME_ID, self.mme
        yield SOURCE_ID, self.source
        for node in sorted(self.relays):
            yield node, self.relays[node]
        yield self.cfg.n, self.destination

    # logging

    def log(self, kind: str, node: Optional[int], payload: bytes = b"", /, **detail) -> None:
        self.events.append(SimEvent(self.now, len(self.events), kind, node, payload, detail))

    def flush_protocol_events(self) -> None:
        for node, state in self._states():
            for pe in state.events:
                self.log("protocol_event", node, **protocol_event_detail(pe))
            state.events.clear()
        if self.mme is not None and self.mme.leak:
            for key in self.mme.leak:
                self._knowledge(self.adversary.learn_key(key.bytes), "leak")
            self.mme.leak.clear()

    def reject(self, node: int, exc: err.ProtocolReject, payload: bytes = b"") -> None:
        self.log("drop", node, payload, reason=exc.reason, message=str(exc))
        if isinstance(exc, err.INTEGRITY_FAILURES):
            self.log("intruder_alert", node, payload, reason=exc.reason)

    def _knowledge(self, atoms: list[bytes], origin: str) -> None:
        if atoms:
            self.log("attacker_knowledge_update", None, atoms=sorted(a.hex() for a in atoms), origin=origin)

    # scheduling

    def schedule(self, slot: int, task: tuple) -> None:
        if slot < self.now:
            raise RuntimeError(f"cannot schedule into the past ({slot} < {self.now})")
        (self.current if slot == self.now else self.queue[slot]).append(task)

    def at(self, slot: int, fn: Callable[[], None]) -> None:
        self.schedule(slot, ("call", fn))

    # channels

    def broadcast(self, sender: int, data: bytes) -> list[int]:
        kind = wire_kind(data)
        self.log("send", sender, data, channel="d2d", kind=kind)
        self._knowledge(self.adversary.observe(self.now, sender, data), "d2d")
        delivered = []
        for receiver in self.topology.neighbors(sender):
            out = self.adversary.intercept(self.now, kind, sender, receiver, data)
            if out is None:
                self.log("drop", receiver, data, reason="adversary", sender=sender)
                continue
            self.schedule(self.now + 1, ("d2d", sender, receiver, out))
            delivered.append(receiver)
        return delivered

    def cellular_send(self, sender: int, receiver: int, message: tuple) -> None:
        if not self.scenario.infrastructure:
            raise err.NoCoverage(f"{self.scenario.value} has no cellular infrastructure")
        coverage = self.topology.cellular_coverage
        if sender not in coverage or receiver not in coverage:
            raise err.NoCoverage(f"node {sender} or {receiver} is outside cellular coverage")
        self.log("send", sender, channel="cellular", to=receiver, message=message[0])
        self.schedule(self.now + 1, ("cell", sender, receiver, message))

    # main loop

    def run(self) -> SimResult:
        self.queue[0].append(("call", self._source_start))
        for slot in range(self.cfg.T):
            self.now = slot
            self.current = self.queue.pop(slot, [])
            for op, target, data in self.adversary.transmissions(slot):
                self._adversary_send(op, target, data)
            i = 0
            while i < len(self.current):
                self._dispatch(self.current[i])
                i += 1
            self.flush_protocol_events()
        self.now = self.cfg.T
        counters = {f"{cat}:{tag}": count for (cat, tag), count in sorted(self.crypto.counters.tagged.items())}
        self.log(
            "state_transition",
            None,
            what="run_end",
            accepted=self.source.accepted > 0,
            source_phase=self.source.phase.value,
            delivered=len(self.destination.delivered),
            counters=counters,
        )
        return SimResult(
            self.cfg,
            EventTrace(self.events),
            self.message,
            self.source,
            self.destination,
            self.relays,
            self.mme,
            self.crypto,
            self.adversary,
        )

    def _adversary_send(self, op: str, target: Optional[int], data: bytes) -> None:
        receivers = [target] if target is not None else self.topology.d2d_nodes()
        for receiver in receivers:
            self.log("send", None, data, channel="d2d", kind=wire_kind(data), adversary=op, to=receiver)
            self.schedule(self.now + 1, ("d2d", None, receiver, data))

    def _dispatch(self, task: tuple) -> None:
        op = task[0]
        if op == "call":
            task[1]()
        elif op == "cell":
            _, sender, receiver, message = task
            self.log("deliver", receiver, channel="cellular", sender=sender, message=message[0])
            self._on_cellular(sender, receiver, message)
        else:
            _, sender, receiver, data = task
            self.log("deliver", receiver, data, channel="d2d", sender=sender)
            self._on_d2d(receiver, data)
        self.flush_protocol_events()

    # cellular handlers

    def _on_cellular(self, sender: int, receiver: int, message: tuple) -> None:
        n = self.cfg.n
        what = message[0]
        if receiver == MME_ID and what == "d2d_request":
            _, src, dst = message
            try:
                key = mme_handle_source_request(self.mme, src, dst, self.now)
            except err.ProtocolReject as exc:
                self.reject(MME_ID, exc)
                self.cellular_send(MME_ID, src, ("denied", exc.reason))
                return
            self.cellular_send(MME_ID, src, ("session_key", key))
        elif receiver == MME_ID and what == "key_request":
            _, src = message
            try:
                key = mme_handle_destination_request(self.mme, sender, src, self.now)
            except err.ProtocolReject as exc:
                self.reject(MME_ID, exc)
                return
            self.cellular_send(MME_ID, sender, ("session_key", key, src))
        elif receiver == SOURCE_ID and what == "session_key":
            self.source.session_key = message[1]
            self._source_send_request()
        elif receiver == SOURCE_ID and what == "denied":
            self.source.phase = SourcePhase.FAILED
            self.log("state_transition", SOURCE_ID, what="source_denied", reason=message[1])
        elif receiver == n and what == "session_key":
            _, key, src = message
            waiting = [e for e in self.dest_waiting if e.key[0] == src]
            self.dest_waiting = [e for e in self.dest_waiting if e.key[0] != src]
            for entry in waiting:
                self._dest_validate(entry, key)

    # source

    def _source_start(self) -> None:
        if self.scenario.infrastructure:
            self.source.phase = SourcePhase.AWAITING_KEY
            self.log("state_transition", SOURCE_ID, what="source_awaiting_key")
            self.cellular_send(SOURCE_ID, MME_ID, ("d2d_request", SOURCE_ID, self.cfg.n))
        else:
            self._source_send_request()

    def _source_send_request(self) -> None:
        try:
            pkt = source_build_request(self.source, self.message, self.now)
        except (err.ProtocolReject, err.ChainExhausted) as exc:
            self.source.phase = SourcePhase.FAILED
            self.log("state_transition", SOURCE_ID, what="source_failed", reason=type(exc).__name__)
            return
        self.log("state_transition", SOURCE_ID, what="source_sent_request", pkt_id=pkt.pkt_id)
        self.broadcast(SOURCE_ID, encode(pkt))
        if not self.scenario.infrastructure:
            self._schedule_disclosure(SOURCE_ID, self.source.mac_interval)

    def _schedule_disclosure(self, owner: int, interval: int) -> None:
        chain = self.chains[owner]
        due = disclosure_slot(chain, interval)

        def disclose():
            assert self.now >= due, "TESLA key disclosed before its slot"
            key = key_for_interval(chain, interval)
            self.log("state_transition", owner, what="disclose", interval=interval)
            self.broadcast(owner, encode(KeyDisclosure(owner, interval, key.bytes)))

        self.at(max(due, self.now), disclose)

    def _source_on_packet(self, pkt) -> None:
        kind = packet_kind(pkt)
        if kind == "reply":
            self._source_on_reply(pkt)
        elif kind == "disclosure":
            self._source_on_disclosure(pkt)

    def _source_on_reply(self, pkt) -> None:
        if self.scenario.infrastructure:
            self._source_verify(pkt, None)
            return
        try:
            source_precheck_reply(self.source, pkt, self.now)
        except err.ProtocolReject as exc:
            self.reject(SOURCE_ID, exc, encode(pkt))
            return
        commitment = self.source.commitments[self.cfg.n]
        sent_at = self.now - tag_age(reply_base(pkt).t, self.now)
        try:
            interval = current_interval(commitment, sent_at)
        except (err.IntervalOutOfRange, err.ChainExhausted):
            self.reject(SOURCE_ID, err.BadReplyMac("reply time tag outside the destination chain"), encode(pkt))
            return
        key = self._known_key(self.source_known, self.cfg.n, interval)
        if key is None:
            item = (pkt, interval, self.now)
            self.source_waiting.append(item)
            if len(self.source_waiting) > WAIT_CAPACITY:
                oldest = self.source_waiting.pop(0)
                self.log("drop", SOURCE_ID, encode(oldest[0]), reason="BufferFull")
            self._expire(commitment, interval, lambda: self._source_expire(item))
        else:
            self._source_verify(pkt, key)

    def _source_expire(self, item) -> None:
        if item in self.source_waiting:
            self.source_waiting.remove(item)
            self.reject(SOURCE_ID, err.NoSessionKey("destination key never disclosed"), encode(item[0]))

    def _source_verify(self, pkt, destination_key: Optional[SymKey], received_at: Optional[int] = None) -> None:
        try:
            source_verify_reply(self.source, pkt, self.now, destination_key, received_at)
        except err.ProtocolReject as exc:
            self.reject(SOURCE_ID, exc, encode(pkt))
            return
        self.log("state_transition", SOURCE_ID, what="source_accept", pkt_id=reply_base(pkt).pkt_id)

    def _check_disclosure(self, node: int, known: dict, pkt: KeyDisclosure) -> Optional[SymKey]:
        states = dict(self._states())
        commitment = states[node].commitments.get(pkt.owner)
        if commitment is None or (pkt.owner, pkt.interval) in known:
            return None
        ok = (
            1 <= pkt.interval <= commitment.length
            and disclosure_slot(commitment, pkt.interval) <= self.now
            and verify_disclosed_key(self.crypto, commitment, pkt.key, pkt.interval)
        )
        if not ok:
            self.reject(node, err.BadDisclosedKey(pkt.owner), encode(pkt))
            return None
        key = SymKey(pkt.key, KeyKind.TESLA)
        known[(pkt.owner, pkt.interval)] = key
        return key

    def _known_key(self, known: dict, owner: int, interval: int) -> Optional[SymKey]:
        """Key of ``interval``, folded down from any later disclosed key of the same chain."""
        later = sorted(j for o, j in known if o == owner and j >= interval)
        if not later:
            return None
        value = known[(owner, later[0])].bytes
        for _ in range(later[0] - interval):
            value = self.crypto.hash(value, tag="tesla.verify")
        return SymKey(value, KeyKind.TESLA)

    def _expire(self, commitment, interval: int, callback) -> None:
        """Give up on a buffered packet once its key is overdue by more than the window."""
        self.at(disclosure_slot(commitment, interval) + self.cfg.W + self.cfg.n, callback)

    def _source_on_disclosure(self, pkt: KeyDisclosure) -> None:
        if pkt.owner != self.cfg.n:
            return
        key = self._check_disclosure(SOURCE_ID, self.source_known, pkt)
        if key is None:
            return
        ready = [item for item in self.source_waiting if item[1] <= pkt.interval]
        self.source_waiting = [item for item in self.source_waiting if item not in ready]
        for reply, interval, received_at in ready:
            self._source_verify(reply, self._known_key(self.source_known, pkt.owner, interval), received_at)

    # relays

    def _relay_on_packet(self, node: int, pkt) -> None:
        relay = self.relays[node]
        data = encode(pkt)
        kind = packet_kind(pkt)
        if kind == "request":
            base = request_base(pkt)
            if node in {h.relay for h in request_hops(pkt)}:
                return
            if node in (base.src, base.dst):
                # relays never originate or terminate a session
                reason = "SpoofedSource" if node == base.src else "UnexpectedRequest"
                self.log("drop", node, data, reason=reason)
                return
            try:
                out = relay_process_request(relay, pkt, self.now)
            except err.ProtocolReject as exc:
                self.reject(node, exc, data)
                return
            self.broadcast(node, encode(out))
        elif kind == "reply":
            self._relay_reply(node, pkt)
        else:
            seen = self.flooded[node]
            if (pkt.owner, pkt.interval) in seen or pkt.owner == node:
                return
            seen.add((pkt.owner, pkt.interval))
            self.broadcast(node, data)

    def _relay_reply(self, node: int, pkt) -> None:
        relay = self.relays[node]
        key = (reply_base(pkt).src, reply_base(pkt).pkt_id)
        interval = relay.forwarded.get(key)
        if interval is None:
            return
        due = disclosure_slot(relay.chain, interval)
        if self.now < due and not self.cfg.hook("early_disclosure"):
            self.log("state_transition", node, what="hold_reply", until=due)
            self.at(due, lambda: self._relay_reply(node, pkt))
            return
        try:
            out = relay_process_reply(relay, pkt, self.now)
        except err.ReplayedId:
            return
        except err.ProtocolReject as exc:
            self.reject(node, exc, encode(pkt))
            return
        self.broadcast(node, encode(out))

    # destination

    def _dest_on_packet(self, pkt) -> None:
        data = encode(pkt)
        kind = packet_kind(pkt)
        if kind == "disclosure":
            self._dest_on_disclosure(pkt)
            return
        if kind != "request":
            return
        dest = self.destination
        base = request_base(pkt)
        if base.dst != dest.self_id:
            self.log("drop", dest.self_id, data, reason="NotAddressed")
            return
        try:
            entry = destination_receive(dest, pkt, self.now)
        except err.ProtocolReject as exc:
            self.reject(dest.self_id, exc, data)
            return
        if self.scenario.infrastructure:
            known = dest.session_keys.get(base.src)
            if known is not None:
                self._dest_validate(entry, known)
                return
            self.dest_waiting.append(entry)
            self.cellular_send(dest.self_id, MME_ID, ("key_request", base.src))
            return
        commitment = dest.commitments.get(base.src)
        try:
            interval = current_interval(commitment, entry.send_slot)
        except (err.IntervalOutOfRange, err.ChainExhausted):
            self.reject(dest.self_id, err.BadSourceMac("time tag outside the source chain"), data)
            return
        entry.interval = interval
        key = self._known_key(self.dest_known, base.src, interval)
        if key is None:
            self.dest_waiting.append(entry)
            if len(self.dest_waiting) > WAIT_CAPACITY:
                oldest = self.dest_waiting.pop(0)
                self.log("drop", dest.self_id, encode(oldest.packet), reason="BufferFull")
            self._expire(commitment, interval, lambda: self._dest_expire(entry))
        else:
            self._dest_validate(entry, None, key)

    def _dest_on_disclosure(self, pkt: KeyDisclosure) -> None:
        dest = self.destination
        key = self._check_disclosure(dest.self_id, self.dest_known, pkt)
        if key is None:
            return
        ready = [e for e in self.dest_waiting if e.key[0] == pkt.owner and e.interval <= pkt.interval]
        self.dest_waiting = [e for e in self.dest_waiting if e not in ready]
        for entry in ready:
            self._dest_validate(entry, None, self._known_key(self.dest_known, pkt.owner, entry.interval))

    def _dest_expire(self, entry) -> None:
        if any(e is entry for e in self.dest_waiting):
            self.dest_waiting = [e for e in self.dest_waiting if e is not entry]
            self.reject(self.destination.self_id, err.NoSessionKey("source key never disclosed"), encode(entry.packet))

    def _dest_validate(self, entry, session_key: Optional[SymKey], source_key: Optional[SymKey] = None) -> None:
        dest = self.destination
        try:
            reply = destination_validate_and_reply(dest, entry, session_key, self.now, source_key)
        except err.ProtocolReject as exc:
            self.reject(dest.self_id, exc, encode(entry.packet))
            return
        self.log("state_transition", dest.self_id, what="destination_accept", pkt_id=entry.key[1])
        self.broadcast(dest.self_id, encode(reply))
        if not self.scenario.infrastructure:
            self._schedule_disclosure(dest.self_id, dest.reply_intervals[entry.key])

    # dispatch

    def _on_d2d(self, receiver: int, data: bytes) -> None:
        try:
            pkt = decode(data)
        except DECODE_ERRORS as exc:
            self.log("drop", receiver, data, reason="MalformedPacket", message=str(exc))
            return
        if receiver == SOURCE_ID:
            self._source_on_packet(pkt)
        elif receiver == self.cfg.n:
            self._dest_on_packet(pkt)
        elif receiver in self.relays:
            self._relay_on_packet(receiver, pkt)


def simulate(config: ScenarioConfig) -> SimResult:
    """Run one session and keep the final role states alongside the trace."""
    return Simulator(config).run()


def run(config: ScenarioConfig) -> EventTrace:
    return simulate(config).trace

"""Cost formulas, communication overhead models and counter reconciliation.

All overhead values are :class:`fractions.Fraction` so golden comparisons are
exact. CSV output writes a terminating decimal where one exists and ``p/q``
otherwise.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Union

from .trace import EventTrace

Number = Union[int, Fraction]

PROPOSED = ("DD2D", "RD2D", "DD2DW", "RD2DW")
COMPETITORS = ("SDGA", "PPAKA", "GRAAD", "L_RSA", "SeDS")
CATEGORIES = ("Enc", "Dec", "H")

# term -> (constant, coefficient of n, coefficient of n^2), in display order
_FORMULAS: dict[str, tuple[tuple[str, tuple[int, int, int]], ...]] = {
    "DD2D": (("Enc", (3, 0, 0)), ("H", (3, 0, 0)), ("Dec", (1, 0, 0))),
    "RD2D": (("Enc", (3, 0, 0)), ("H", (1, 2, 0)), ("Dec", (1, 0, 0))),
    "DD2DW": (("Enc", (1, 0, 0)), ("H", (3, 0, 0)), ("Dec", (1, 0, 0))),
    "RD2DW": (("Enc", (1, 0, 0)), ("H", (-1, 2, 0)), ("Dec", (1, 0, 0))),
    "SDGA": (("PA", (-3, 6, 0)), ("EO", (0, 5, 0)), ("H", (-1, 4, 0)), ("Mul", (-2, 4, 0))),
    "PPAKA": (("EO", (-2, 4, 0)), ("H", (-4, 3, 1)), ("Mul", (1, -3, 2))),
    "GRAAD": (
        ("PA", (0, 2, 0)),
        ("H", (-14, 21, 0)),
        ("Enc", (0, 1, 0)),
        ("Dec", (0, 1, 0)),
        ("PO", (-3, 3, 0)),
        ("EO", (-8, 8, 0)),
        ("Mul", (-2, 2, 0)),
    ),
    "L_RSA": (("PO", (0, 6, 0)), ("H", (-7, 13, 0)), ("Mul", (-1, 3, 0)), ("Div", (2, 0, 0))),
    "SeDS": (
        ("PA", (2, 0, 0)),
        ("EO", (-2, 5, 0)),
        ("Dec", (1, 0, 0)),
        ("H", (1, 2, 0)),
        ("PO", (-4, 4, 0)),
        ("Enc", (-2, 2, 0)),
    ),
}


def eval_cost(protocol: str, n: int) -> dict[str, int]:
    """Operation counts of ``protocol`` at ``n`` devices, in display order."""
    if protocol not in _FORMULAS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    return {term: a + b * n + c * n * n for term, (a, b, c) in _FORMULAS[protocol]}


def format_cost(cost: dict[str, int]) -> str:
    """``{"Enc": 3, "H": 21, "Dec": 1}`` -> ``"3Enc+21H+1Dec"``; zero terms are omitted."""
    return "+".join(f"{count}{term}" for term, count in cost.items() if count)


# -- counter reconciliation -------------------------------------------------

# Tag prefixes left out of each counting convention. "tabulated" counts the
# per-packet work of the roles: TESLA chain setup is offline, disclosed-key
# checks are TESLA bookkeeping, and the source's reply acceptance is not part
# of the tabulated totals. "all" counts every operation.
CONVENTIONS: dict[str, tuple[str, ...]] = {
    "tabulated": ("tesla.setup", "tesla.verify", "source.reply_check", "source.audit"),
    "all": (),
}


def counters_from_trace(trace: EventTrace) -> dict[tuple[str, str], int]:
    for event in reversed(trace.events):
        if event.kind == "state_transition" and event.detail.get("what") == "run_end":
            out = {}
            for name, count in event.detail.get("counters", {}).items():
                category, _, tag = name.partition(":")
                out[(category, tag)] = count
            return out
    raise ValueError("trace has no run_end record with counters")


def scoped_counts(tagged: dict[tuple[str, str], int], convention: str = "tabulated") -> dict[str, int]:
    excluded = CONVENTIONS[convention]
    names = {"enc": "Enc", "dec": "Dec", "hash": "H"}
    out = dict.fromkeys(CATEGORIES, 0)
    for (category, tag), count in tagged.items():
        if not any(tag.startswith(prefix) for prefix in excluded):
            out[names[category]] += count
    return out


@dataclass(frozen=True)
class ReconcileRow:
    category: str
    formula: int
    measured: int

    @property
    def delta(self) -> int:
        return self.measured - self.formula

    @property
    def match(self) -> bool:
        return self.delta == 0


@dataclass(frozen=True)
class ReconcileReport:
    protocol: str
    n: int
    convention: str
    rows: tuple[ReconcileRow, ...]

    @property
    def match(self) -> bool:
        return all(row.match for row in self.rows)

    def row(self, category: str) -> ReconcileRow:
        return next(r for r in self.rows if r.category == category)

    def text(self) -> str:
        lines = [f"# {self.protocol} n={self.n} convention={self.convention}", "category,formula,measured,delta"]
        lines += [f"{r.category},{r.formula},{r.measured},{r.delta:+d}" for r in self.rows]
        return "\n".join(lines) + "\n"


def reconcile_counts(
    trace: EventTrace, protocol: Optional[str] = None, n: Optional[int] = None, convention: str = "tabulated"
) -> ReconcileReport:
    """Compare a run's instrumented counts against the cost formula.

    ``protocol`` and ``n`` default to the values in the trace header.
    """
    config = trace.meta().get("config", {})
    protocol = protocol or config.get("scenario")
    n = n if n is not None else config.get("n")
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    measured = scoped_counts(counters_from_trace(trace), convention)
    formula = eval_cost(protocol, n)
    rows = tuple(ReconcileRow(c, formula.get(c, 0), measured[c]) for c in CATEGORIES)
    return ReconcileReport(protocol, n, convention, rows)


def session_transmissions(trace: EventTrace) -> int:
    """Protocol transmissions in a run, cellular and D2D, excluding the adversary's."""
    return sum(1 for e in trace.of_kind("send") if e.node is not None)


# -- communication overhead -------------------------------------------------


@dataclass(frozen=True)
class OverheadParams:
    T: int = 20
    T_prime: int = 10
    M: int = 1
    n: int = 10
    B: int = 2

    def __post_init__(self):
        if not self.T >= self.T_prime >= 1:
            raise ValueError("need T >= T_prime >= 1")
        if self.M < 1 or self.n < 2 or self.B < 1:
            raise ValueError("need M >= 1, n >= 2, B >= 1")


def eval_overhead_rd2d(p: OverheadParams) -> Fraction:
    """Messages per slot: T' * M * (2n + 2) / T."""
    return Fraction(p.T_prime * p.M * (2 * p.n + 2), p.T)


SODE_ASSUMPTION = "full_mesh;degree=B-1;devices=n/B"


def eval_overhead_sode(
    p: OverheadParams,
    neighbor_degree: Optional[Union[Number, Sequence[Number]]] = None,
    devices_per_enodeb: Optional[Union[Number, Sequence[Number]]] = None,
) -> Fraction:
    """Messages per slot of the comparison protocol.

    Each eNodeB sends two fields per own device to every neighbour and two
    fields per neighbour to every own device; request and reply add
    ``2 T' M``. Scalars apply to every eNodeB; the defaults assume a full
    mesh of ``B`` eNodeBs sharing the ``n`` devices evenly.
    """
    degrees = _per_enodeb(neighbor_degree, p.B, p.B - 1)
    devices = _per_enodeb(devices_per_enodeb, p.B, Fraction(p.n, p.B))
    exchange = sum(2 * d * g for d, g in zip(devices, degrees))
    distribution = sum(2 * g * d for d, g in zip(devices, degrees))
    return Fraction(exchange + distribution + 2 * p.T_prime * p.M) / p.T


def _per_enodeb(value, count: int, default) -> list[Fraction]:
    if value is None:
        value = default
    if isinstance(value, (int, Fraction)):
        return [Fraction(value)] * count
    values = [Fraction(v) for v in value]
    if len(values) != count:
        raise ValueError(f"expected {count} per-eNodeB values, got {len(values)}")
    return values


def format_fraction(x: Fraction) -> str:
    """Terminating decimal when one exists, else ``p/q``."""
    x = Fraction(x)
    if x.denominator == 1:
        return str(x.numerator)
    d = x.denominator
    twos = fives = 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        return f"{x.numerator}/{x.denominator}"
    places = max(twos, fives)
    scaled = x * 10**places
    sign = "-" if scaled < 0 else ""
    digits = str(abs(scaled.numerator)).rjust(places + 1, "0")
    return f"{sign}{digits[:-places]}.{digits[-places:]}"


SWEEPS = {"nodes": ("n", range(2, 21)), "timeslots": ("T_prime", range(1, 21))}
CSV_COLUMNS = ("x_name", "x", "rd2d_overhead", "sode_overhead", "T", "T_prime", "M", "n", "B", "sode_model")


def sweep_rows(sweep: str, base: OverheadParams) -> list[dict]:
    if sweep not in SWEEPS:
        raise ValueError(f"unknown sweep {sweep!r}")
    name, values = SWEEPS[sweep]
    rows = []
    for x in values:
        params = OverheadParams(**{**base.__dict__, name: x})
        rows.append(
            {
                "x_name": name,
                "x": x,
                "rd2d_overhead": eval_overhead_rd2d(params),
                "sode_overhead": eval_overhead_sode(params),
                "T": params.T,
                "T_prime": params.T_prime,
                "M": params.M,
                "n": params.n,
                "B": params.B,
                "sode_model": SODE_ASSUMPTION,
            }
        )
    return rows


def emit_curves(sweep: str, base: Optional[OverheadParams] = None) -> str:
    """CSV for a sweep over n (2..20) or T' (1..20) with the other parameters fixed."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in sweep_rows(sweep, base or OverheadParams()):
        row = {k: format_fraction(v) if isinstance(v, Fraction) else v for k, v in row.items()}
        writer.writerow(row)
    return buf.getvalue()

"""Shamir secret sharing over Z_p and the hyper-parameter negotiation protocol.

The negotiation runs among in-process :class:`Party` objects that exchange
messages through an ordered in-memory :class:`Transport`.  Parties are
semi-honest: every value leaves its owner only as Shamir shares, and values
are opened (shares broadcast and interpolated) only when the protocol calls
for the result to become common knowledge.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .quantization import DEFAULT_MAX_LEVEL, DEFAULT_MEAN_LEVEL, QuantizationScheme, SALT_BYTES, enlarge_range, solve_bias

MERSENNE_61 = (1 << 61) - 1
FIXED_SCALE_BITS = 32
FIXED_LIMIT = 1 << 20
FIXED_OFFSET = FIXED_LIMIT << FIXED_SCALE_BITS  # 2**52
SALT_LIMB_BITS = 32


class ReconstructionError(ValueError):
    pass


class ProtocolError(RuntimeError):
    pass


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin for n < 3.3e24."""
    if n < 2:
        return False
    small = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)
    for q in small:
        if n % q == 0:
            return n == q
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in small:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class Share:
    party_id: int
    value: int
    modulus: int


def _eval_poly(coeffs: Sequence[int], x: int, p: int) -> int:
    acc = 0
    for a in reversed(coeffs):
        acc = (acc * x + a) % p
    return acc


def share_secret(
    s: int,
    t: int,
    n: int,
    modulus: int = MERSENNE_61,
    rng: random.Random | None = None,
    coefficients: Sequence[int] | None = None,
) -> list[Share]:
    """Split ``s`` into ``n`` shares, any ``t + 1`` of which reconstruct it.

    ``coefficients`` fixes ``a_1..a_t`` instead of drawing them from ``rng``.
    """
    if not is_prime(modulus):
        raise ValueError(f"modulus {modulus} is not prime")
    if modulus <= n:
        raise ValueError("modulus must exceed the number of parties")
    if not 0 <= t < n:
        raise ValueError("threshold t must satisfy 0 <= t < n")
    if not 0 <= s < modulus:
        raise ValueError("secret must be a field element")
    if coefficients is None:
        rng = rng or random.SystemRandom()
        coefficients = [rng.randrange(modulus) for _ in range(t)]
    elif len(coefficients) != t:
        raise ValueError(f"expected {t} coefficients, got {len(coefficients)}")
    coeffs = [s, *(c % modulus for c in coefficients)]
    return [Share(i, _eval_poly(coeffs, i, modulus), modulus) for i in range(1, n + 1)]


def lagrange_basis_at(xs: Sequence[int], j: int, x: int, p: int) -> int:
    """Value at ``x`` of the basis polynomial that is 1 at ``xs[j]``, 0 at the rest."""
    num, den = 1, 1
    for m, xm in enumerate(xs):
        if m != j:
            num = num * (x - xm) % p
            den = den * (xs[j] - xm) % p
    return num * pow(den, -1, p) % p


def reconstruct(shares: Iterable[Share], modulus: int | None = None, t: int | None = None) -> int:
    """Interpolate the sharing polynomial at zero."""
    shares = list(shares)
    if not shares:
        raise ReconstructionError("no shares given")
    p = modulus if modulus is not None else shares[0].modulus
    if any(sh.modulus != p for sh in shares):
        raise ReconstructionError("shares use inconsistent moduli")
    xs = [sh.party_id for sh in shares]
    if len(set(xs)) != len(xs):
        raise ReconstructionError("duplicate party ids")
    if t is not None and len(shares) < t + 1:
        raise ReconstructionError(f"need {t + 1} shares, got {len(shares)}")
    return sum(sh.value * lagrange_basis_at(xs, j, 0, p) for j, sh in enumerate(shares)) % p


def encode_fixed(x: float, modulus: int = MERSENNE_61) -> int:
    """Fixed-point field encoding with scale 2**32, offset so 0.0 is 2**52."""
    if not math.isfinite(x) or abs(x) > FIXED_LIMIT:
        raise OverflowError(f"{x} outside the fixed-point range +-{FIXED_LIMIT}")
    if modulus <= 2 * FIXED_OFFSET:
        raise ValueError("modulus too small for the fixed-point encoding")
    return round(x * (1 << FIXED_SCALE_BITS)) + FIXED_OFFSET


def decode_fixed(e: int, modulus: int = MERSENNE_61) -> float:
    if not 0 <= e <= 2 * FIXED_OFFSET:
        raise OverflowError(f"field element {e} is not a fixed-point encoding")
    return (e - FIXED_OFFSET) / (1 << FIXED_SCALE_BITS)


# --------------------------------------------------------------------------
# Negotiation protocol
# --------------------------------------------------------------------------

PROTOCOL_STEPS = ("coordinator_election", "range_sharing", "quantization_setup", "param_sharing")


class Phase(enum.IntEnum):
    IDLE = 0
    RANGE_SHARING = 1
    SETUP = 2
    PARAM_SHARING = 3
    DONE = 4


@dataclass
class NegotiationState:
    phase: Phase = Phase.IDLE
    local_range: tuple[float, float] = (0.0, 0.0)
    coordinator: int | None = None
    scheme: QuantizationScheme | None = None

    def advance(self, to: Phase) -> None:
        if to != self.phase + 1:
            raise ProtocolError(f"illegal transition {self.phase.name} -> {to.name}")
        self.phase = to


@dataclass(frozen=True)
class Message:
    round: int
    sender: int
    receiver: int
    step: str
    kind: str
    payload: tuple

    def digest(self) -> str:
        body = json.dumps([self.kind, list(self.payload)], default=str).encode()
        return hashlib.sha256(body).hexdigest()

    def log_record(self) -> dict:
        return {
            "round": self.round,
            "sender": self.sender,
            "receiver": self.receiver,
            "phase": self.step,
            "payload_digest": self.digest(),
        }


class Transport:
    """Reliable FIFO delivery between in-process parties, with a transcript."""

    def __init__(self):
        self.round = 0
        self.transcript: list[dict] = []
        self._queues: dict[int, list[Message]] = {}

    def register(self, party_id: int) -> None:
        self._queues[party_id] = []

    def send(self, sender: int, receiver: int, step: str, kind: str, payload: tuple) -> None:
        msg = Message(self.round, sender, receiver, step, kind, payload)
        self.transcript.append(msg.log_record())
        self._queues[receiver].append(msg)

    def receive(self, party_id: int, kind: str) -> list[Message]:
        queue = self._queues[party_id]
        taken = [m for m in queue if m.kind == kind]
        self._queues[party_id] = [m for m in queue if m.kind != kind]
        return taken

    def next_round(self) -> None:
        self.round += 1


@dataclass
class Party:
    party_id: int
    x_min: float
    x_max: float
    rng: random.Random = field(default_factory=random.SystemRandom, repr=False)
    state: NegotiationState = field(default_factory=NegotiationState)

    def __post_init__(self):
        if self.x_min > self.x_max:
            raise ValueError(f"party {self.party_id}: x_min > x_max")
        self.state.local_range = (self.x_min, self.x_max)
        self._held: dict[tuple[str, int], Share] = {}

    def deal(self, transport: Transport, step: str, name: str, secret: int, t: int, peers: Sequence[int]) -> None:
        """Shamir-share ``secret`` and send share ``i`` to party ``i``."""
        for sh in share_secret(secret, t, len(peers), MERSENNE_61, self.rng):
            transport.send(self.party_id, peers[sh.party_id - 1], step, "share", (name, self.party_id, sh.value))

    def collect(self, transport: Transport) -> None:
        for msg in transport.receive(self.party_id, "share"):
            name, owner, value = msg.payload
            self._held[(name, owner)] = Share(self.party_id, value, MERSENNE_61)

    def open_shares(self, transport: Transport, step: str, keys: Sequence[tuple[str, int]], peers: Sequence[int]) -> None:
        for key in keys:
            sh = self._held[key]
            for peer in peers:
                transport.send(self.party_id, peer, step, "open", (key[0], key[1], sh.party_id, sh.value))

    def reconstruct_opened(self, transport: Transport, t: int) -> dict[tuple[str, int], int]:
        grouped: dict[tuple[str, int], list[Share]] = {}
        for msg in transport.receive(self.party_id, "open"):
            name, owner, x, y = msg.payload
            grouped.setdefault((name, owner), []).append(Share(x, y, MERSENNE_61))
        out = {}
        for key, shares in grouped.items():
            try:
                out[key] = reconstruct(shares, MERSENNE_61, t=t)
            except ReconstructionError as exc:
                raise ProtocolError(f"party {self.party_id} cannot open {key}: {exc}") from exc
        return out


def _share_and_open(transport, parties, step, values, t):
    """Every owner deals its values, then all shares are opened to everyone.

    ``values`` maps owner id to ``{name: field element}``.  Returns the opened
    values as seen by each party.
    """
    peers = [p.party_id for p in parties]
    for p in parties:
        for name, secret in values.get(p.party_id, {}).items():
            p.deal(transport, step, name, secret, t, peers)
    transport.next_round()
    for p in parties:
        p.collect(transport)
    keys = [(name, owner) for owner, named in values.items() for name in named]
    for p in parties:
        p.open_shares(transport, step, keys, peers)
    transport.next_round()
    return {p.party_id: p.reconstruct_opened(transport, t) for p in parties}


def _salt_limbs(salt: bytes) -> list[int]:
    step = SALT_LIMB_BITS // 8
    return [int.from_bytes(salt[i : i + step], "big") for i in range(0, SALT_BYTES, step)]


def _salt_from_limbs(limbs: Sequence[int]) -> bytes:
    return b"".join(v.to_bytes(SALT_LIMB_BITS // 8, "big") for v in limbs)


def _agreed(opened_by_party: dict[int, dict], key) -> int:
    values = {view[key] for view in opened_by_party.values()}
    if len(values) != 1:
        raise ProtocolError(f"parties disagree on {key}")
    return values.pop()


def run_negotiation(
    parties: Sequence[Party],
    t: int,
    max_level: int = DEFAULT_MAX_LEVEL,
    target_mean: float = DEFAULT_MEAN_LEVEL,
    delta: float | None = None,
    transport: Transport | None = None,
) -> QuantizationScheme:
    """Agree on a :class:`QuantizationScheme` among ``parties``.

    Steps: coordinator election (the largest shared ``x_max``, lowest id on
    ties), local range sharing, quantization set-up by the coordinator, and
    hyper-parameter sharing back to every party.
    """
    n = len(parties)
    if n < 2 * t + 1:
        raise ValueError(f"honest majority needs n >= 2t+1 (n={n}, t={t})")
    ids = [p.party_id for p in parties]
    if sorted(ids) != list(range(1, n + 1)):
        raise ValueError("party ids must be 1..n")
    parties = sorted(parties, key=lambda p: p.party_id)
    transport = transport or Transport()
    for p in parties:
        if p.state.phase != Phase.IDLE:
            raise ProtocolError(f"party {p.party_id} is not idle")
        transport.register(p.party_id)
        p.state.advance(Phase.RANGE_SHARING)

    # Election is merged with range sharing: x_max values are shared first.
    opened = _share_and_open(
        transport, parties, PROTOCOL_STEPS[0], {p.party_id: {"x_max": encode_fixed(p.x_max)} for p in parties}, t
    )
    maxima = {i: decode_fixed(_agreed(opened, ("x_max", i))) for i in ids}
    coordinator = min(ids, key=lambda i: (-maxima[i], i))
    opened = _share_and_open(
        transport, parties, PROTOCOL_STEPS[1], {p.party_id: {"x_min": encode_fixed(p.x_min)} for p in parties}, t
    )
    minima = {i: decode_fixed(_agreed(opened, ("x_min", i))) for i in ids}
    for p in parties:
        p.state.coordinator = coordinator
        p.state.advance(Phase.SETUP)

    lead = parties[coordinator - 1]
    x_min, x_max = min(minima.values()), maxima[coordinator]
    d = (x_max - x_min) / 2.0 if delta is None else delta
    enlarge_range(x_min, x_max, d)
    selection_p = solve_bias(target_mean, max_level)
    salt = lead.rng.getrandbits(8 * SALT_BYTES).to_bytes(SALT_BYTES, "big")
    setup = {"x_min": x_min, "x_max": x_max, "delta": d, "selection_p": selection_p}
    for peer in ids:
        transport.send(coordinator, peer, PROTOCOL_STEPS[2], "setup", ("announce", len(setup) + 1 + SALT_BYTES * 8 // SALT_LIMB_BITS))
    transport.next_round()
    for p in parties:
        transport.receive(p.party_id, "setup")
        p.state.advance(Phase.PARAM_SHARING)

    secrets_ = {name: encode_fixed(v) for name, v in setup.items()}
    secrets_["max_level"] = max_level
    secrets_.update({f"salt{i}": limb for i, limb in enumerate(_salt_limbs(salt))})
    opened = _share_and_open(transport, parties, PROTOCOL_STEPS[3], {coordinator: secrets_}, t)

    for p in parties:
        view = opened[p.party_id]
        got = {name: view[(name, coordinator)] for name in secrets_}
        c_min, c_max = enlarge_range(
            decode_fixed(got["x_min"]), decode_fixed(got["x_max"]), decode_fixed(got["delta"])
        )
        p.state.scheme = QuantizationScheme(
            c_min,
            c_max,
            decode_fixed(got["delta"]),
            got["max_level"],
            decode_fixed(got["selection_p"]),
            _salt_from_limbs([got[f"salt{i}"] for i in range(SALT_BYTES * 8 // SALT_LIMB_BITS)]),
        )
        p.state.advance(Phase.DONE)
    schemes = {p.state.scheme.to_bytes() for p in parties}
    if len(schemes) != 1:
        raise ProtocolError("parties ended with different schemes")
    return parties[0].state.scheme


def make_parties(ranges: Sequence[tuple[float, float]], seed: int | None = None) -> list[Party]:
    """Parties 1..n with the given local ranges and per-party RNGs."""
    root = random.Random(seed) if seed is not None else random.SystemRandom()
    return [
        Party(i + 1, lo, hi, rng=random.Random(root.getrandbits(64)))
        for i, (lo, hi) in enumerate(ranges)
    ]

"""Two-party protocol machinery for feature selection over ciphertexts.

Party A evaluates gates on bit ciphertexts it cannot decrypt; party B holds
the bit-decryption key plus an additively homomorphic scheme of its own.
Party A also has an additive scheme, used for the mask track of the mix.

The improved pipeline runs in five phases over a framed message channel:

  1. preprocess  - B ships its encrypted rows; A builds the per-feature
                   payloads (index, capped count, pair-difference string)
                   homomorphically over the union.
  2. mix         - A additively masks every payload field (one-time XOR pads
                   for bit strings, masks modulo 2^(width+32) for integers)
                   and sends the masked data plus its own-key-encrypted
                   masks; B decrypts only masked values, re-encrypts, adds
                   its own masks to both tracks, and returns everything
                   through one secret permutation.  A unmasks and now holds
                   shuffled payloads it cannot link to features.
  3. sort        - for each comparator of the (pruned) Batcher network, A
                   evaluates an encrypted key comparison, blinds the result
                   bit with a fresh mask, and lets B decrypt it.  A unmasks
                   the outcome and swaps ciphertext HANDLES; no gate ever
                   touches a bit string in this phase.
  4. select      - the cumulative-OR selection circuit, evaluated by A.
  5. output      - A re-shuffles (index, kept-bit) pairs under a fresh
                   permutation of its own; B decrypts them as the final
                   result and returns the selected set.

Every message is logged to a transcript with a masked/clear annotation so
the leakage claims are mechanically checkable (see audit_transcript).

Wire format: each frame is a 4-byte big-endian length followed by canonical
JSON; the first message of a session carries the protocol version byte.
All ciphertexts serialize to fixed-width hex so message sizes depend only on
the public shape (k, n, m, b_max).
"""

from __future__ import annotations

import json
import queue
import random
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .dataset import Dataset
from .baseline import (
    EncFeaturePayload,
    EncRow,
    EncRows,
    batcher_schedule,
    default_b_max,
    enc_bitstrings,
    enc_counts,
    index_width,
    select_features,
)
from .bitcircuit import (
    BitBackend,
    EncBit,
    EncInt,
    GateStats,
    InsecureCleartextBackend,
    PhaseRecorder,
    add,
    less_than,
)

PROTOCOL_VERSION = 1
MASK_SLACK_BITS = 32

CONTROL_KINDS = frozenset({"params", "ack", "abort"})
FINAL_KINDS = frozenset({"output_pairs", "selected_flags"})


class ProtocolError(Exception):
    """Protocol abort: parameter disagreement, unexpected step, bad payload."""


# --- additively homomorphic simulator ----------------------------------------


@dataclass(frozen=True)
class AheCipher:
    value: int
    nonce: int
    width: int

    def serialize(self) -> str:
        return f"{self.value:0{(self.width + 3) // 4}x}{self.nonce:016x}"

    @classmethod
    def deserialize(cls, data: str, width: int) -> "AheCipher":
        return cls(int(data[:-16], 16), int(data[-16:], 16), width)


class InsecureAhe:
    """Additive homomorphic encryption simulator modulo 2^width.

    NOT SECURE: the "ciphertext" stores the plaintext next to a nonce.  It
    reproduces the algebra (ciphertext addition, plaintext addition,
    re-randomization, probabilistic encryption) that the protocol relies on.
    """

    def __init__(self, width: int, nonce_seed: int = 0):
        if width < 1:
            raise ValueError("width must be >= 1")
        self.width = width
        self.modulus = 1 << width
        self._lock = threading.Lock()
        self._next_nonce = (nonce_seed & 0xFFFF) << 40

    def _nonce(self) -> int:
        with self._lock:
            n = self._next_nonce
            self._next_nonce += 1
        return n

    def encrypt(self, value: int) -> AheCipher:
        return AheCipher(value % self.modulus, self._nonce(), self.width)

    def decrypt(self, c: AheCipher) -> int:
        self._check(c)
        return c.value

    def add_cipher(self, a: AheCipher, b: AheCipher) -> AheCipher:
        self._check(a)
        self._check(b)
        return AheCipher((a.value + b.value) % self.modulus, self._nonce(), self.width)

    def add_plain(self, a: AheCipher, plain: int) -> AheCipher:
        self._check(a)
        return AheCipher((a.value + plain) % self.modulus, self._nonce(), self.width)

    def rerandomize(self, a: AheCipher) -> AheCipher:
        self._check(a)
        return AheCipher(a.value, self._nonce(), self.width)

    def _check(self, c: AheCipher) -> None:
        if c.width != self.width:
            raise ProtocolError(f"ciphertext width {c.width} != scheme width {self.width}")

    def public(self) -> "PublicAhe":
        return PublicAhe(self)


class PublicAhe:
    """Public surface of an AHE scheme: everything except decryption."""

    def __init__(self, scheme: InsecureAhe):
        self._scheme = scheme
        self.width = scheme.width
        self.modulus = scheme.modulus

    def encrypt(self, value: int) -> AheCipher:
        return self._scheme.encrypt(value)

    def add_cipher(self, a: AheCipher, b: AheCipher) -> AheCipher:
        return self._scheme.add_cipher(a, b)

    def add_plain(self, a: AheCipher, plain: int) -> AheCipher:
        return self._scheme.add_plain(a, plain)

    def rerandomize(self, a: AheCipher) -> AheCipher:
        return self._scheme.rerandomize(a)


class PublicBitCapability:
    """Public surface of a bit backend: encrypt, evaluate gates, transport.

    Decryption is deliberately absent; this is what the non-key-holding
    party works with.
    """

    def __init__(self, backend: BitBackend):
        self._backend = backend

    def encrypt_bit(self, value: int) -> EncBit:
        return self._backend.encrypt_bit(value)

    def encrypt_int(self, value: int, width: int) -> EncInt:
        return self._backend.encrypt_int(value, width)

    def fresh_random_bit(self) -> EncBit:
        return self._backend.fresh_random_bit()

    def xor(self, a: EncBit, b: EncBit) -> EncBit:
        return self._backend.xor(a, b)

    def and_(self, a: EncBit, b: EncBit) -> EncBit:
        return self._backend.and_(a, b)

    def not_(self, a: EncBit) -> EncBit:
        return self._backend.not_(a)

    def mux(self, select: EncBit, a: EncBit, b: EncBit) -> EncBit:
        return self._backend.mux(select, a, b)

    def serialize_bit(self, bit: EncBit) -> str:
        return self._backend.serialize_bit(bit)

    def deserialize_bit(self, data: str) -> EncBit:
        return self._backend.deserialize_bit(data)

    def stats(self) -> GateStats:
        return self._backend.stats()

    def op_counts(self) -> dict:
        return self._backend.op_counts()


# --- channel and transcript ---------------------------------------------------


@dataclass(frozen=True)
class TranscriptMessage:
    seq: int
    sender: str
    step: str
    kind: str
    key_owner: str          # "A", "B" or "none" (plaintext payload)
    masked: bool
    items: int
    bits_per_item: int
    body: bytes

    @property
    def n_bytes(self) -> int:
        return len(self.body)

    def record(self) -> dict:
        return {
            "seq": self.seq,
            "sender": self.sender,
            "step": self.step,
            "bytes": self.n_bytes,
            "masked": self.masked,
        }


class Transcript:
    """Ordered, thread-safe log of every message of one session."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.messages: list[TranscriptMessage] = []

    def append(self, msg: TranscriptMessage) -> None:
        with self._lock:
            self.messages.append(msg)

    def shape_signature(self) -> tuple:
        """Everything about the message sequence except the payload values."""
        return tuple(
            (m.sender, m.step, m.kind, m.items, m.bits_per_item, m.n_bytes)
            for m in self.messages
        )

    def total_bytes(self) -> int:
        return sum(m.n_bytes for m in self.messages)

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for m in self.messages:
                fh.write(json.dumps(m.record(), sort_keys=True) + "\n")

    def byte_equal(self, other: "Transcript") -> bool:
        return [m.body for m in self.messages] == [m.body for m in other.messages]


def _encode(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


class Endpoint:
    """One party's end of the duplex queue channel."""

    def __init__(self, side, transcript, seq, lock, q_out, q_in, timeout=120.0):
        self.side = side
        self._transcript = transcript
        self._seq = seq
        self._lock = lock
        self._out = q_out
        self._in = q_in
        self.timeout = timeout

    def send(
        self,
        step: str,
        kind: str,
        data,
        *,
        key_owner: str = "none",
        masked: bool = False,
        items: int = 0,
        bits_per_item: int = 0,
    ) -> None:
        with self._lock:
            seq = self._seq[0]
            self._seq[0] += 1
            body = _encode(
                {
                    "seq": seq,
                    "sender": self.side,
                    "step": step,
                    "kind": kind,
                    "key_owner": key_owner,
                    "masked": masked,
                    "items": items,
                    "bits": bits_per_item,
                    "data": data,
                }
            )
            self._transcript.append(
                TranscriptMessage(
                    seq, self.side, step, kind, key_owner, masked, items, bits_per_item, body
                )
            )
            self._out.put(struct.pack(">I", len(body)) + body)

    def recv(self, expect_step: str, expect_kind: str):
        try:
            frame = self._in.get(timeout=self.timeout)
        except queue.Empty:
            raise ProtocolError(f"{self.side}: timed out waiting for {expect_step}/{expect_kind}")
        (length,) = struct.unpack(">I", frame[:4])
        body = frame[4:]
        if len(body) != length:
            raise ProtocolError(f"{self.side}: bad frame length")
        msg = json.loads(body)
        if msg["step"] == "abort":
            raise ProtocolError(f"{self.side}: peer aborted: {msg['data']}")
        if msg["step"] != expect_step or msg["kind"] != expect_kind:
            self.abort(f"expected {expect_step}/{expect_kind}, got {msg['step']}/{msg['kind']}")
            raise ProtocolError(
                f"{self.side}: expected {expect_step}/{expect_kind}, "
                f"got {msg['step']}/{msg['kind']}"
            )
        return msg

    def abort(self, reason: str) -> None:
        try:
            self.send("abort", "abort", reason)
        except Exception:  # pragma: no cover - best effort
            pass


class Channel:
    """In-process duplex channel of length-prefixed frames, with transcript."""

    def __init__(self, timeout: float = 120.0):
        self.transcript = Transcript()
        seq = [0]
        lock = threading.Lock()
        a_to_b: queue.Queue = queue.Queue()
        b_to_a: queue.Queue = queue.Queue()
        self.a = Endpoint("A", self.transcript, seq, lock, a_to_b, b_to_a, timeout)
        self.b = Endpoint("B", self.transcript, seq, lock, b_to_a, a_to_b, timeout)


def run_two_party(fn_a: Callable, fn_b: Callable, timeout: float = 300.0):
    """Run the two party programs on concurrent workers; propagate failures."""
    results: dict = {}
    errors: dict = {}

    def runner(name, fn):
        try:
            results[name] = fn()
        except BaseException as exc:  # noqa: BLE001 - re-raised below
            errors[name] = exc

    ta = threading.Thread(target=runner, args=("A", fn_a), daemon=True)
    tb = threading.Thread(target=runner, args=("B", fn_b), daemon=True)
    ta.start()
    tb.start()
    ta.join(timeout)
    tb.join(timeout)
    if ta.is_alive() or tb.is_alive():
        raise ProtocolError("party worker did not terminate")
    if errors:
        for exc in errors.values():
            if isinstance(exc, ProtocolError):
                raise exc
        raise next(iter(errors.values()))
    return results["A"], results["B"]


# --- session parameters -------------------------------------------------------


@dataclass(frozen=True)
class SessionParams:
    k: int
    n_a: int
    m_a: int
    n_b: int
    m_b: int
    b_max: int

    @property
    def n(self) -> int:
        return self.n_a + self.n_b

    @property
    def m(self) -> int:
        return self.m_a + self.m_b

    @property
    def nm(self) -> int:
        return self.n * self.m

    @property
    def w_idx(self) -> int:
        return index_width(self.k)

    def as_json(self) -> dict:
        return {
            "version": PROTOCOL_VERSION,
            "k": self.k,
            "n_a": self.n_a,
            "m_a": self.m_a,
            "n_b": self.n_b,
            "m_b": self.m_b,
            "b_max": self.b_max,
        }


# --- serialization helpers ----------------------------------------------------


def _ser_bit(bit: EncBit) -> str:
    return bit.backend.serialize_bit(bit)


def _ser_int(x: EncInt) -> list[str]:
    return [_ser_bit(b) for b in x.bits]


def _deser_int(capability, data: Sequence[str]) -> EncInt:
    return EncInt(tuple(capability.deserialize_bit(s) for s in data))


# --- parties -------------------------------------------------------------------


class _Party:
    def __init__(self, role: str, seed: int, dataset: Dataset | None = None):
        self.role = role
        self.dataset = dataset
        self.rng = random.Random(f"cwcselect:{role}:{seed}")
        self.mask_log: list[tuple[str, int, object]] = []
        self._ahe_cache: dict[int, InsecureAhe] = {}
        self._ahe_seed = seed

    def ahe(self, width: int) -> InsecureAhe:
        """This party's own additive scheme for the given modulus width."""
        if width not in self._ahe_cache:
            self._ahe_cache[width] = InsecureAhe(width, nonce_seed=self._ahe_seed + width)
        return self._ahe_cache[width]

    def foreign_ahe(self, width: int) -> PublicAhe:
        """Public-operation handle for ciphertexts under the peer's key.

        The algebra of add_plain/rerandomize is public; the randomness is the
        operator's own, which is why this is a separate nonce stream.
        """
        key = -width - 1
        if key not in self._ahe_cache:
            self._ahe_cache[key] = InsecureAhe(width, nonce_seed=self._ahe_seed * 131 + width + 7919)
        return self._ahe_cache[key].public()

    def _log_mask(self, track: str, item: int, value) -> None:
        self.mask_log.append((track, item, value))


class PartyA(_Party):
    """Gate-evaluating party: sees ciphertexts and shuffled positions only.

    ``unsafe_skip_compare_masking`` is a fault-injection switch for the
    transcript auditor: it sends raw comparison bits instead of blinded ones.
    """

    def __init__(
        self,
        dataset: Dataset | None,
        capability: PublicBitCapability | None,
        seed: int = 0,
        unsafe_skip_compare_masking: bool = False,
    ):
        super().__init__("A", seed, dataset)
        self.capability = capability
        self.unsafe_skip_compare_masking = unsafe_skip_compare_masking
        self.recorder: PhaseRecorder | None = None
        self.handle_moves = 0

    # -- phases --------------------------------------------------------

    def session_propose(self, conn: Endpoint, params: SessionParams) -> None:
        conn.send("session", "params", params.as_json())
        ack = conn.recv("session", "ack")
        if ack["data"].get("version") != PROTOCOL_VERSION:
            raise ProtocolError("version mismatch in session ack")

    def preprocess(self, conn: Endpoint, params: SessionParams) -> list[EncFeaturePayload]:
        cap = self.capability
        msg = conn.recv("rows", "enc_rows")
        if (
            len(msg["data"]["pos"]) != params.n_b
            or len(msg["data"]["neg"]) != params.m_b
        ):
            raise ProtocolError("peer row counts disagree with session parameters")

        def deser_row(cells):
            bits = [cap.deserialize_bit(s) for s in cells]
            return EncRow(tuple(bits[:-1]), bits[-1])

        def enc_row(row) -> EncRow:
            return EncRow(
                tuple(cap.encrypt_bit(b) for b in row.features),
                cap.encrypt_bit(row.dummy),
            )

        b_pos = [deser_row(cells) for cells in msg["data"]["pos"]]
        b_neg = [deser_row(cells) for cells in msg["data"]["neg"]]
        a_pos = [enc_row(r) for r in self.dataset.positives()]
        a_neg = [enc_row(r) for r in self.dataset.negatives()]
        enc = EncRows(tuple(a_pos + b_pos), tuple(a_neg + b_neg), params.k)
        payloads = enc_bitstrings(enc, cap)
        return enc_counts(payloads, params.b_max, cap)

    def mix_payloads(
        self, conn: Endpoint, params: SessionParams, payloads: Sequence[EncFeaturePayload]
    ) -> list[EncFeaturePayload]:
        cap = self.capability
        k, nm = params.k, params.nm
        w_idx, b_max = params.w_idx, params.b_max
        ahe_idx = self.ahe(w_idx + MASK_SLACK_BITS)
        ahe_cnt = self.ahe(b_max + MASK_SLACK_BITS)
        ahe_pad = self.ahe(1)

        r_idx, r_cnt, pads = [], [], []
        masked_idx, masked_cnt, masked_bits = [], [], []
        for i, p in enumerate(payloads):
            ri = self.rng.randrange(ahe_idx.modulus)
            rc = self.rng.randrange(ahe_cnt.modulus)
            pad = tuple(self.rng.randrange(2) for _ in range(nm))
            self._log_mask("mix_idx", i, ri)
            self._log_mask("mix_cnt", i, rc)
            self._log_mask("mix_pad", i, pad)
            r_idx.append(ri)
            r_cnt.append(rc)
            pads.append(pad)
            masked_idx.append(add(p.index, cap.encrypt_int(ri % (1 << w_idx), w_idx)))
            masked_cnt.append(add(p.count, cap.encrypt_int(rc % (1 << b_max), b_max)))
            masked_bits.append(
                [
                    b.backend.xor(b, cap.encrypt_bit(pb))
                    for b, pb in zip(p.bits, pad)
                ]
            )

        conn.send(
            "mix", "fwd_idx", [_ser_int(x) for x in masked_idx],
            key_owner="B", masked=True, items=k, bits_per_item=w_idx,
        )
        conn.send(
            "mix", "fwd_cnt", [_ser_int(x) for x in masked_cnt],
            key_owner="B", masked=True, items=k, bits_per_item=b_max,
        )
        conn.send(
            "mix", "fwd_bits", [[_ser_bit(b) for b in row] for row in masked_bits],
            key_owner="B", masked=True, items=k, bits_per_item=nm,
        )
        conn.send(
            "mix", "fwd_mask_idx", [ahe_idx.encrypt(r).serialize() for r in r_idx],
            key_owner="A", items=k, bits_per_item=ahe_idx.width,
        )
        conn.send(
            "mix", "fwd_mask_cnt", [ahe_cnt.encrypt(r).serialize() for r in r_cnt],
            key_owner="A", items=k, bits_per_item=ahe_cnt.width,
        )
        conn.send(
            "mix", "fwd_mask_bits",
            [[ahe_pad.encrypt(pb).serialize() for pb in pad] for pad in pads],
            key_owner="A", items=k, bits_per_item=nm,
        )

        ret_idx = conn.recv("mix", "ret_idx")["data"]
        ret_cnt = conn.recv("mix", "ret_cnt")["data"]
        ret_bits = conn.recv("mix", "ret_bits")["data"]
        ret_mask_idx = conn.recv("mix", "ret_mask_idx")["data"]
        ret_mask_cnt = conn.recv("mix", "ret_mask_cnt")["data"]
        ret_mask_bits = conn.recv("mix", "ret_mask_bits")["data"]
        if not all(
            len(track) == k
            for track in (ret_idx, ret_cnt, ret_bits, ret_mask_idx, ret_mask_cnt, ret_mask_bits)
        ):
            raise ProtocolError("mix track length mismatch")

        out = []
        for t in range(k):
            total_idx = ahe_idx.decrypt(AheCipher.deserialize(ret_mask_idx[t], ahe_idx.width))
            total_cnt = ahe_cnt.decrypt(AheCipher.deserialize(ret_mask_cnt[t], ahe_cnt.width))
            idx = add(
                _deser_int(cap, ret_idx[t]),
                cap.encrypt_int((-total_idx) % (1 << w_idx), w_idx),
            )
            cnt = add(
                _deser_int(cap, ret_cnt[t]),
                cap.encrypt_int((-total_cnt) % (1 << b_max), b_max),
            )
            bits = []
            for h in range(nm):
                pad_bit = ahe_pad.decrypt(AheCipher.deserialize(ret_mask_bits[t][h], 1))
                cipher = cap.deserialize_bit(ret_bits[t][h])
                bits.append(cipher.backend.xor(cipher, cap.encrypt_bit(pad_bit)))
            out.append(EncFeaturePayload(idx, tuple(bits), cnt))
        return out

    def sort_payloads(
        self, conn: Endpoint, payloads: Sequence[EncFeaturePayload]
    ) -> list[EncFeaturePayload]:
        """Sort shuffled payloads by moving handles under revealed, blinded
        comparison outcomes.  Applies zero gates to bit strings."""
        cap = self.capability
        items = list(payloads)
        schedule = batcher_schedule(len(items))
        zero = cap.encrypt_bit(0)
        self.handle_moves = 0
        for i, j in schedule.pruned:
            key_i = EncInt((*items[i].index.bits, *items[i].count.bits, zero))
            key_j = EncInt((*items[j].index.bits, *items[j].count.bits, zero))
            cmp_bit = less_than(key_j, key_i)
            mask = self.rng.randrange(2)
            if self.unsafe_skip_compare_masking:
                conn.send(
                    "sort", "cmp", _ser_bit(cmp_bit),
                    key_owner="B", masked=False, items=1, bits_per_item=1,
                )
                mask = 0
            else:
                blinded = cmp_bit.backend.xor(cmp_bit, cap.encrypt_bit(mask))
                conn.send(
                    "sort", "cmp", _ser_bit(blinded),
                    key_owner="B", masked=True, items=1, bits_per_item=1,
                )
            answer = conn.recv("sort", "cmp_ans")
            if answer["data"] not in ("0", "1"):
                raise ProtocolError("comparison answer is not a bit")
            if int(answer["data"]) ^ mask:
                items[i], items[j] = items[j], items[i]
                self.handle_moves += 1
        return items

    def output(
        self,
        conn: Endpoint,
        payloads: Sequence[EncFeaturePayload],
        kept: Sequence[EncBit],
    ) -> tuple[int, ...]:
        k = len(payloads)
        pairs = [
            [_ser_int(p.index), _ser_bit(r)] for p, r in zip(payloads, kept)
        ]
        self.rng.shuffle(pairs)
        conn.send(
            "output", "output_pairs", pairs,
            key_owner="B", masked=False, items=k,
            bits_per_item=(payloads[0].index.width + 1) if payloads else 0,
        )
        flags = conn.recv("output", "selected_flags")["data"]
        if len(flags) != k or set(flags) - {"0", "1"}:
            raise ProtocolError("malformed selected flags")
        return tuple(i + 1 for i, ch in enumerate(flags) if ch == "1")

    def run(self, conn: Endpoint, params: SessionParams) -> tuple[int, ...]:
        self.recorder = PhaseRecorder(self.capability)
        try:
            self.session_propose(conn, params)
            payloads = self.preprocess(conn, params)
            self.recorder.record("preprocess")
            payloads = self.mix_payloads(conn, params, payloads)
            self.recorder.record("mix")
            payloads = self.sort_payloads(conn, payloads)
            self.recorder.record("sort")
            state = select_features(payloads, self.capability)
            self.recorder.record("select")
            selected = self.output(conn, payloads, state.kept)
            self.recorder.record("output")
            return selected
        except Exception as exc:
            conn.abort(str(exc))
            raise


class PartyB(_Party):
    """Key-holding party: decrypts only masked values until the final output."""

    def __init__(self, dataset: Dataset | None, backend: BitBackend, seed: int = 0):
        super().__init__("B", seed, dataset)
        self.backend = backend
        self.last_permutation: tuple[int, ...] | None = None
        self._forced_permutation: tuple[int, ...] | None = None
        self.observed_compare_bits: list[int] = []

    def force_permutation(self, pi: Sequence[int]) -> None:
        """Pin the next mix permutation (testing hook)."""
        self._forced_permutation = tuple(pi)

    def _draw_permutation(self, n: int) -> list[int]:
        if self._forced_permutation is not None:
            pi = list(self._forced_permutation)
            self._forced_permutation = None
            if sorted(pi) != list(range(n)):
                raise ProtocolError("forced permutation is not a permutation")
        else:
            pi = list(range(n))
            self.rng.shuffle(pi)
        self.last_permutation = tuple(pi)
        return pi

    # -- phases --------------------------------------------------------

    def session_accept(self, conn: Endpoint) -> SessionParams:
        msg = conn.recv("session", "params")
        data = msg["data"]
        if data.get("version") != PROTOCOL_VERSION:
            conn.abort("protocol version mismatch")
            raise ProtocolError("protocol version mismatch")
        params = SessionParams(
            data["k"], data["n_a"], data["m_a"], data["n_b"], data["m_b"], data["b_max"]
        )
        if self.dataset is not None and (
            params.k != self.dataset.k
            or params.n_b != self.dataset.n
            or params.m_b != self.dataset.m
        ):
            conn.abort("public parameters disagree with local data")
            raise ProtocolError("public parameters disagree with local data")
        if params.b_max < 1:
            conn.abort("b_max out of range")
            raise ProtocolError("b_max out of range")
        conn.send("session", "ack", {"version": PROTOCOL_VERSION})
        return params

    def send_rows(self, conn: Endpoint, params: SessionParams) -> None:
        def ser_row(row) -> list[str]:
            cells = [self.backend.encrypt_bit(b) for b in row.features]
            cells.append(self.backend.encrypt_bit(row.dummy))
            return [_ser_bit(c) for c in cells]

        data = {
            "pos": [ser_row(r) for r in self.dataset.positives()],
            "neg": [ser_row(r) for r in self.dataset.negatives()],
        }
        conn.send(
            "rows", "enc_rows", data,
            key_owner="B", items=params.n_b + params.m_b, bits_per_item=params.k + 1,
        )

    def mix_service(self, conn: Endpoint, params: SessionParams) -> None:
        k, nm = params.k, params.nm
        w_idx, b_max = params.w_idx, params.b_max
        idx_mod = 1 << (w_idx + MASK_SLACK_BITS)
        cnt_mod = 1 << (b_max + MASK_SLACK_BITS)

        fwd_idx = conn.recv("mix", "fwd_idx")["data"]
        fwd_cnt = conn.recv("mix", "fwd_cnt")["data"]
        fwd_bits = conn.recv("mix", "fwd_bits")["data"]
        mask_idx = conn.recv("mix", "fwd_mask_idx")["data"]
        mask_cnt = conn.recv("mix", "fwd_mask_cnt")["data"]
        mask_bits = conn.recv("mix", "fwd_mask_bits")["data"]
        if not all(
            len(track) == k
            for track in (fwd_idx, fwd_cnt, fwd_bits, mask_idx, mask_cnt, mask_bits)
        ):
            conn.abort("mix track length mismatch")
            raise ProtocolError("mix track length mismatch")

        pub_idx = self.foreign_ahe(w_idx + MASK_SLACK_BITS)
        pub_cnt = self.foreign_ahe(b_max + MASK_SLACK_BITS)
        pub_pad = self.foreign_ahe(1)
        new_idx, new_cnt, new_bits = [], [], []
        new_mask_idx, new_mask_cnt, new_mask_bits = [], [], []
        for i in range(k):
            # everything decrypted here is additively masked by A
            masked_idx_val = self.backend.decrypt_int(_deser_int_backend(self.backend, fwd_idx[i]))
            masked_cnt_val = self.backend.decrypt_int(_deser_int_backend(self.backend, fwd_cnt[i]))
            masked_bit_vals = [
                self.backend.decrypt_bit(self.backend.deserialize_bit(s)) for s in fwd_bits[i]
            ]

            r2_idx = self.rng.randrange(idx_mod)
            r2_cnt = self.rng.randrange(cnt_mod)
            pad2 = tuple(self.rng.randrange(2) for _ in range(nm))
            self._log_mask("mix_idx", i, r2_idx)
            self._log_mask("mix_cnt", i, r2_cnt)
            self._log_mask("mix_pad", i, pad2)

            new_idx.append(
                self.backend.encrypt_int((masked_idx_val + r2_idx) % (1 << w_idx), w_idx)
            )
            new_cnt.append(
                self.backend.encrypt_int((masked_cnt_val + r2_cnt) % (1 << b_max), b_max)
            )
            new_bits.append(
                [self.backend.encrypt_bit(v ^ p) for v, p in zip(masked_bit_vals, pad2)]
            )
            new_mask_idx.append(
                pub_idx.add_plain(
                    AheCipher.deserialize(mask_idx[i], pub_idx.width), r2_idx
                ).serialize()
            )
            new_mask_cnt.append(
                pub_cnt.add_plain(
                    AheCipher.deserialize(mask_cnt[i], pub_cnt.width), r2_cnt
                ).serialize()
            )
            new_mask_bits.append(
                [
                    pub_pad.add_plain(AheCipher.deserialize(s, 1), p).serialize()
                    for s, p in zip(mask_bits[i], pad2)
                ]
            )

        pi = self._draw_permutation(k)
        conn.send(
            "mix", "ret_idx", [_ser_int(new_idx[p]) for p in pi],
            key_owner="B", masked=True, items=k, bits_per_item=w_idx,
        )
        conn.send(
            "mix", "ret_cnt", [_ser_int(new_cnt[p]) for p in pi],
            key_owner="B", masked=True, items=k, bits_per_item=b_max,
        )
        conn.send(
            "mix", "ret_bits", [[_ser_bit(b) for b in new_bits[p]] for p in pi],
            key_owner="B", masked=True, items=k, bits_per_item=nm,
        )
        conn.send(
            "mix", "ret_mask_idx", [new_mask_idx[p] for p in pi],
            key_owner="A", masked=True, items=k, bits_per_item=w_idx + MASK_SLACK_BITS,
        )
        conn.send(
            "mix", "ret_mask_cnt", [new_mask_cnt[p] for p in pi],
            key_owner="A", masked=True, items=k, bits_per_item=b_max + MASK_SLACK_BITS,
        )
        conn.send(
            "mix", "ret_mask_bits", [new_mask_bits[p] for p in pi],
            key_owner="A", masked=True, items=k, bits_per_item=nm,
        )

    def sort_service(self, conn: Endpoint, comparator_count: int) -> None:
        for _ in range(comparator_count):
            msg = conn.recv("sort", "cmp")
            bit = self.backend.decrypt_bit(self.backend.deserialize_bit(msg["data"]))
            self.observed_compare_bits.append(bit)
            conn.send(
                "sort", "cmp_ans", str(bit),
                key_owner="none", masked=msg["masked"], items=1, bits_per_item=1,
            )

    def output_service(self, conn: Endpoint, params: SessionParams) -> tuple[int, ...]:
        msg = conn.recv("output", "output_pairs")
        selected = []
        for idx_cells, kept_cell in msg["data"]:
            idx = self.backend.decrypt_int(_deser_int_backend(self.backend, idx_cells))
            kept = self.backend.decrypt_bit(self.backend.deserialize_bit(kept_cell))
            if kept and idx:
                selected.append(idx)
        selected.sort()
        flags = "".join("1" if i + 1 in selected else "0" for i in range(params.k))
        conn.send("output", "selected_flags", flags, key_owner="none", items=params.k)
        return tuple(selected)

    def run(self, conn: Endpoint) -> tuple[int, ...]:
        try:
            params = self.session_accept(conn)
            self.send_rows(conn, params)
            self.mix_service(conn, params)
            self.sort_service(conn, len(batcher_schedule(params.k).pruned))
            return self.output_service(conn, params)
        except Exception as exc:
            conn.abort(str(exc))
            raise


def _deser_int_backend(backend: BitBackend, data: Sequence[str]) -> EncInt:
    return EncInt(tuple(backend.deserialize_bit(s) for s in data))


# --- standalone subprotocols ----------------------------------------------------


def make_session_params(
    dataset_a: Dataset, dataset_b: Dataset, b_max: int | None = None
) -> SessionParams:
    if dataset_a.k != dataset_b.k:
        raise ProtocolError(
            f"parties disagree on the feature count: {dataset_a.k} vs {dataset_b.k}"
        )
    n = dataset_a.n + dataset_b.n
    m = dataset_a.m + dataset_b.m
    if b_max is None:
        b_max = default_b_max(n * m)
    return SessionParams(dataset_a.k, dataset_a.n, dataset_a.m, dataset_b.n, dataset_b.m, b_max)


def mix_network(
    items: Sequence[AheCipher],
    party_a: "PartyA",
    party_b: "PartyB",
    permutation: Sequence[int] | None = None,
    channel: Channel | None = None,
) -> list[AheCipher]:
    """Re-encryption shuffle for an array of AHE ciphertexts under B's key.

    A additively masks every item and ships its own-key-encrypted masks
    alongside; B adds fresh masks to both tracks, re-randomizes, and returns
    them through one secret permutation; A strips the (now permuted) total
    masks and is left with a shuffled, re-randomized copy of the input.  A
    learns nothing about the permutation, B nothing about the values.

    Returns the shuffled ciphertexts (held by A); the permutation stays with
    ``party_b`` (``last_permutation``).
    """
    items = list(items)
    if not items:
        return []
    width = items[0].width
    data_scheme = party_b.ahe(width)          # items live under B's key
    data_public = data_scheme.public()
    mask_scheme = party_a.ahe(width)          # A's mask track, same modulus
    ch = channel or Channel()
    if permutation is not None:
        party_b.force_permutation(permutation)
    count = len(items)

    def a_side():
        masked, masks = [], []
        for i, c in enumerate(items):
            r = party_a.rng.randrange(mask_scheme.modulus)
            party_a._log_mask("mix_item", i, r)
            masked.append(data_public.add_plain(c, r))
            masks.append(mask_scheme.encrypt(r))
        ch.a.send(
            "mix", "data", [c.serialize() for c in masked],
            key_owner="B", masked=True, items=count, bits_per_item=width,
        )
        ch.a.send(
            "mix", "masks", [c.serialize() for c in masks],
            key_owner="A", items=count, bits_per_item=width,
        )
        ret = ch.a.recv("mix", "data_ret")["data"]
        ret_masks = ch.a.recv("mix", "masks_ret")["data"]
        if len(ret) != count or len(ret_masks) != count:
            raise ProtocolError("mix track length mismatch")
        out = []
        for data_s, mask_s in zip(ret, ret_masks):
            total = mask_scheme.decrypt(AheCipher.deserialize(mask_s, width))
            out.append(
                data_public.add_plain(
                    AheCipher.deserialize(data_s, width), (-total) % data_scheme.modulus
                )
            )
        return out

    def b_side():
        data = ch.b.recv("mix", "data")["data"]
        masks = ch.b.recv("mix", "masks")["data"]
        if len(data) != len(masks):
            ch.b.abort("mix track length mismatch")
            raise ProtocolError("mix track length mismatch")
        mask_public = party_b.foreign_ahe(width)
        new_data, new_masks = [], []
        for i, (data_s, mask_s) in enumerate(zip(data, masks)):
            r2 = party_b.rng.randrange(1 << width)
            party_b._log_mask("mix_item", i, r2)
            c = data_scheme.add_plain(AheCipher.deserialize(data_s, width), r2)
            new_data.append(data_scheme.rerandomize(c))
            new_masks.append(
                mask_public.add_plain(AheCipher.deserialize(mask_s, width), r2)
            )
        pi = party_b._draw_permutation(len(data))
        ch.b.send(
            "mix", "data_ret", [new_data[p].serialize() for p in pi],
            key_owner="B", masked=True, items=count, bits_per_item=width,
        )
        ch.b.send(
            "mix", "masks_ret", [new_masks[p].serialize() for p in pi],
            key_owner="A", masked=True, items=count, bits_per_item=width,
        )

    out, _ = run_two_party(a_side, b_side)
    return out


def joint_preprocess(
    dataset_a: Dataset,
    dataset_b: Dataset,
    party_a: "PartyA",
    party_b: "PartyB",
    b_max: int | None = None,
    channel: Channel | None = None,
) -> list[EncFeaturePayload]:
    """Session setup plus payload construction over the union, held by A."""
    params = make_session_params(dataset_a, dataset_b, b_max)
    ch = channel or Channel()

    def a_side():
        party_a.session_propose(ch.a, params)
        return party_a.preprocess(ch.a, params)

    def b_side():
        p = party_b.session_accept(ch.b)
        party_b.send_rows(ch.b, p)

    payloads, _ = run_two_party(a_side, b_side)
    return payloads


def masked_compare_reveal(
    payloads: Sequence[EncFeaturePayload],
    party_a: "PartyA",
    party_b: "PartyB",
    channel: Channel | None = None,
) -> list[EncFeaturePayload]:
    """Sort payloads held by A with B decrypting only blinded comparison bits."""
    ch = channel or Channel()
    schedule = batcher_schedule(len(payloads))

    def a_side():
        return party_a.sort_payloads(ch.a, payloads)

    def b_side():
        party_b.sort_service(ch.b, len(schedule.pruned))

    ordered, _ = run_two_party(a_side, b_side)
    return ordered


# --- end-to-end improved pipeline -------------------------------------------------


@dataclass(frozen=True)
class ImprovedResult:
    selected: tuple[int, ...]
    params: SessionParams
    transcript: Transcript
    phase_stats: dict
    total_stats: GateStats
    handle_moves: int
    comparators_executed: int       # pruned network, one blinded reveal each
    comparators_padded: int         # full-network size (cost-table convention)
    permutation: tuple[int, ...]    # B's secret shuffle (simulator observability)
    mask_log_a: tuple
    mask_log_b: tuple

    @property
    def message_count(self) -> int:
        return len(self.transcript.messages)

    @property
    def message_bytes(self) -> int:
        return self.transcript.total_bytes()


def run_improved(
    dataset_a: Dataset,
    dataset_b: Dataset,
    b_max: int | None = None,
    seed: int = 0,
    transcript_path=None,
    unsafe_skip_compare_masking: bool = False,
) -> ImprovedResult:
    """Full two-party pipeline: preprocess, mix, handle-moving sort, select, output.

    ``unsafe_skip_compare_masking`` deliberately breaks the blinding of
    comparison bits so the transcript auditor has something to catch; never
    enable it outside fault-injection tests.
    """
    params = make_session_params(dataset_a, dataset_b, b_max)
    backend = InsecureCleartextBackend(seed=seed)
    party_a = PartyA(
        dataset_a,
        PublicBitCapability(backend),
        seed=seed,
        unsafe_skip_compare_masking=unsafe_skip_compare_masking,
    )
    party_b = PartyB(dataset_b, backend, seed=seed)
    channel = Channel()

    selected_a, selected_b = run_two_party(
        lambda: party_a.run(channel.a, params), lambda: party_b.run(channel.b)
    )
    if selected_a != selected_b:
        raise ProtocolError("parties disagree on the selected set")
    if transcript_path is not None:
        channel.transcript.write_jsonl(transcript_path)

    schedule = batcher_schedule(params.k)
    return ImprovedResult(
        selected=selected_a,
        params=params,
        transcript=channel.transcript,
        phase_stats=dict(party_a.recorder.phases),
        total_stats=party_a.recorder.total(),
        handle_moves=party_a.handle_moves,
        comparators_executed=len(schedule.pruned),
        comparators_padded=len(schedule.comparators),
        permutation=party_b.last_permutation or (),
        mask_log_a=tuple(party_a.mask_log),
        mask_log_b=tuple(party_b.mask_log),
    )


# --- transcript audit ---------------------------------------------------------------


@dataclass(frozen=True)
class AuditViolation:
    seq: int
    step: str
    kind: str
    reason: str


@dataclass(frozen=True)
class AuditReport:
    ok: bool
    violations: tuple[AuditViolation, ...]
    message_count: int
    shape: tuple

    def as_json(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [vars(v) for v in self.violations],
            "message_count": self.message_count,
        }


def audit_transcript(transcript: Transcript) -> AuditReport:
    """Check the leakage discipline of a session transcript.

    Rules: (a) any payload the key-holding party B could decrypt must carry
    the masked flag, except the final output exchange; (b) symmetrically,
    anything A can read coming back from B must be masked, and the
    permutation must never travel; control messages (session setup, abort)
    carry only public shape parameters and are exempt.  Message counts and
    sizes are exposed via ``shape`` so same-shape runs can be compared.
    """
    violations = []
    for m in transcript.messages:
        if m.kind == "permutation":
            violations.append(
                AuditViolation(m.seq, m.step, m.kind, "permutation must never be sent")
            )
            continue
        if m.kind in CONTROL_KINDS or m.kind in FINAL_KINDS:
            continue
        if m.sender == "A" and m.key_owner in ("B", "none") and not m.masked:
            violations.append(
                AuditViolation(
                    m.seq, m.step, m.kind,
                    "party B can read this payload but it is not masked",
                )
            )
        if m.sender == "B" and m.key_owner in ("A", "none") and not m.masked:
            violations.append(
                AuditViolation(
                    m.seq, m.step, m.kind,
                    "party A can read this payload but it is not masked",
                )
            )
    return AuditReport(
        ok=not violations,
        violations=tuple(violations),
        message_count=len(transcript.messages),
        shape=transcript.shape_signature(),
    )

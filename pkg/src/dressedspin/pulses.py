"""Pulse sequences: text DSL, programmatic builders and the segment compiler.

Timeline arithmetic is exact: all instants and durations are
``fractions.Fraction`` values in nanoseconds, so segment boundaries align
bit-for-bit and compiled segment durations sum to the sequence duration
exactly.  Durations in the DSL accept decimal ("62.5ns", "0.35us") and
rational ("125/2ns") literals, both parsed exactly.

Grammar (line oriented, # starts a comment):

    channel NAME target TARGET carrier FREQ (tone FREQ AMP PHASE)*
    pulse CHANNEL (pi/2 | pi | 3pi/2 | <float>rad | hold DUR) amp AMP phase PHASE [at TIME]
    init DUR [at TIME]
    wait DUR
    readout OBS

    TARGET := NV | P1-line-1 .. P1-line-5 | all-P1-lines
    FREQ   := <number>MHz | <number>GHz
    AMP    := <number>MHz
    PHASE  := X | Y | -X | -Y | <float>rad
    DUR    := <number>ns | <number>us      (<number> may be "p/q")
    OBS    := (p0|sx|sy|sz)[:SITE]         (SITE defaults to NV)

Statements execute against a cursor: ``pulse`` and ``init`` start at the
cursor and advance it by their duration unless placed with ``at``;
``wait`` advances the cursor; ``readout`` closes the sequence at the
cursor.  Pulses on different channels may overlap; pulses on one channel
may not.

Rotation convention (fixed by tests): phases map to X=0, Y=pi/2, -X=pi,
-Y=3pi/2, the rotating-frame drive term is Omega*(cos(phi)*Sx +
sin(phi)*Sy), and propagation uses U = exp(-i 2 pi H t).  A pi/2 pulse at
phase X therefore takes +Z to -Y (the standard right-hand rotation
generated by +Sx); sequences built here are insensitive to that overall
sense because the readout pulses unwind it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .core import Operator
from .models import Drive, FrameSpec, SpinSystem, secular_rotating_hamiltonian

OPTICAL_CHANNEL = "__optical__"

_PHASE_TOKENS = {
    "X": 0.0,
    "Y": math.pi / 2,
    "-X": math.pi,
    "-Y": 3 * math.pi / 2,
}
_ANGLE_TOKENS = {
    "pi/2": Fraction(1, 2),
    "pi": Fraction(1, 1),
    "3pi/2": Fraction(3, 2),
}

_TARGETS = ("NV", "all-P1-lines") + tuple(f"P1-line-{k}" for k in range(1, 6))
_OBS_KINDS = ("p0", "sx", "sy", "sz")


class ParseError(ValueError):
    """Syntax error with source position."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column
        self.reason = message


class SemanticError(ValueError):
    """Structurally valid program that violates sequence rules."""


class CompileError(ValueError):
    """Sequence cannot be lowered to piecewise-constant segments."""


# ---------------------------------------------------------------------------
# Sequence data model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Tone:
    offset_mhz: float
    amp_mhz: float
    phase_rad: float


@dataclass(frozen=True)
class Channel:
    name: str
    target: str
    carrier_mhz: float
    tones: tuple[Tone, ...] = ()

    def __post_init__(self):
        if self.target not in _TARGETS:
            raise SemanticError(f"channel {self.name!r}: unknown target {self.target!r}")
        if any(t.amp_mhz < 0 for t in self.tones):
            raise SemanticError(f"channel {self.name!r}: tone amplitude < 0")
        if self.target == "NV" and self.tones:
            raise SemanticError(
                f"channel {self.name!r}: an NV channel addresses exactly one "
                "transition and may not declare extra tones"
            )


@dataclass(frozen=True)
class Pulse:
    """One timed entry on a channel.

    ``kind`` is "rotation" (duration derived from the angle), "hold"
    (explicit duration) or "optical-reset".  ``angle_over_pi`` keeps
    symbolic angles exact for canonical printing.
    """

    channel: str
    start_ns: Fraction
    duration_ns: Fraction
    amp_mhz: float = 0.0
    phase_rad: float = 0.0
    kind: str = "hold"
    angle_over_pi: Fraction | None = None
    angle_rad: float | None = None
    phase_token: str | None = None

    @property
    def end_ns(self) -> Fraction:
        return self.start_ns + self.duration_ns


@dataclass(frozen=True)
class Readout:
    kind: str = "p0"
    site: str = "NV"


@dataclass(frozen=True)
class PulseSequence:
    channels: tuple[Channel, ...]
    pulses: tuple[Pulse, ...]
    readout: Readout
    total_ns: Fraction

    def channel(self, name: str) -> Channel:
        for ch in self.channels:
            if ch.name == name:
                return ch
        raise KeyError(f"unknown channel {name!r}")

    @property
    def duration_us(self) -> float:
        return float(self.total_ns) / 1e3


def rotation_duration_ns(angle_over_pi: Fraction, amp_mhz: float) -> Fraction:
    """Exact duration of a rotation: angle = 2 pi * amp * t.

    With the angle given in units of pi and the amplitude in MHz the pi
    factors cancel: t_ns = 1000 * (angle/pi) / (2 * amp).
    """
    if amp_mhz <= 0:
        raise SemanticError("rotation pulses need amp > 0")
    return Fraction(1000) * angle_over_pi / (2 * Fraction(amp_mhz))


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _fraction(text: str, line: int, col: int, what: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise ParseError(f"bad {what} literal {text!r}", line, col) from None


def _number_with_unit(tok: str, units: dict[str, Fraction | float], line: int, col: int,
                      what: str) -> tuple[Fraction, str]:
    for unit in sorted(units, key=len, reverse=True):
        if tok.endswith(unit):
            return _fraction(tok[: -len(unit)], line, col, what), unit
    expected = "|".join(sorted(units))
    raise ParseError(f"expected {what} with unit {expected}, got {tok!r}", line, col)


def _parse_duration_ns(tok: str, line: int, col: int) -> Fraction:
    value, unit = _number_with_unit(tok, {"ns": 1, "us": 1000}, line, col, "duration")
    return value * (1000 if unit == "us" else 1)


def _parse_freq_mhz(tok: str, line: int, col: int) -> float:
    value, unit = _number_with_unit(tok, {"MHz": 1, "GHz": 1000}, line, col, "frequency")
    return float(value) * (1000.0 if unit == "GHz" else 1.0)


def _parse_amp_mhz(tok: str, line: int, col: int) -> float:
    value, _ = _number_with_unit(tok, {"MHz": 1}, line, col, "amplitude")
    amp = float(value)
    if amp < 0:
        raise ParseError(f"amplitude must be >= 0, got {amp}", line, col)
    return amp


def _parse_phase(tok: str, line: int, col: int) -> tuple[float, str | None]:
    if tok in _PHASE_TOKENS:
        return _PHASE_TOKENS[tok], tok
    if tok.endswith("rad"):
        return float(_fraction(tok[:-3], line, col, "phase")), None
    raise ParseError(f"expected phase X|Y|-X|-Y|<float>rad, got {tok!r}", line, col)


class _Tokens:
    """A statement's tokens with source positions, consumed left to right."""

    def __init__(self, words: list[tuple[str, int]], line: int):
        self.words = words
        self.line = line
        self.pos = 0

    def peek(self) -> str | None:
        return self.words[self.pos][0] if self.pos < len(self.words) else None

    def take(self, what: str) -> tuple[str, int]:
        if self.pos >= len(self.words):
            col = self.words[-1][1] + len(self.words[-1][0]) if self.words else 1
            raise ParseError(f"expected {what} at end of line", self.line, col)
        tok, col = self.words[self.pos]
        self.pos += 1
        return tok, col

    def expect(self, keyword: str):
        tok, col = self.take(f"keyword {keyword!r}")
        if tok != keyword:
            raise ParseError(f"expected keyword {keyword!r}, got {tok!r}", self.line, col)

    def done(self):
        if self.pos < len(self.words):
            tok, col = self.words[self.pos]
            raise ParseError(f"unexpected trailing token {tok!r}", self.line, col)


def parse_sequence(text: str | bytes) -> PulseSequence:
    """Parse DSL text into a validated :class:`PulseSequence`.

    Raises :class:`ParseError` (with line/column) on syntax problems and
    :class:`SemanticError` on rule violations; never anything else.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not valid UTF-8: {exc.reason}", 1, 1) from None

    channels: list[Channel] = []
    pulses: list[Pulse] = []
    readout: Readout | None = None
    cursor = Fraction(0)
    pulse_no = 0

    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        words: list[tuple[str, int]] = []
        col = 1
        for piece in body.split(" "):
            stripped = piece.strip("\t\r\f\v")
            if stripped:
                words.append((stripped, col))
            col += len(piece) + 1
        if not words:
            continue
        if readout is not None:
            raise SemanticError(
                f"line {lineno}: statement after readout (readout must be last)"
            )
        toks = _Tokens(words, lineno)
        head, head_col = toks.take("statement keyword")

        if head == "channel":
            name, _ = toks.take("channel name")
            if any(c.name == name for c in channels):
                raise SemanticError(f"line {lineno}: duplicate channel {name!r}")
            toks.expect("target")
            target, tcol = toks.take("target")
            if target not in _TARGETS:
                raise ParseError(
                    f"expected target NV|P1-line-1..5|all-P1-lines, got {target!r}",
                    lineno, tcol,
                )
            toks.expect("carrier")
            ftok, fcol = toks.take("carrier frequency")
            carrier = _parse_freq_mhz(ftok, lineno, fcol)
            tones = []
            while toks.peek() == "tone":
                toks.expect("tone")
                otok, ocol = toks.take("tone offset")
                offset = _parse_freq_mhz(otok, lineno, ocol)
                atok, acol = toks.take("tone amplitude")
                amp = _parse_amp_mhz(atok, lineno, acol)
                ptok, pcol = toks.take("tone phase")
                phase, _ = _parse_phase(ptok, lineno, pcol)
                tones.append(Tone(offset, amp, phase))
            toks.done()
            channels.append(Channel(name, target, carrier, tuple(tones)))

        elif head == "pulse":
            name, ncol = toks.take("channel name")
            if not any(c.name == name for c in channels):
                raise SemanticError(f"line {lineno}: pulse on unknown channel {name!r}")
            spec_tok, scol = toks.take("angle or 'hold'")
            angle_over_pi = None
            angle_rad = None
            if spec_tok == "hold":
                dtok, dcol = toks.take("hold duration")
                duration = _parse_duration_ns(dtok, lineno, dcol)
                kind = "hold"
            elif spec_tok in _ANGLE_TOKENS:
                angle_over_pi = _ANGLE_TOKENS[spec_tok]
                duration = None
                kind = "rotation"
            elif spec_tok.endswith("rad"):
                angle_rad = float(_fraction(spec_tok[:-3], lineno, scol, "angle"))
                if angle_rad <= 0:
                    raise ParseError("rotation angle must be > 0", lineno, scol)
                duration = None
                kind = "rotation"
            else:
                raise ParseError(
                    f"expected pi/2|pi|3pi/2|<float>rad|hold, got {spec_tok!r}",
                    lineno, scol,
                )
            toks.expect("amp")
            atok, acol = toks.take("amplitude")
            amp = _parse_amp_mhz(atok, lineno, acol)
            toks.expect("phase")
            ptok, pcol = toks.take("phase")
            phase, phase_token = _parse_phase(ptok, lineno, pcol)
            start = None
            if toks.peek() == "at":
                toks.expect("at")
                ttok, tcol = toks.take("start time")
                start = _parse_duration_ns(ttok, lineno, tcol)
            toks.done()

            if duration is None:
                if angle_over_pi is not None:
                    duration = rotation_duration_ns(angle_over_pi, amp)
                else:
                    if amp <= 0:
                        raise SemanticError(
                            f"line {lineno}: rotation pulses need amp > 0"
                        )
                    duration = Fraction(1000.0 * angle_rad / (2 * math.pi * amp))
            if duration <= 0:
                raise SemanticError(f"line {lineno}: pulse duration must be > 0")
            pulse_no += 1
            placed = start if start is not None else cursor
            if placed < 0:
                raise SemanticError(f"line {lineno}: pulse starts before t=0")
            pulses.append(
                Pulse(
                    channel=name,
                    start_ns=placed,
                    duration_ns=duration,
                    amp_mhz=amp,
                    phase_rad=phase,
                    kind=kind,
                    angle_over_pi=angle_over_pi,
                    angle_rad=angle_rad,
                    phase_token=phase_token,
                )
            )
            if start is None:
                cursor += duration

        elif head == "init":
            dtok, dcol = toks.take("reset duration")
            duration = _parse_duration_ns(dtok, lineno, dcol)
            if duration <= 0:
                raise SemanticError(f"line {lineno}: reset duration must be > 0")
            start = None
            if toks.peek() == "at":
                toks.expect("at")
                ttok, tcol = toks.take("start time")
                start = _parse_duration_ns(ttok, lineno, tcol)
            toks.done()
            placed = start if start is not None else cursor
            if placed < 0:
                raise SemanticError(f"line {lineno}: reset starts before t=0")
            pulses.append(
                Pulse(channel=OPTICAL_CHANNEL, start_ns=placed, duration_ns=duration,
                      kind="optical-reset")
            )
            if start is None:
                cursor += duration

        elif head == "wait":
            dtok, dcol = toks.take("wait duration")
            duration = _parse_duration_ns(dtok, lineno, dcol)
            if duration < 0:
                raise SemanticError(f"line {lineno}: wait duration must be >= 0")
            toks.done()
            cursor += duration

        elif head == "readout":
            otok, ocol = toks.take("observable")
            kind, _, site = otok.partition(":")
            if kind not in _OBS_KINDS:
                raise ParseError(
                    f"expected observable p0|sx|sy|sz[:site], got {otok!r}", lineno, ocol
                )
            readout = Readout(kind=kind, site=site or "NV")
            toks.done()

        else:
            raise ParseError(
                f"expected channel|pulse|init|wait|readout, got {head!r}",
                lineno, head_col,
            )

    if readout is None:
        raise SemanticError("no readout statement (every program must end with one)")
    return assemble_sequence(channels, pulses, readout, total_ns=cursor)


def assemble_sequence(channels, pulses, readout: Readout,
                      total_ns: Fraction | None = None) -> PulseSequence:
    """Sort, validate and freeze a sequence built by the parser or by code."""
    pulses = sorted(pulses, key=lambda p: (p.start_ns, p.channel))
    last_end = max((p.end_ns for p in pulses), default=Fraction(0))
    if total_ns is None:
        total_ns = last_end
    if last_end > total_ns:
        raise SemanticError(
            f"a pulse ends at {float(last_end):g} ns, after the readout at "
            f"{float(total_ns):g} ns (readout must come last)"
        )
    by_channel: dict[str, list[Pulse]] = {}
    for p in pulses:
        by_channel.setdefault(p.channel, []).append(p)
    for name, plist in by_channel.items():
        for a, b in zip(plist, plist[1:]):
            if b.start_ns < a.end_ns:
                raise SemanticError(
                    f"overlapping pulses on channel {name!r}: "
                    f"[{float(a.start_ns):g}, {float(a.end_ns):g}) ns and "
                    f"[{float(b.start_ns):g}, {float(b.end_ns):g}) ns"
                )
    for p in pulses:
        if p.kind == "optical-reset":
            for q in pulses:
                if q is p or q.kind == "optical-reset":
                    continue
                if q.start_ns < p.end_ns and p.start_ns < q.end_ns:
                    raise SemanticError(
                        "optical reset window overlaps a drive pulse on "
                        f"channel {q.channel!r}"
                    )
    return PulseSequence(tuple(channels), tuple(pulses), readout, total_ns)


# ---------------------------------------------------------------------------
# Canonical printing (round-trips through the parser)
# ---------------------------------------------------------------------------

def _format_ns(value: Fraction) -> str:
    return f"{value}ns"


def _format_phase(pulse_phase: float, token: str | None) -> str:
    if token is not None:
        return token
    return f"{float(pulse_phase)!r}rad"


def _format_angle(p: Pulse) -> str:
    if p.angle_over_pi is not None:
        for tok, frac in _ANGLE_TOKENS.items():
            if frac == p.angle_over_pi:
                return tok
        return f"{float(p.angle_over_pi) * math.pi!r}rad"
    return f"{p.angle_rad!r}rad"


def format_sequence(seq: PulseSequence) -> str:
    """Canonical text form; ``parse_sequence(format_sequence(s)) == s``."""
    lines = []
    for ch in seq.channels:
        parts = [f"channel {ch.name} target {ch.target} carrier {float(ch.carrier_mhz)!r}MHz"]
        for t in ch.tones:
            parts.append(
                f"tone {float(t.offset_mhz)!r}MHz {float(t.amp_mhz)!r}MHz "
                f"{float(t.phase_rad)!r}rad"
            )
        lines.append(" ".join(parts))
    for p in seq.pulses:
        if p.kind == "optical-reset":
            lines.append(f"init {_format_ns(p.duration_ns)} at {_format_ns(p.start_ns)}")
        elif p.kind == "rotation":
            lines.append(
                f"pulse {p.channel} {_format_angle(p)} amp {float(p.amp_mhz)!r}MHz "
                f"phase {_format_phase(p.phase_rad, p.phase_token)} at {_format_ns(p.start_ns)}"
            )
        else:
            lines.append(
                f"pulse {p.channel} hold {_format_ns(p.duration_ns)} amp {float(p.amp_mhz)!r}MHz "
                f"phase {_format_phase(p.phase_rad, p.phase_token)} at {_format_ns(p.start_ns)}"
            )
    # all pulses are placed with explicit "at", so the cursor stays at zero;
    # one trailing wait pins the readout instant exactly
    lines.append(f"wait {_format_ns(seq.total_ns)}")
    lines.append(f"readout {seq.readout.kind}:{seq.readout.site}")
    return "\n".join(lines) + "\n"

# ---------------------------------------------------------------------------
# Programmatic builders
# ---------------------------------------------------------------------------

def _us_frac(value_us: float | Fraction) -> Fraction:
    return Fraction(value_us) * 1000


def nv_channel(carrier_mhz: float, name: str = "MW") -> Channel:
    return Channel(name, "NV", carrier_mhz)


def rf_channel(carrier_mhz: float, tones: list[tuple[float, float, float]] | None = None,
               name: str = "RF") -> Channel:
    """RF channel addressing the whole P1 bath.

    ``tones`` is a list of (offset_mhz, amp_mhz, phase_rad); omit it for a
    single-frequency source gated by the pulse amplitude.
    """
    tone_objs = tuple(Tone(*t) for t in (tones or ()))
    return Channel(name, "all-P1-lines", carrier_mhz, tone_objs)


def five_tone_rf_channel(center_mhz: float, on_axis_mhz: float, off_axis_mhz: float,
                         amp_mhz: float, phase_rad: float = math.pi / 2,
                         name: str = "RF") -> Channel:
    """One tone per P1 hyperfine line, all at the same Rabi amplitude."""
    offsets = (-on_axis_mhz, -off_axis_mhz, 0.0, off_axis_mhz, on_axis_mhz)
    return rf_channel(center_mhz, [(o, amp_mhz, phase_rad) for o in offsets], name)


def _rotation(channel: str, start: Fraction, angle_over_pi: Fraction, amp: float,
              phase_token: str) -> Pulse:
    return Pulse(
        channel=channel,
        start_ns=start,
        duration_ns=rotation_duration_ns(angle_over_pi, amp),
        amp_mhz=amp,
        phase_rad=_PHASE_TOKENS[phase_token],
        kind="rotation",
        angle_over_pi=angle_over_pi,
        phase_token=phase_token,
    )


def build_spin_lock(omega_nv_mhz: float, lock_us: float, nv_carrier_mhz: float,
                    rf: Channel | None = None, rf_amp_mhz: float = 1.0,
                    pump_us: float = 2.0, readout: Readout = Readout()) -> PulseSequence:
    """Spin-lock sequence: optical reset, pi/2|X, lock|Y, 3pi/2|X, readout.

    When ``rf`` is given, an RF hold pulse spans exactly the lock window;
    for a tone-carrying channel ``rf_amp_mhz`` is a multiplier (leave at 1),
    for a bare channel it is the drive amplitude itself.
    """
    if lock_us < 0:
        raise SemanticError("lock duration must be >= 0")
    mw = nv_channel(nv_carrier_mhz)
    channels = [mw] + ([rf] if rf is not None else [])
    pulses: list[Pulse] = []
    t = Fraction(0)
    if pump_us > 0:
        pump = _us_frac(pump_us)
        pulses.append(Pulse(OPTICAL_CHANNEL, t, pump, kind="optical-reset"))
        t += pump
    pulses.append(_rotation(mw.name, t, Fraction(1, 2), omega_nv_mhz, "X"))
    t += pulses[-1].duration_ns
    if lock_us > 0:
        lock = _us_frac(lock_us)
        pulses.append(
            Pulse(mw.name, t, lock, omega_nv_mhz, _PHASE_TOKENS["Y"], "hold",
                  phase_token="Y")
        )
        if rf is not None:
            pulses.append(
                Pulse(rf.name, t, lock, rf_amp_mhz, 0.0, "hold", phase_token="X")
            )
        t += lock
    pulses.append(_rotation(mw.name, t, Fraction(3, 2), omega_nv_mhz, "X"))
    t += pulses[-1].duration_ns
    return assemble_sequence(channels, pulses, readout, total_ns=t)


def build_hahn_deer(omega_nv_mhz: float, tau_ns: float, nv_carrier_mhz: float,
                    rf_carrier_mhz: float | None = None, rf_amp_mhz: float = 0.0,
                    rf_width_ns: float = 0.0, pump_us: float = 0.0,
                    readout: Readout = Readout()) -> PulseSequence:
    """NV Hahn echo with an optional recoupling RF pulse on the bath.

    The echo is pi/2|X - tau - pi|X - tau - pi/2|X with tau measured edge
    to edge; the RF pulse is centered on the NV pi pulse.
    """
    mw = nv_channel(nv_carrier_mhz)
    channels = [mw]
    pulses: list[Pulse] = []
    t = Fraction(0)
    if pump_us > 0:
        pump = _us_frac(pump_us)
        pulses.append(Pulse(OPTICAL_CHANNEL, t, pump, kind="optical-reset"))
        t += pump
    tau = Fraction(tau_ns)
    pulses.append(_rotation(mw.name, t, Fraction(1, 2), omega_nv_mhz, "X"))
    t += pulses[-1].duration_ns
    pi_start = t + tau
    pulses.append(_rotation(mw.name, pi_start, Fraction(1, 1), omega_nv_mhz, "X"))
    pi_dur = pulses[-1].duration_ns
    if rf_carrier_mhz is not None and rf_width_ns > 0:
        rf = rf_channel(rf_carrier_mhz)
        channels.append(rf)
        width = Fraction(rf_width_ns)
        rf_start = pi_start + pi_dur / 2 - width / 2
        if rf_start < 0:
            raise SemanticError("RF pulse extends before t=0")
        pulses.append(Pulse(rf.name, rf_start, width, rf_amp_mhz, 0.0, "hold",
                            phase_token="X"))
    t = pi_start + pi_dur + tau
    pulses.append(_rotation(mw.name, t, Fraction(1, 2), omega_nv_mhz, "X"))
    t += pulses[-1].duration_ns
    rf_end = max((p.end_ns for p in pulses), default=t)
    return assemble_sequence(channels, pulses, readout, total_ns=max(t, rf_end))


# ---------------------------------------------------------------------------
# Compilation to piecewise-constant segments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompiledSegment:
    duration_ns: Fraction
    hamiltonian: Operator
    active: tuple[str, ...] = ()

    @property
    def duration_us(self) -> float:
        return float(self.duration_ns) / 1e3


@dataclass(frozen=True)
class ResetMarker:
    """Instantaneous ideal re-initialization of one site's reduced state."""

    site: str = "NV"


@dataclass(frozen=True)
class CompiledProgram:
    system: SpinSystem
    frames: FrameSpec
    entries: tuple
    readout: Readout
    total_ns: Fraction

    @property
    def segments(self) -> tuple[CompiledSegment, ...]:
        return tuple(e for e in self.entries if isinstance(e, CompiledSegment))


def _line_offsets(system: SpinSystem) -> tuple[float, ...]:
    if not system.sites:
        return ()
    p = system.sites[0].params
    return tuple(sorted({-p.hyperfine_on_axis_mhz, -p.hyperfine_off_axis_mhz, 0.0,
                         p.hyperfine_off_axis_mhz, p.hyperfine_on_axis_mhz}))


def _effective_tones(p: Pulse, ch: Channel) -> list[tuple[float, float, float]]:
    if ch.tones:
        return [(ch.carrier_mhz + t.offset_mhz, t.amp_mhz * p.amp_mhz,
                 t.phase_rad + p.phase_rad) for t in ch.tones]
    return [(ch.carrier_mhz, p.amp_mhz, p.phase_rad)]


def _target_sites(ch: Channel, system: SpinSystem) -> list[str]:
    if ch.target == "NV":
        return ["NV"]
    labels = list(system.p1_labels)
    if ch.target == "all-P1-lines":
        return labels
    k = int(ch.target.rsplit("-", 1)[1])
    offsets = _line_offsets(system)
    if k > len(offsets):
        return []
    wanted = offsets[k - 1]
    return [lab for lab in labels
            if abs(system.line_offset_mhz(lab) - wanted) < 1e-9]


def _pulse_site_drives(p: Pulse, ch: Channel, system: SpinSystem):
    """Assign each targeted site the nearest tone of this pulse.

    Cross-tone terms (a site seeing the other, far-detuned tones of a
    multi-tone source) are dropped under the rotating-wave approximation;
    the bundled sources keep tone spacings at the hyperfine scale, far
    above the Rabi amplitudes.
    """
    tones = _effective_tones(p, ch)
    out = []
    for site in _target_sites(ch, system):
        f_site = system.transition_mhz(site)
        freq, amp, phase = min(tones, key=lambda t: abs(t[0] - f_site))
        out.append((site, freq, amp, phase))
    return out


def derive_frames(seq: PulseSequence, system: SpinSystem) -> FrameSpec:
    """Rotating-frame frequencies implied by the sequence's drive tones.

    Every site that is driven anywhere in the sequence gets the frequency
    of its assigned tone as its frame for the whole run; a site addressed
    at two different frequencies cannot be compiled statically.
    """
    freqs: dict[str, float] = {}
    for p in seq.pulses:
        if p.kind == "optical-reset":
            continue
        ch = seq.channel(p.channel)
        for site, freq, _amp, _phase in _pulse_site_drives(p, ch, system):
            prev = freqs.get(site)
            if prev is not None and abs(prev - freq) > 1e-9:
                raise CompileError(
                    f"site {site} is driven at {prev:g} and {freq:g} MHz; a "
                    "static rotating frame needs one carrier per site"
                )
            freqs[site] = freq
    return FrameSpec(frequencies_mhz=freqs, rwa=True)


def compile_sequence(seq: PulseSequence, system: SpinSystem,
                     frames: FrameSpec | None = None) -> CompiledProgram:
    """Cut the timeline at every pulse edge and build one Hamiltonian each.

    Optical resets compile to a drive-free segment spanning the pump window
    followed by a reset marker.  Segment durations are exact rationals and
    sum to the sequence duration exactly.
    """
    if frames is None:
        frames = derive_frames(seq, system)
    else:
        derived = derive_frames(seq, system)
        for site, freq in derived.frequencies_mhz.items():
            have = frames.frequencies_mhz.get(site)
            if have is None:
                raise CompileError(f"no rotating frame supplied for driven site {site}")
            if abs(have - freq) > 1e-9:
                raise CompileError(
                    f"frame for {site} is {have:g} MHz but its drive tone sits "
                    f"at {freq:g} MHz"
                )

    edges = {Fraction(0), seq.total_ns}
    for p in seq.pulses:
        edges.add(p.start_ns)
        edges.add(p.end_ns)
    cuts = sorted(e for e in edges if 0 <= e <= seq.total_ns)

    entries: list = []
    for a, b in zip(cuts, cuts[1:]):
        if b <= a:
            continue
        active = [p for p in seq.pulses if p.start_ns <= a and p.end_ns >= b]
        resets = [p for p in active if p.kind == "optical-reset"]
        duration = b - a
        if resets:
            # the reset window itself evolves drive-free (bath keeps running)
            h = secular_rotating_hamiltonian(system, frames, [])
            entries.append(CompiledSegment(duration, h, ("optical-reset",)))
            entries.append(ResetMarker("NV"))
            continue
        drives: dict[str, Drive] = {}
        labels = []
        for p in active:
            ch = seq.channel(p.channel)
            labels.append(f"{p.channel}@{float(p.start_ns):g}ns")
            for site, freq, amp, phase in _pulse_site_drives(p, ch, system):
                if site in drives:
                    raise CompileError(
                        f"two simultaneous drives on site {site} at "
                        f"t = [{float(a):g}, {float(b):g}) ns"
                    )
                detuning = freq - system.transition_mhz(site)
                drives[site] = Drive(site, amp, phase, detuning)
        h = secular_rotating_hamiltonian(system, frames, list(drives.values()))
        entries.append(CompiledSegment(duration, h, tuple(labels)))

    total = sum((e.duration_ns for e in entries if isinstance(e, CompiledSegment)),
                Fraction(0))
    if total != seq.total_ns:
        raise CompileError(
            f"segment durations sum to {total} ns, expected {seq.total_ns} ns"
        )
    return CompiledProgram(system, frames, tuple(entries), seq.readout, seq.total_ns)


def export_segments_json(program: CompiledProgram) -> list[dict]:
    """Compiled segments as JSON-ready dicts (row-major re/im pairs)."""
    out = []
    for e in program.entries:
        if isinstance(e, ResetMarker):
            out.append({"kind": "reset", "site": e.site})
            continue
        m = e.hamiltonian.matrix
        out.append(
            {
                "kind": "segment",
                "duration_ns": float(e.duration_ns),
                "duration_ns_exact": str(e.duration_ns),
                "active": list(e.active),
                "dim": m.shape[0],
                "hamiltonian": [[float(z.real), float(z.imag)] for z in m.ravel()],
            }
        )
    return out

"""15-bit genome <-> fusion-network configuration codec.

Bit layout (locus ranges are inclusive)::

    0-2    channel subset       000 Fp2-F4, 001 C4-A1, 010 F4-C4,
                                011 Fp2-F4 + C4-A1, 100 Fp2-F4 + F4-C4,
                                101 F4-C4 + C4-A1, 110/111 all three
    3-4    time steps           10, 15, 20, 25
    5      recurrent layers     1, 2
    6      recurrent kind       lstm, blstm
    7-8    hidden units         100, 200, 300, 400
    9-10   dropout              0, 0.05, 0.10, 0.15
    11-12  dense size           0, 200, 300, 400   (0 = no dense layers)
    13-14  dense activation     tanh, sigmoid, relu, selu
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

N_BITS = 15

CHANNEL_NAMES: tuple[str, ...] = ("Fp2-F4", "C4-A1", "F4-C4")

# Channel tuples are stored in CHANNEL_NAMES order so equal subsets compare equal.
CHANNEL_CODES: tuple[tuple[str, ...], ...] = (
    ("Fp2-F4",),
    ("C4-A1",),
    ("F4-C4",),
    ("Fp2-F4", "C4-A1"),
    ("Fp2-F4", "F4-C4"),
    ("C4-A1", "F4-C4"),
    ("Fp2-F4", "C4-A1", "F4-C4"),
    ("Fp2-F4", "C4-A1", "F4-C4"),
)
TIME_STEPS = (10, 15, 20, 25)
LSTM_LAYERS = (1, 2)
LSTM_KINDS = ("lstm", "blstm")
LSTM_SHAPES = (100, 200, 300, 400)
DROPOUTS = (0.0, 0.05, 0.10, 0.15)
DENSE_SIZES = (0, 200, 300, 400)
ACTIVATIONS = ("tanh", "sigmoid", "relu", "selu")

# (name, first locus, width, menu)
_FIELDS: tuple[tuple[str, int, int, tuple], ...] = (
    ("time_steps", 3, 2, TIME_STEPS),
    ("lstm_layers", 5, 1, LSTM_LAYERS),
    ("lstm_kind", 6, 1, LSTM_KINDS),
    ("lstm_shape", 7, 2, LSTM_SHAPES),
    ("dropout", 9, 2, DROPOUTS),
    ("dense_size", 11, 2, DENSE_SIZES),
    ("dense_activation", 13, 2, ACTIVATIONS),
)


class ConfigError(ValueError):
    """A configuration value is outside the encoding menus."""


@dataclass(frozen=True)
class Genome:
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if len(bits) != N_BITS:
            raise ValueError(f"genome must have {N_BITS} bits, got {len(bits)}")
        if any(b not in (0, 1) for b in bits):
            raise ValueError("genome bits must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_string(cls, text: str) -> "Genome":
        text = text.replace(" ", "")
        if any(ch not in "01" for ch in text):
            raise ValueError(f"invalid genome string {text!r}")
        return cls(tuple(int(ch) for ch in text))

    @classmethod
    def from_int(cls, value: int) -> "Genome":
        if not 0 <= value < 2**N_BITS:
            raise ValueError("genome integer out of range")
        return cls(tuple((value >> (N_BITS - 1 - k)) & 1 for k in range(N_BITS)))

    def to_int(self) -> int:
        out = 0
        for b in self.bits:
            out = (out << 1) | b
        return out

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple[str, ...]
    time_steps: int
    lstm_layers: int
    lstm_kind: str
    lstm_shape: int
    dropout: float
    dense_size: int
    dense_activation: str

    def __post_init__(self):
        chans = tuple(self.channels)
        if not chans or len(chans) > 3 or len(set(chans)) != len(chans):
            raise ConfigError(f"invalid channel set {chans!r}")
        unknown = [c for c in chans if c not in CHANNEL_NAMES]
        if unknown:
            raise ConfigError(f"unknown channels {unknown!r}")
        object.__setattr__(self, "channels", tuple(sorted(chans, key=CHANNEL_NAMES.index)))
        for name, _, _, menu in _FIELDS:
            if getattr(self, name) not in menu:
                raise ConfigError(f"{name}={getattr(self, name)!r} not in {menu}")

    @property
    def bidirectional(self) -> bool:
        return self.lstm_kind == "blstm"

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        keys = {f[0] for f in _FIELDS} | {"channels"}
        missing = keys - set(d)
        if missing:
            raise ConfigError(f"missing fields {sorted(missing)}")
        return cls(
            channels=tuple(d["channels"]),
            time_steps=int(d["time_steps"]),
            lstm_layers=int(d["lstm_layers"]),
            lstm_kind=str(d["lstm_kind"]),
            lstm_shape=int(d["lstm_shape"]),
            dropout=float(d["dropout"]),
            dense_size=int(d["dense_size"]),
            dense_activation=str(d["dense_activation"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))


def _read(bits: Sequence[int], start: int, width: int) -> int:
    v = 0
    for b in bits[start:start + width]:
        v = (v << 1) | b
    return v


def decode_genome(g: Genome) -> ModelConfig:
    """Decode a genome. Total: every 15-bit string maps to a valid config."""
    kw = {name: menu[_read(g.bits, start, width)] for name, start, width, menu in _FIELDS}
    return ModelConfig(channels=CHANNEL_CODES[_read(g.bits, 0, 3)], **kw)


def encode_config(c: ModelConfig) -> Genome:
    """Canonical inverse of :func:`decode_genome` (all three channels -> 110)."""
    bits: list[int] = []
    try:
        code = CHANNEL_CODES.index(tuple(c.channels))
    except ValueError:
        raise ConfigError(f"channel set {c.channels!r} has no code") from None
    bits += [(code >> k) & 1 for k in (2, 1, 0)]
    for name, _, width, menu in _FIELDS:
        value = getattr(c, name)
        if value not in menu:
            raise ConfigError(f"{name}={value!r} not in {menu}")
        idx = menu.index(value)
        bits += [(idx >> k) & 1 for k in reversed(range(width))]
    return Genome(tuple(bits))


def all_genomes() -> Iterable[Genome]:
    for v in range(2**N_BITS):
        yield Genome.from_int(v)


def enumerate_distinct_configs() -> list[ModelConfig]:
    """All semantically distinct configurations (7 channel sets x 4096)."""
    channel_sets = list(dict.fromkeys(CHANNEL_CODES))
    out = []
    for chans, rest in itertools.product(channel_sets, itertools.product(*(f[3] for f in _FIELDS))):
        kw = dict(zip((f[0] for f in _FIELDS), rest))
        out.append(ModelConfig(channels=chans, **kw))
    return out

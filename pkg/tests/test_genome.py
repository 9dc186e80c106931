import json

import pytest
from hypothesis import given, strategies as st

from fusionsearch.genome import (CHANNEL_NAMES, N_BITS, ConfigError, Genome, ModelConfig,
                                 all_genomes, decode_genome, encode_config,
                                 enumerate_distinct_configs)

genomes = st.integers(0, 2**N_BITS - 1).map(Genome.from_int)


def test_distinct_config_count():
    configs = enumerate_distinct_configs()
    assert len(configs) == 28672
    assert len(set(configs)) == 28672


def test_every_genome_decodes_and_reencodes():
    seen = set()
    for g in all_genomes():
        c = decode_genome(g)
        seen.add(c)
        back = encode_config(c)
        if g.bits[:3] == (1, 1, 1):
            # alias of 110: same config, canonical code differs only there
            assert back.bits == (1, 1, 0) + g.bits[3:]
        else:
            assert back == g
    assert len(seen) == 28672


def test_encode_decode_inverse_on_all_configs():
    for c in enumerate_distinct_configs():
        assert decode_genome(encode_config(c)) == c


@given(genomes)
def test_string_and_int_round_trip(g):
    assert Genome.from_string(str(g)) == g
    assert Genome.from_int(g.to_int()) == g
    assert len(str(g)) == N_BITS


@given(genomes)
def test_config_json_round_trip(g):
    c = decode_genome(g)
    assert ModelConfig.from_json(c.to_json()) == c
    assert json.loads(c.to_json())["channels"] == list(c.channels)


def test_ga_table_config_bits():
    c = ModelConfig(channels=CHANNEL_NAMES, time_steps=10, lstm_layers=1, lstm_kind="blstm",
                    lstm_shape=100, dropout=0.15, dense_size=300, dense_activation="sigmoid")
    assert str(encode_config(c)) == "110000100111001"


def test_aliases_decode_equal():
    a = Genome.from_string("110" + "0" * 12)
    b = Genome.from_string("111" + "0" * 12)
    assert decode_genome(a) == decode_genome(b)
    assert decode_genome(a).n_channels == 3


def test_channel_order_is_canonical():
    c = ModelConfig(channels=("F4-C4", "Fp2-F4"), time_steps=10, lstm_layers=1, lstm_kind="lstm",
                    lstm_shape=100, dropout=0.0, dense_size=0, dense_activation="tanh")
    assert c.channels == ("Fp2-F4", "F4-C4")


@pytest.mark.parametrize("field,value", [("time_steps", 12), ("lstm_shape", 150),
                                         ("dropout", 0.2), ("dense_activation", "gelu"),
                                         ("lstm_kind", "gru"), ("lstm_layers", 3)])
def test_off_menu_values_rejected(field, value):
    kw = dict(channels=CHANNEL_NAMES, time_steps=10, lstm_layers=1, lstm_kind="lstm",
              lstm_shape=100, dropout=0.0, dense_size=0, dense_activation="tanh")
    kw[field] = value
    with pytest.raises(ConfigError):
        encode_config(ModelConfig(**kw))


@pytest.mark.parametrize("text", ["0" * 14, "0" * 16, "01201" + "0" * 10])
def test_bad_genome_strings(text):
    with pytest.raises(ValueError):
        Genome.from_string(text)

"""
Tests for octave_codec settings.
"""

import pytest

from octave_codec.exceptions import ConfigError
from octave_codec.settings import DEFAULTS, parse_config_text


class TestSettings:
    """Tests for the lazy settings object."""

    def test_defaults(self, codec_settings_reset):
        assert codec_settings_reset.ALPHA == 0.5
        assert codec_settings_reset.TRAIN_RATES == (2, 4, 8)
        assert codec_settings_reset.RESIDUAL_QUALITIES == (32, 16, 12, 8, 4)
        assert codec_settings_reset.USE_GDN is True

    def test_invalid_setting(self, codec_settings_reset):
        with pytest.raises(AttributeError):
            _ = codec_settings_reset.NOT_A_SETTING

    def test_configure_coerces_strings(self, codec_settings_reset):
        codec_settings_reset.configure(widths="4, 8,8,8,4", use_gdn="off", learning_rate="1e-3", seed="7")
        assert codec_settings_reset.WIDTHS == (4, 8, 8, 8, 4)
        assert codec_settings_reset.USE_GDN is False
        assert codec_settings_reset.LEARNING_RATE == 1e-3
        assert codec_settings_reset.SEED == 7

    def test_configure_replaces_cached_value(self, codec_settings_reset):
        assert codec_settings_reset.SEED == 0
        codec_settings_reset.configure(SEED=3)
        assert codec_settings_reset.SEED == 3

    def test_configure_ignores_none(self, codec_settings_reset):
        codec_settings_reset.configure(SEED=None)
        assert codec_settings_reset.SEED == 0

    @pytest.mark.parametrize(
        "overrides",
        [{"SEED": "seven"}, {"USE_GDN": "maybe"}, {"BATCH_SIZE": 2.5}, {"NOPE": 1}],
    )
    def test_configure_rejects(self, codec_settings_reset, overrides):
        with pytest.raises(ConfigError):
            codec_settings_reset.configure(**overrides)

    def test_reload(self, codec_settings_reset):
        codec_settings_reset.configure(EPOCHS=3)
        assert codec_settings_reset.EPOCHS == 3
        codec_settings_reset.reload()
        assert codec_settings_reset.EPOCHS == 200
        assert codec_settings_reset.user_settings == {}

    def test_load_file_and_dump(self, codec_settings_reset, tmp_path):
        path = tmp_path / "codec.cfg"
        path.write_text("# tiny run\nwidths = 4,8,8,8,4\nMAP_CHANNELS = 4\n\nDETERMINISTIC_QUANT = yes\n")
        codec_settings_reset.load_file(path)
        assert codec_settings_reset.MAP_CHANNELS == 4
        assert codec_settings_reset.DETERMINISTIC_QUANT is True
        dumped = codec_settings_reset.dump()
        assert "WIDTHS = 4,8,8,8,4\n" in dumped
        assert "DETERMINISTIC_QUANT = true\n" in dumped
        assert parse_config_text(dumped) == {**DEFAULTS, **codec_settings_reset.user_settings}

    def test_missing_file(self, codec_settings_reset, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            codec_settings_reset.load_file(tmp_path / "absent.cfg")


class TestParseConfigText:
    """Tests for the KEY = value format."""

    def test_reports_line_number(self):
        with pytest.raises(ConfigError, match="cfg:2: expected KEY = value"):
            parse_config_text("SEED = 1\nSEED 2\n", "cfg")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="cfg:1: unknown setting BOGUS"):
            parse_config_text("BOGUS = 1", "cfg")

    def test_value_may_contain_equals(self):
        values = parse_config_text("RESIDUAL_ENCODE_COMMAND = enc -o={output} {input}")
        assert values == {"RESIDUAL_ENCODE_COMMAND": "enc -o={output} {input}"}

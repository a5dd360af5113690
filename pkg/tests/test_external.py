"""
Tests for running external coder commands.
"""

import subprocess

import pytest

from octave_codec.exceptions import BackendError, ConfigError
from octave_codec.external import build_command, run_command


class TestBuildCommand:
    """Tests for command templates."""

    def test_placeholders_are_substituted_per_token(self, tmp_path):
        argv = build_command("bpgenc -q {quality} -o '{output}' {input}", input=tmp_path / "a b.ppm", output="out.bpg", quality=30)
        assert argv == ["bpgenc", "-q", "30", "-o", "out.bpg", str(tmp_path / "a b.ppm")]

    def test_empty_template(self):
        with pytest.raises(ConfigError):
            build_command("  ", input="a", output="b", quality=1)

    def test_unknown_placeholder(self):
        with pytest.raises(ConfigError):
            build_command("enc {level}", input="a", output="b", quality=1)


class TestRunCommand:
    """Tests for process execution and failure reporting."""

    def test_success_with_output(self, tmp_path):
        src = tmp_path / "in.txt"
        src.write_text("x")
        run_command("cp {input} {output}", input=src, output=tmp_path / "out.txt", quality=0)
        assert (tmp_path / "out.txt").read_text() == "x"

    def test_missing_executable(self, tmp_path):
        with pytest.raises(BackendError, match="could not run"):
            run_command("no-such-coder-xyz {input}", input=tmp_path / "a", output=tmp_path / "b", quality=0)

    def test_nonzero_exit_keeps_stderr(self, mocker, tmp_path):
        mocker.patch(
            "octave_codec.external.subprocess.run",
            return_value=subprocess.CompletedProcess(["enc"], 1, b"", b"bad header"),
        )
        with pytest.raises(BackendError) as excinfo:
            run_command("enc {input} {output}", input="a", output=tmp_path / "b", quality=0)
        assert excinfo.value.diagnostics == "bad header"

    def test_missing_output_file(self, mocker, tmp_path):
        mocker.patch(
            "octave_codec.external.subprocess.run",
            return_value=subprocess.CompletedProcess(["enc"], 0, b"", b""),
        )
        with pytest.raises(BackendError, match="no output file"):
            run_command("enc {input} {output}", input="a", output=tmp_path / "b", quality=0)

    def test_timeout(self, mocker, tmp_path):
        mocker.patch(
            "octave_codec.external.subprocess.run",
            side_effect=subprocess.TimeoutExpired(["enc"], 1.0),
        )
        with pytest.raises(BackendError):
            run_command("enc {input}", timeout=1.0, input="a", output=tmp_path / "b", quality=0)

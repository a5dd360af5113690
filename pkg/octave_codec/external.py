"""
Runs user-configured external coders.

A command template is split like a shell line and each token is formatted
with the placeholders {input}, {output} and {quality}. Nothing is passed
through a shell.
"""

import logging
import shlex
import subprocess
from pathlib import Path
from typing import Union

from octave_codec.exceptions import BackendError, ConfigError

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 300.0


def build_command(template: str, **placeholders: Union[str, int, Path]) -> list[str]:
    if not template.strip():
        raise ConfigError("external backend selected but no command template is configured")
    try:
        return [token.format(**{k: str(v) for k, v in placeholders.items()}) for token in shlex.split(template)]
    except (KeyError, IndexError, ValueError) as e:
        raise ConfigError(f"bad command template {template!r}: {e}") from e


def run_command(template: str, timeout: float = DEFAULT_TIMEOUT, **placeholders: Union[str, int, Path]) -> None:
    """Run one templated command; any failure becomes a BackendError carrying stderr."""
    argv = build_command(template, **placeholders)
    logger.debug(f"Running external coder: {argv}")
    try:
        completed = subprocess.run(argv, capture_output=True, timeout=timeout, check=False)
    except (OSError, subprocess.TimeoutExpired) as e:
        raise BackendError(f"external coder {argv[0]!r} could not run: {e}") from e
    if completed.returncode != 0:
        diagnostics = completed.stderr.decode("utf-8", errors="replace")
        raise BackendError(f"external coder {argv[0]!r} exited with {completed.returncode}", diagnostics)
    output = placeholders.get("output")
    if output is not None and not Path(output).is_file():
        raise BackendError(f"external coder {argv[0]!r} produced no output file {output}")

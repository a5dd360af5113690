"""
Settings for octave_codec.

Settings are loaded from a flat `KEY = value` file (see `load_file`) and
command-line overrides. Anything not given falls back to DEFAULTS.
"""

from pathlib import Path
from typing import Any, Union

from octave_codec.exceptions import ConfigError

DEFAULTS: dict[str, Any] = {
    # Fraction of every layer's channels assigned to the low-resolution branch
    "ALPHA": 0.5,
    # Stage widths of the encoder/decoder; the last entry is the code-map channel count
    "WIDTHS": (16, 32, 64, 128, 8),
    # Must agree with the last WIDTHS entry (4 or 8 in the ablations)
    "MAP_CHANNELS": 8,
    # Kernel size of the first and last stage (reflection padded)
    "KERNEL_OUTER": 7,
    # Kernel size of the stride-2 stages and residual blocks
    "KERNEL_INNER": 3,
    # GDN/IGDN normalization; false selects instance norm + ReLU with tanh heads
    "USE_GDN": True,
    # GoRes/GoTRes blocks
    "USE_RES": True,
    # Bit depths the single model is trained for
    "TRAIN_RATES": (2, 4, 8),
    "EPOCHS": 200,
    "BATCH_SIZE": 16,
    "LEARNING_RATE": 2e-5,
    "SEED": 0,
    # Run length in optimizer steps; 0 means EPOCHS full passes
    "MAX_STEPS": 0,
    # Training resolution (square); a multiple of 16, at least 64
    "IMAGE_SIZE": 64,
    # Training image directory; empty means synthetic images
    "DATASET": "",
    # Number of synthetic images when DATASET is empty
    "SYNTHETIC_IMAGES": 32,
    "TRAIN_MSSSIM_SCALES": 3,
    # Operating points for `eval`: bit depths, paired with RESIDUAL_QUALITIES
    "EVAL_BITS": (3, 4, 5, 6, 7),
    "EVAL_MSSSIM_SCALES": 5,
    # Operating point for `encode`; a quality of 0 takes the last RESIDUAL_QUALITIES entry
    "ENCODE_BITS": 8,
    "ENCODE_RESIDUAL_QUALITY": 0,
    # none | builtin | external
    "RESIDUAL_BACKEND": "builtin",
    # Built-in requantization steps standing in for BPG QPs 50, 40, 35, 30, 25
    "RESIDUAL_QUALITIES": (32, 16, 12, 8, 4),
    # Store no residual instead of failing when an external backend breaks
    "RESIDUAL_FALLBACK": True,
    # Round to nearest instead of stochastic rounding when encoding
    "DETERMINISTIC_QUANT": False,
    "OUTPUT_DIR": "runs",
    # Parallel worker processes for `eval`
    "WORKERS": 1,
    # External command templates; placeholders {input} {output} {quality}
    "RESIDUAL_ENCODE_COMMAND": "",
    "RESIDUAL_DECODE_COMMAND": "",
    # builtin | external (code-map planes)
    "LOSSLESS_BACKEND": "builtin",
    "LOSSLESS_ENCODE_COMMAND": "",
    "LOSSLESS_DECODE_COMMAND": "",
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, value: Any) -> Any:
    """Convert `value` to the type of DEFAULTS[key]."""
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in _TRUE:
                return True
            if text in _FALSE:
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if isinstance(default, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(f"not an integer: {value!r}")
            return int(str(value).strip()) if isinstance(value, str) else int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise ValueError(f"not a number: {value!r}")
            return float(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                items = [item for item in value.replace(" ", "").split(",") if item]
            else:
                items = list(value)
            return tuple(int(item) for item in items)
        return str(value).strip() if isinstance(value, str) else str(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid value for {key}: {e}") from e


def _render(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{number}: expected KEY = value, got {stripped!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        key = key.upper()
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{number}: unknown setting {key}")
        values[key] = _coerce(key, value)
    return values


class CodecSettings:
    """
    Lazy settings loader for octave_codec.

    Access settings via codec_settings.SETTING_NAME
    """

    def __init__(self) -> None:
        self._cached_attrs: set[str] = set()
        self._user_settings: dict[str, Any] = {}

    @property
    def user_settings(self) -> dict[str, Any]:
        return self._user_settings

    def __getattr__(self, attr: str) -> Any:
        if attr.startswith("_"):
            raise AttributeError(f"Invalid setting: {attr}")

        if attr not in DEFAULTS:
            raise AttributeError(f"Invalid octave_codec setting: {attr}")

        val = self.user_settings.get(attr, DEFAULTS[attr])
        self._cached_attrs.add(attr)
        setattr(self, attr, val)
        return val

    def configure(self, **overrides: Any) -> None:
        """Apply overrides (typed or as strings); None values are ignored."""
        for key, value in overrides.items():
            if value is None:
                continue
            key = key.upper()
            if key not in DEFAULTS:
                raise ConfigError(f"unknown setting {key}")
            self._user_settings[key] = _coerce(key, value)
            self._forget(key)

    def load_file(self, path: Union[str, Path]) -> None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        self.configure(**parse_config_text(text, str(path)))

    def dump(self) -> str:
        """Effective configuration in the same format `load_file` reads."""
        lines = [f"{key} = {_render(getattr(self, key))}" for key in DEFAULTS]
        return "\n".join(lines) + "\n"

    def _forget(self, attr: str) -> None:
        if attr in self._cached_attrs:
            try:
                delattr(self, attr)
            except AttributeError:
                pass
            self._cached_attrs.discard(attr)

    def reload(self) -> None:
        """Clear cached and user settings (useful for testing)."""
        for attr in list(self._cached_attrs):
            self._forget(attr)
        self._cached_attrs.clear()
        self._user_settings = {}


codec_settings = CodecSettings()

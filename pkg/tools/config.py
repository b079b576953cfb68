"""Configuration management for uniedit runs."""

import inspect
import json
import os
import sys
from pathlib import Path
from typing import Any, Optional

from dotenv import load_dotenv

from constructors.base import DEFAULT_EDIT_WEIGHT
from edit_forge import TaskDistribution
from errors import ConfigurationError
from flow_head import DEFAULT_CFG_WEIGHT, DEFAULT_SAMPLER_STEPS
from instruction_parser import BASIC_STYLE, DELETION, FULL_STYLE, INSERTION, SUBSTITUTION
from vae import LossWeights

COMMANDS = (
    "tokenize",
    "reconstruct",
    "build-editset",
    "generate-bench",
    "validate-bench",
    "eval",
    "flow-demo",
)
SEEDED_COMMANDS = ("build-editset", "generate-bench", "flow-demo")

DEFAULT_TASKS = {DELETION: 1.0, INSERTION: 1.0, SUBSTITUTION: 1.0, "speed": 1.0, "pitch": 1.0, "volume": 1.0}
NOISE_TASKS = {"denoise": 1.0, "add_sound": 1.0}

# (environment variable, RunConfig field, type)
ENV_VARIABLES = (
    ("UNIEDIT_SEED", "seed", int),
    ("UNIEDIT_JOBS", "jobs", int),
    ("UNIEDIT_LOG_FILE", "log_file", str),
    ("UNIEDIT_EDIT_WEIGHT", "edit_weight", float),
    ("UNIEDIT_FLOW_STEPS", "flow_steps", int),
    ("UNIEDIT_CFG_WEIGHT", "cfg_weight", float),
    ("UNIEDIT_SAMPLER_STEPS", "sampler_steps", int),
    ("UNIEDIT_NOISE_DIR", "noise_dir", str),
)


def parse_task_distribution(text: str) -> dict[str, float]:
    """Parse 'deletion=2,insertion=1' (a bare task name means weight 1).

    Raises:
        ConfigurationError: On malformed weights
    """
    weights = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, value = part.partition("=")
        try:
            weights[name.strip()] = float(value) if value else 1.0
        except ValueError as e:
            raise ConfigurationError(f"Invalid weight for task '{name.strip()}': {value!r}") from e
    if not weights:
        raise ConfigurationError(f"Empty task distribution: {text!r}")
    return weights


class RunConfig:
    """Configuration holder for one uniedit subcommand."""

    def __init__(
        self,
        command: Optional[str] = None,
        seed: Optional[int] = None,
        jobs: int = 1,
        # Paths
        manifest: Optional[str] = None,
        out_dir: Optional[str] = None,
        noise_dir: Optional[str] = None,
        input_path: Optional[str] = None,
        output_path: Optional[str] = None,
        expected: Optional[str] = None,
        hypotheses: Optional[str] = None,
        embeddings: Optional[str] = None,
        report: Optional[str] = None,
        audio_root: Optional[str] = None,
        # Edit construction
        task_distribution: Optional[dict] = None,
        edit_weight: float = DEFAULT_EDIT_WEIGHT,
        max_span_tokens: int = 3,
        instruction_style: str = BASIC_STYLE,
        count_table: Optional[str] = None,
        snr_min_db: float = 0.0,
        snr_max_db: float = 20.0,
        # Signal processing and models
        fft_size: int = 640,
        hop_size: int = 160,
        window: str = "hann",
        compress_factor: int = 5,
        loss_weights: Optional[dict] = None,
        flow_steps: int = 2000,
        sampler_steps: int = DEFAULT_SAMPLER_STEPS,
        cfg_weight: float = DEFAULT_CFG_WEIGHT,
        # Logging
        log_file: Optional[str] = None,
        verbose: bool = False,
    ):
        """Initialize configuration.

        Args:
            command: Subcommand name (one of COMMANDS)
            seed: Root random seed; required by SEEDED_COMMANDS
            jobs: Worker threads for item-level fan-out
            manifest: Source manifest (or edit-set/benchmark manifest for eval)
            out_dir: Output directory of build-editset
            noise_dir: Directory of noise WAV files for denoise/add_sound
            input_path: Input file of tokenize/reconstruct
            output_path: Output file of tokenize/reconstruct/generate-bench/flow-demo
            expected: Expected-count JSON (or table name) for validate-bench
            hypotheses: Hypotheses JSON-lines file for eval
            embeddings: Embeddings JSON-lines file for eval
            report: Metric report path for eval
            audio_root: Directory that relative source paths resolve against in eval
            task_distribution: Task name -> weight
            edit_weight: Loss weight inside edited regions (>= 1)
            max_span_tokens: Longest edited span in tokens
            instruction_style: 'basic' or 'full' instruction grammar
            count_table: Forced per-cell counts for generate-bench (table name or JSON path)
            snr_min_db: Lower bound of sampled noise SNR
            snr_max_db: Upper bound of sampled noise SNR
            fft_size: STFT size for reconstruct
            hop_size: STFT hop for reconstruct
            window: STFT window for reconstruct
            compress_factor: Pooling factor reported by tokenize
            loss_weights: Overrides of the tokenizer loss coefficients
            flow_steps: Training steps of flow-demo
            sampler_steps: Euler steps of guided sampling
            cfg_weight: Classifier-free guidance weight
            log_file: Optional log file path
            verbose: Enable debug logging
        """
        self.command = command
        self.seed = seed
        self.jobs = jobs
        self.manifest = Path(manifest) if manifest else None
        self.out_dir = Path(out_dir) if out_dir else None
        self.noise_dir = Path(noise_dir) if noise_dir else None
        self.input_path = Path(input_path) if input_path else None
        self.output_path = Path(output_path) if output_path else None
        self.expected = expected
        self.hypotheses = Path(hypotheses) if hypotheses else None
        self.embeddings = Path(embeddings) if embeddings else None
        self.report = Path(report) if report else None
        self.audio_root = Path(audio_root) if audio_root else None

        if task_distribution is None:
            task_distribution = dict(DEFAULT_TASKS)
            if self.noise_dir:
                task_distribution.update(NOISE_TASKS)
        self.task_distribution = task_distribution
        self.edit_weight = edit_weight
        self.max_span_tokens = max_span_tokens
        self.instruction_style = instruction_style
        self.count_table = count_table
        self.snr_min_db = snr_min_db
        self.snr_max_db = snr_max_db

        self.fft_size = fft_size
        self.hop_size = hop_size
        self.window = window
        self.compress_factor = compress_factor
        self.loss_weights_overrides = dict(loss_weights or {})
        self.flow_steps = flow_steps
        self.sampler_steps = sampler_steps
        self.cfg_weight = cfg_weight

        self.log_file = log_file
        self.verbose = verbose

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(**self.loss_weights_overrides)

    def _required(self, errors: list[str], *names: str) -> None:
        for name in names:
            if getattr(self, name) is None:
                flag = name.replace("_", "-")
                errors.append(f"{flag} is required for {self.command}")

    def _existing(self, errors: list[str], name: str) -> None:
        path = getattr(self, name)
        if path is not None and not Path(path).exists():
            errors.append(f"{name.replace('_', ' ').capitalize()} does not exist: {path}")

    def validate(self) -> list[str]:
        """Validate configuration and return list of errors.

        Returns:
            List of error messages (empty if valid)
        """
        errors = []

        if self.command is not None and self.command not in COMMANDS:
            errors.append(f"Invalid command: {self.command} (must be one of {', '.join(COMMANDS)})")
            return errors

        if self.command in SEEDED_COMMANDS and self.seed is None:
            errors.append(f"Seed is required for {self.command} (pass --seed or set UNIEDIT_SEED)")
        if self.jobs < 1:
            errors.append(f"Jobs must be >= 1, got {self.jobs}")
        if self.edit_weight < 1:
            errors.append(f"Edit weight must be >= 1, got {self.edit_weight}")
        if self.max_span_tokens < 1:
            errors.append(f"Max span tokens must be >= 1, got {self.max_span_tokens}")
        if self.instruction_style not in (BASIC_STYLE, FULL_STYLE):
            errors.append(
                f"Invalid instruction style: {self.instruction_style} (must be '{BASIC_STYLE}' or '{FULL_STYLE}')"
            )
        if self.snr_min_db > self.snr_max_db:
            errors.append(f"SNR range is empty: [{self.snr_min_db}, {self.snr_max_db}] dB")
        if self.flow_steps < 1 or self.sampler_steps < 1:
            errors.append("Flow and sampler steps must be >= 1")
        if self.cfg_weight < 0:
            errors.append(f"CFG weight must be nonnegative, got {self.cfg_weight}")
        if self.compress_factor < 1:
            errors.append(f"Compression factor must be >= 1, got {self.compress_factor}")
        try:
            self.loss_weights
        except (ConfigurationError, TypeError) as e:
            errors.append(f"Invalid loss weights: {e}")

        errors.extend(TaskDistribution.from_weights(self.task_distribution).validate())

        if self.command in ("tokenize", "reconstruct"):
            self._required(errors, "input_path", "output_path")
            self._existing(errors, "input_path")
        elif self.command == "build-editset":
            self._required(errors, "manifest", "out_dir")
            self._existing(errors, "manifest")
            self._existing(errors, "noise_dir")
        elif self.command == "generate-bench":
            self._required(errors, "manifest", "output_path")
            self._existing(errors, "manifest")
        elif self.command == "validate-bench":
            self._required(errors, "manifest", "expected")
            self._existing(errors, "manifest")
        elif self.command == "eval":
            self._required(errors, "manifest", "hypotheses", "report")
            for name in ("manifest", "hypotheses", "embeddings"):
                self._existing(errors, name)
        elif self.command == "flow-demo":
            self._required(errors, "output_path")

        return errors


FIELDS = tuple(inspect.signature(RunConfig).parameters)


def load_config_from_env() -> dict:
    """Load configuration from environment variables and .env file.

    Only variables that are set appear in the result.

    Raises:
        ConfigurationError: If a numeric variable does not parse
    """
    load_dotenv()

    values: dict[str, Any] = {}
    for variable, name, cast in ENV_VARIABLES:
        raw = os.getenv(variable)
        if raw is None or raw == "":
            continue
        try:
            values[name] = cast(raw)
        except ValueError as e:
            raise ConfigurationError(f"{variable} must be a {cast.__name__}, got {raw!r}") from e
    return values


def load_config_file(path) -> dict:
    """Load a JSON config file whose keys are RunConfig fields.

    Raises:
        ConfigurationError: If the file is unreadable, not an object or has unknown keys
    """
    path = Path(path)
    try:
        values = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigurationError(f"Cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON ({e.msg})") from e
    if not isinstance(values, dict):
        raise ConfigurationError(f"{path}: expected a JSON object")
    unknown = sorted(set(values) - set(FIELDS))
    if unknown:
        raise ConfigurationError(f"{path}: unknown keys {', '.join(unknown)}")
    if isinstance(values.get("task_distribution"), str):
        values["task_distribution"] = parse_task_distribution(values["task_distribution"])
    return values


def create_config_from_args(args) -> RunConfig:
    """Create RunConfig from parsed CLI arguments.

    Precedence, highest first: flags, --config file (or UNIEDIT_CONFIG),
    environment, built-in defaults.

    Args:
        args: Parsed arguments from argparse

    Returns:
        RunConfig object

    Raises:
        SystemExit: If configuration is invalid
    """
    try:
        env_config = load_config_from_env()
        config_path = getattr(args, "config", None) or os.getenv("UNIEDIT_CONFIG")
        file_config = load_config_file(config_path) if config_path else {}

        flags = {name: getattr(args, name) for name in FIELDS if getattr(args, name, None) is not None}
        if isinstance(flags.get("task_distribution"), str):
            flags["task_distribution"] = parse_task_distribution(flags["task_distribution"])
        if not getattr(args, "verbose", False):
            flags.pop("verbose", None)

        config = RunConfig(**{**env_config, **file_config, **flags})
        errors = config.validate()
    except (ConfigurationError, TypeError) as e:
        errors = [str(e)]

    if errors:
        print("Configuration errors:", file=sys.stderr)
        for error in errors:
            print(f"  - {error}", file=sys.stderr)
        sys.exit(1)

    return config

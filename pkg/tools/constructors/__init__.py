"""Edit-pair constructor implementations and factory."""

from instruction_parser import DELETION, INSERTION, SUBSTITUTION

from .base import (
    ACOUSTIC_TASKS,
    ADD_SOUND,
    DENOISE,
    PITCH,
    RESERVED_TASKS,
    SPEED,
    VOLUME,
    ConstructorContext,
    DonorPool,
    EditExample,
    EditPair,
    PairConstructor,
    build_loss_weights,
)

SUPPORTED_TASKS = (DELETION, INSERTION, SUBSTITUTION) + ACOUSTIC_TASKS


def create_constructor(task: str, config, logger, context: ConstructorContext = None) -> PairConstructor:
    """Factory function to create the constructor for a task kind.

    Args:
        task: Task kind ('deletion', 'insertion', 'substitution', 'denoise',
            'add_sound', 'speed', 'pitch' or 'volume')
        config: RunConfig with edit_weight, max_span_tokens, instruction_style
            and the SNR range
        logger: Logger instance
        context: Shared noise pool and donor items

    Returns:
        PairConstructor implementation instance

    Raises:
        ValueError: If the task is reserved or unknown
    """
    if task == INSERTION:
        from .semantic import InsertionConstructor

        return InsertionConstructor(config, context, logger)
    elif task == DELETION:
        from .semantic import DeletionConstructor

        return DeletionConstructor(config, context, logger)
    elif task == SUBSTITUTION:
        from .semantic import SubstitutionConstructor

        return SubstitutionConstructor(config, context, logger)
    elif task == DENOISE:
        from .acoustic import DenoiseConstructor

        return DenoiseConstructor(config, context, logger)
    elif task == ADD_SOUND:
        from .acoustic import AddSoundConstructor

        return AddSoundConstructor(config, context, logger)
    elif task == SPEED:
        from .acoustic import SpeedConstructor

        return SpeedConstructor(config, context, logger)
    elif task == PITCH:
        from .acoustic import PitchConstructor

        return PitchConstructor(config, context, logger)
    elif task == VOLUME:
        from .acoustic import VolumeConstructor

        return VolumeConstructor(config, context, logger)
    elif task in RESERVED_TASKS:
        raise ValueError(f"Task '{task}' is reserved in the manifest schema but has no constructor")
    else:
        raise ValueError(f"Unknown task type: {task}. Supported tasks: {', '.join(SUPPORTED_TASKS)}")


__all__ = [
    "ConstructorContext",
    "DonorPool",
    "EditExample",
    "EditPair",
    "PairConstructor",
    "SUPPORTED_TASKS",
    "build_loss_weights",
    "create_constructor",
]

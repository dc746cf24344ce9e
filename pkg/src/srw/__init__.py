"""Wizard-of-Oz orchestration toolkit for social robot avatars.

A session gateway routes user input through a transcription ->
prompt-assembly -> LLM -> speech-synthesis pipeline while an operator
reconfigures the robot's role, language, voice, and interaction modes
live over REST and WebSocket channels.
"""

from .model import (
    AudioClip,
    AvatarEvent,
    AvatarState,
    ChatMessage,
    CommunicationSession,
    InteractionModes,
    Phase,
    RobotConfig,
    default_config,
    transition,
    validate_config,
)

__all__ = [
    "AudioClip",
    "AvatarEvent",
    "AvatarState",
    "ChatMessage",
    "CommunicationSession",
    "InteractionModes",
    "Phase",
    "RobotConfig",
    "default_config",
    "transition",
    "validate_config",
]

__version__ = "0.1.0"

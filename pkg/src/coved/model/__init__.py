from .beam import Hypothesis, beam_search, greedy_decode
from .dialogue import ARCHS, Components, ConfigError, DialogueModel, ModelConfig, Utterances

__all__ = [
    "ARCHS", "Components", "ConfigError", "DialogueModel", "Hypothesis", "ModelConfig",
    "Utterances", "beam_search", "greedy_decode",
]

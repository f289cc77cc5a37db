"""Exploration workbench for template-action text games."""

from .actions import Template, TemplateAction, Vocabulary, action_space_size, parse, render
from .admissible import admissible_actions
from .engine import GameState, Observation, reset, restore, snapshot, state_hash, step
from .world import WorldSpec, load_fixture, load_world

__version__ = "0.1.0"

__all__ = [
    "GameState", "Observation", "Template", "TemplateAction", "Vocabulary", "WorldSpec",
    "action_space_size", "admissible_actions", "load_fixture", "load_world", "parse", "render",
    "reset", "restore", "snapshot", "state_hash", "step",
]

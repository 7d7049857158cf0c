"""Playback-speed estimation, speed-change detection and annotation on synthetic video."""
from .version import TOOL_VERSION

__version__ = TOOL_VERSION

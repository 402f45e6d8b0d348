"""Find and assess the severity range where a randomized treatment helps most."""

__version__ = "0.1.0"

"""Zero-shot multi-label action recognition with dual learnable prompts,
windowed temporal attention, and weight patching, at desk scale."""

__version__ = "0.1.0"

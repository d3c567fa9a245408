"""Adapter configuration."""

from dataclasses import dataclass


@dataclass
class AdapterConfig:
    """Runtime settings for serving and fine-tuning.

    `max_seq_len` is clamped to the model's positional limit at load time.
    `context_join` selects how context utterances are packed: "sep" puts a
    separator token between utterances, "space" joins them as one segment.
    """

    model_path: str
    default_mode: str = "mlm_pll"
    max_seq_len: int = 128
    batch_size: int = 768
    device: str = "cpu"
    context_join: str = "sep"

    def validate(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_seq_len < 4:
            raise ValueError("max_seq_len must be >= 4")
        if self.context_join not in ("sep", "space"):
            raise ValueError(f"unknown context_join {self.context_join!r}")
        if self.default_mode not in ("mlm_pll", "nsp", "classifier"):
            raise ValueError(f"unknown mode {self.default_mode!r}")
        return self

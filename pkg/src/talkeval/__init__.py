"""talkeval: severity-aware evaluation and vision-augmented post-editing of
presentation ASR transcripts."""

__version__ = "0.1.0"

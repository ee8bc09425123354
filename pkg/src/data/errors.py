"""Exception types shared across ingestion and the stage runner."""

from typing import List, Optional, Sequence


class FormatError(ValueError):
    """A file failed validation; carries every collected error message."""

    def __init__(self, message: str, errors: Optional[Sequence[str]] = None):
        super().__init__(message)
        self.errors: List[str] = list(errors or [message])


class StageError(RuntimeError):
    """A pipeline stage failed; names the stage and what it was working on."""

    def __init__(self, stage: str, detail: str, cause: Optional[BaseException] = None):
        super().__init__(f"[{stage}] {detail}")
        self.stage = stage
        self.detail = detail
        self.cause = cause

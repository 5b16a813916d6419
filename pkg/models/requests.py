from typing import Optional

from pydantic import BaseModel, Field

from models.config import RunConfig


class RunRequest(BaseModel):
    """Pydantic model for a pipeline request: a run configuration and an optional checkpoint path."""
    config: RunConfig = Field(default_factory=RunConfig)
    checkpoint: Optional[str] = None


class ReportRequest(BaseModel):
    """Pydantic model for a summary request."""
    output_dir: str

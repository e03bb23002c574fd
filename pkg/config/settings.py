"""Application settings with environment variable loading."""

from functools import lru_cache

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


load_dotenv()


class Settings(BaseSettings):
    """Process-level configuration loaded from environment variables.

    Experiment-specific parameters live in the JSON experiment document
    (see config.experiment); these settings only cover how the toolkit
    runs on this machine.

    Attributes:
        log_level: Logging level.
        log_dir: Root directory for rotating log files.
        log_to_file: Write the application log file next to console output.
        pdtool_threads: Worker threads for parallel sections (PDTOOL_THREADS).
        output_dir: Default directory for traces written by the CLI.
        divergence_threshold: Iterate norm treated as divergence.
        reference_max_iters: Hard iteration budget of iterative reference solves.
        reference_tolerance: Residual target of iterative reference solves.
    """

    # Logging
    log_level: str = Field(default="INFO")
    log_dir: str = Field(default="logs")
    log_to_file: bool = Field(default=True)

    # Execution
    pdtool_threads: int = Field(default=1, ge=1)
    output_dir: str = Field(default="runs")

    # Numerics
    divergence_threshold: float = Field(default=1e12, gt=0)
    reference_max_iters: int = Field(default=200_000, ge=1)
    reference_tolerance: float = Field(default=1e-10, gt=0)

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    def worker_count(self, tasks: int) -> int:
        """Number of worker threads to use for a batch of tasks.

        Args:
            tasks: Number of independent tasks in the batch.

        Returns:
            Thread count, never above the task count and at least 1.
        """
        return max(1, min(self.pdtool_threads, tasks))


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance.

    Returns:
        Settings instance with loaded configuration.
    """
    return Settings()

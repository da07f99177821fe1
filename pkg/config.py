from pydantic_settings import BaseSettings, SettingsConfigDict
from functools import lru_cache
from typing import List, Union
from pydantic import field_validator
import json
import multiprocessing


DEFAULT_SNR_DB = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]


class Settings(BaseSettings):
    log_level: str = "INFO"
    output_dir: str = "artifacts"
    # Default to 1 worker; override via env MDPSM_JOBS or --jobs
    jobs: int = 1
    batch_size: int = 20_000
    min_bit_errors: int = 200
    max_channel_uses: int = 20_000_000
    condition_threshold: float = 1e12
    # channel_stats also dumps this many raw H draws; 0 disables
    channel_dump_draws: int = 8
    # Accepts list or string from env; validator normalizes to list[float]
    default_snr_db: Union[List[float], str] = DEFAULT_SNR_DB

    model_config = SettingsConfigDict(
        env_prefix="MDPSM_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    @field_validator("default_snr_db", mode="before")
    @classmethod
    def parse_snr_grid(cls, v):
        """
        Allow MDPSM_DEFAULT_SNR_DB to be provided as a JSON array or comma-separated string.
        """
        try:
            if isinstance(v, str):
                raw = v.strip()
                # Remove optional wrapping quotes around the whole string
                if (raw.startswith('"') and raw.endswith('"')) or (
                    raw.startswith("'") and raw.endswith("'")
                ):
                    raw = raw[1:-1]
                if raw.startswith("["):
                    loaded = json.loads(raw)
                    if isinstance(loaded, list):
                        return [float(item) for item in loaded] or list(DEFAULT_SNR_DB)
                parsed = [float(item) for item in raw.split(",") if item.strip()]
                return parsed or list(DEFAULT_SNR_DB)
            if isinstance(v, (list, tuple)):
                return [float(item) for item in v] or list(DEFAULT_SNR_DB)
        except (TypeError, ValueError):
            return list(DEFAULT_SNR_DB)
        return list(DEFAULT_SNR_DB)

    @field_validator("jobs", mode="after")
    @classmethod
    def clamp_jobs(cls, v: int) -> int:
        # cap to CPU*2+1 like a process-based server would
        return max(1, min(int(v), multiprocessing.cpu_count() * 2 + 1))


@lru_cache
def get_settings():
    return Settings()

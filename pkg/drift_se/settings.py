import typing

import pydantic
import pydantic_settings


class Settings(pydantic_settings.BaseSettings):
    model_config = pydantic_settings.SettingsConfigDict(env_prefix='drift_se_')

    log_level: typing.Literal['DEBUG', 'INFO', 'WARNING', 'ERROR'] = pydantic.Field(default='INFO')
    worker_id: str = pydantic.Field(default='')
    csv_float_format: str = pydantic.Field(default='%.12g')
    checkpoint_every: int = pydantic.Field(default=0, ge=0)
    density_grid_bins: int = pydantic.Field(default=64, ge=2)

    @pydantic.field_validator('log_level', mode='before')
    @classmethod
    def normalize_level(cls, value: str) -> str:
        return value.upper() if isinstance(value, str) else value


def get_settings() -> Settings:
    return Settings()

import typing

from ..schemas import Task
from .denoise import run_denoise
from .drift_eval import run_drift_eval
from .stft_check import run_stft_check
from .toy2d import run_toy2d
from .unpaired import run_unpaired

TASKS: dict[Task, typing.Callable[..., dict[str, typing.Any]]] = {
    Task.toy2d: run_toy2d,
    Task.denoise: run_denoise,
    Task.unpaired: run_unpaired,
    Task.drift_eval: run_drift_eval,
    Task.stft_check: run_stft_check,
}

"""Wall-clock timing of forward and forward+backward steps."""
from __future__ import annotations

import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch


@dataclass
class TimingRecord:
    arch: str
    preset: str
    batch_size: int
    input_hw: tuple[int, int]
    param_count: int
    reps: int
    warmup: int
    forward_ms: list[float] = field(default_factory=list)
    step_ms: list[float] = field(default_factory=list)
    fingerprint: dict = field(default_factory=dict)

    @staticmethod
    def _summary(v):
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        return float(med), float(q3 - q1), (float(q1), float(q3))

    @property
    def forward_median(self) -> float:
        return self._summary(self.forward_ms)[0]

    @property
    def forward_iqr(self) -> float:
        return self._summary(self.forward_ms)[1]

    @property
    def step_median(self) -> float:
        return self._summary(self.step_ms)[0]

    @property
    def step_iqr(self) -> float:
        return self._summary(self.step_ms)[1]

    @property
    def step_quartiles(self) -> tuple[float, float]:
        return self._summary(self.step_ms)[2]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_hw"] = list(self.input_hw)
        d.update(forward_median_ms=self.forward_median, forward_iqr_ms=self.forward_iqr,
                 step_median_ms=self.step_median, step_iqr_ms=self.step_iqr)
        return d


def machine_fingerprint(dtype=torch.float32) -> dict:
    return {"threads": torch.get_num_threads(), "dtype": str(dtype).replace("torch.", ""),
            "torch": torch.__version__, "python": platform.python_version(), "machine": platform.machine(),
            "processor": platform.processor() or platform.machine(), "system": platform.system()}


def benchmark_model(arch: str, config, reps: int = 5, warmup: int = 1, batch_size: int | None = None,
                    seed: int = 0) -> TimingRecord:
    """Median/IQR of ``reps`` timed forward and forward+backward passes after ``warmup`` untimed ones."""
    from ..models.zoo import build_model, count_params
    from ..train import combined_loss

    if reps < 3:
        raise ValueError("reps must be >= 3")
    model = build_model(arch, config)
    b = batch_size or config.batch_size
    h, w = config.input_hw
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(b, config.in_channels, h, w, generator=g)
    y = torch.randint(0, config.num_classes, (b, h, w), generator=g)
    rec = TimingRecord(config.arch, config.preset, b, (h, w), count_params(model), reps, warmup,
                       fingerprint=machine_fingerprint())
    model.train()

    def fwd():
        with torch.no_grad():
            model(x)

    def step():
        model.zero_grad(set_to_none=True)
        combined_loss(model(x), y).backward()

    for fn, out in ((fwd, rec.forward_ms), (step, rec.step_ms)):
        for _ in range(warmup):
            fn()
        for _ in range(reps):
            t0 = time.perf_counter()
            fn()
            out.append((time.perf_counter() - t0) * 1e3)
    return rec


__all__ = ["TimingRecord", "benchmark_model", "machine_fingerprint"]

from .engine import (SimConfigError, SimResult, SimStats, measure_utilization,
                     simulate_layer, simulate_network)
from .trace import CycleTrace, fcu_trace, kpu_trace
from .units import FcuUnit, InputAggregator, KpuUnit, PpuUnit, WidthOverflow

__all__ = [
    "SimConfigError", "SimResult", "SimStats", "measure_utilization",
    "simulate_layer", "simulate_network",
    "CycleTrace", "fcu_trace", "kpu_trace",
    "FcuUnit", "InputAggregator", "KpuUnit", "PpuUnit", "WidthOverflow",
]

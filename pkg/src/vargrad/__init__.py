"""Variance-based gradient compression for synchronous data-parallel SGD."""
from .codecs import hybrid_step, strom_step
from .core import (BatchGradientSums, GateConfig, GradientStats, ParameterGroup,
                   SparseGradient, accumulate, make_layout, per_sample_sums)
from .costmodel import (CostModelInputs, allgatherv_time_bound, ring_allreduce_time,
                        speedup_lower_bound)
from .gate import criterion_via_variance, equivalent_alpha_prime, gate_step, should_send
from .quantize import (GroupQuantHeader, QuantizedEntry, dequantize, fast_floor_pow2,
                       fast_round_pow2, quantize_group)
from .config import RunConfig, load_run_config, run_config_from_dict
from .errors import (CommunicationError, ConfigurationError, DataError, DivergenceError,
                     DomainError, EncodingError, ProtocolError, TraceFormatError, VarGradError)
from .optim import OptimizerConfig
from .trainer import TrainResult, train

__version__ = "0.1.0"

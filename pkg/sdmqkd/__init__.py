"""
Decoy-state BB84 over space-division-multiplexed multicore fiber.

Monte Carlo simulation of parallel core-pair keys, decoy-state key-rate
bounds, MUB tomography, and closed-form comparison of multiplexing schemes.
"""

from .errors import SdmQkdError, ParameterError, ConfigError, AnalysisError
from .qstate import BasisId, CorePairState, MziSetting, prepare_state, mzi_transfer, measurement_probabilities
from .channel import ChannelParams, total_transmittance, transmit_pulse, analytic_gain, analytic_qber
from .protocol import IntensitySchedule, SessionConfig, DecoyStatistics, run_session, sift, estimate_qber
from .analysis import binary_entropy, decoy_bounds, secret_key_rate, classical_fidelity, tomography
from .multiplex import Scheme, SchemeParams, eta_from_distance, scheme_rate, compare_sweep

__version__ = '1.0.0'

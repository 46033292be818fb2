"""
Spatial-mode qubits on a pair of fiber cores.

A photon shared between cores A and B is described by two complex
amplitudes.  The transmitter and receiver chips manipulate it with
Mach-Zehnder interferometers (MZIs), modelled here as tunable beam
splitters followed by a phase shifter.

Global phase is unobservable: compare states through their outcome
probabilities, never through raw amplitudes.
"""

from typing import Tuple
from dataclasses import dataclass
from enum import IntEnum

import cmath
import math

import numpy as np

from .errors import NormalizationError, ParameterError

__all__ = [
  'BasisId', 'CorePairState', 'MziSetting',
  'BEAMSPLITTER_CONVENTION', 'NORM_TOLERANCE',
  'prepare_state', 'mzi_matrix', 'mzi_transfer',
  'measurement_probabilities', 'mub_overlap',
  'preparation_setting', 'measurement_settings', 'measure_via_mzi',
  'ideal_outcome_table',
  'STATE_A', 'STATE_B',
]

# U(theta, phi) = diag(exp(i*phi), 1) @ [[cos(theta/2), i*sin(theta/2)],
#                                         [i*sin(theta/2), cos(theta/2)]]
# theta = 0 is the bar state (0 V), pi/2 the 50/50 point (V_pi/2), pi the
# cross state (V_pi).  The i sits on the off-diagonal (lossless coupler).
BEAMSPLITTER_CONVENTION = "diag(e^{i phi}, 1) . [[cos t/2, i sin t/2], [i sin t/2, cos t/2]]"

NORM_TOLERANCE = 1e-9

_SQRT_HALF = math.sqrt(0.5)


class BasisId(IntEnum):
  X = 0  # core basis {|A>, |B>}
  Z = 1  # superposition basis {|A+B>, |A-B>}


@dataclass(frozen=True)
class CorePairState:
  amp_a: complex
  amp_b: complex

  @property
  def norm_squared(self) -> float:
    return abs(self.amp_a) ** 2 + abs(self.amp_b) ** 2

  def is_normalized(self, tol: float = NORM_TOLERANCE) -> bool:
    return abs(self.norm_squared - 1.0) <= tol

  def as_array(self) -> np.ndarray:
    return np.array([self.amp_a, self.amp_b], dtype=complex)

  @classmethod
  def from_array(cls, amps: np.ndarray) -> 'CorePairState':
    return cls(complex(amps[0]), complex(amps[1]))


STATE_A = CorePairState(1 + 0j, 0j)
STATE_B = CorePairState(0j, 1 + 0j)


@dataclass(frozen=True)
class MziSetting:
  """Operating point of one MZI: splitting angle theta, output phase phi."""
  theta: float = 0.0
  phi: float = 0.0

  def __post_init__(self):
    if not 0.0 <= self.theta <= math.pi:
      raise ParameterError(f"theta={self.theta} outside [0, pi]", key='theta')
    if not 0.0 <= self.phi < 2 * math.pi:
      raise ParameterError(f"phi={self.phi} outside [0, 2pi)", key='phi')


def _check_normalized(state: CorePairState, name: str = 'state') -> None:
  if not state.is_normalized():
    raise NormalizationError(
      f"{name} is not normalized (|a|^2+|b|^2 = {state.norm_squared!r})", key=name
    )


def prepare_state(bit: int, basis: BasisId) -> CorePairState:
  """Return the BB84 state encoding `bit` in `basis`."""
  if bit not in (0, 1):
    raise ParameterError(f"bit must be 0 or 1, got {bit!r}", key='bit')
  basis = BasisId(basis)
  if basis is BasisId.X:
    return STATE_A if bit == 0 else STATE_B
  sign = 1.0 if bit == 0 else -1.0
  return CorePairState(complex(_SQRT_HALF), complex(sign * _SQRT_HALF))


def mzi_matrix(setting: MziSetting) -> np.ndarray:
  half = setting.theta / 2
  splitter = np.array([
    [math.cos(half), 1j * math.sin(half)],
    [1j * math.sin(half), math.cos(half)],
  ])
  phase = np.diag([cmath.exp(1j * setting.phi), 1.0])
  return phase @ splitter


def mzi_transfer(setting: MziSetting, state: CorePairState) -> CorePairState:
  return CorePairState.from_array(mzi_matrix(setting) @ state.as_array())


def measurement_probabilities(state: CorePairState, basis: BasisId) -> Tuple[float, float]:
  """
  Born-rule probabilities (p0, p1) of measuring `state` in `basis`.

  Outcome 0 is |A> (basis X) or |A+B> (basis Z).
  """
  _check_normalized(state)
  a, b = state.amp_a, state.amp_b
  if BasisId(basis) is BasisId.X:
    p0, p1 = abs(a) ** 2, abs(b) ** 2
  else:
    p0, p1 = abs(a + b) ** 2 / 2, abs(a - b) ** 2 / 2
  total = p0 + p1
  return p0 / total, p1 / total


def mub_overlap(s1: CorePairState, s2: CorePairState) -> float:
  """|<s1|s2>|^2"""
  _check_normalized(s1, 's1')
  _check_normalized(s2, 's2')
  inner = s1.amp_a.conjugate() * s2.amp_a + s1.amp_b.conjugate() * s2.amp_b
  return abs(inner) ** 2


def preparation_setting(bit: int, basis: BasisId) -> MziSetting:
  """Transmitter MZI operating point that turns |A> into the BB84 state (bit, basis)."""
  if BasisId(basis) is BasisId.X:
    return MziSetting(0.0 if bit == 0 else math.pi, 0.0)
  return MziSetting(math.pi / 2, math.pi / 2 if bit == 0 else 3 * math.pi / 2)


def measurement_settings(basis: BasisId) -> Tuple[MziSetting, MziSetting]:
  """
  Receiver (phase stage, projection stage) operating points.

  After both stages, basis state 0 exits on core A and basis state 1 on
  core B, so core-resolved detection realizes the measurement.
  """
  if BasisId(basis) is BasisId.X:
    return MziSetting(), MziSetting()
  return MziSetting(0.0, math.pi / 2), MziSetting(math.pi / 2, 0.0)


def measure_via_mzi(state: CorePairState, basis: BasisId) -> Tuple[float, float]:
  _check_normalized(state)
  stage1, stage2 = measurement_settings(basis)
  out = mzi_transfer(stage2, mzi_transfer(stage1, state))
  pa, pb = abs(out.amp_a) ** 2, abs(out.amp_b) ** 2
  return pa / (pa + pb), pb / (pa + pb)


def ideal_outcome_table() -> np.ndarray:
  """
  Probability of outcome 1, indexed [prepared basis, bit, measured basis].

  Used by the vectorized channel so that the bulk simulation and the
  scalar state model share one source of truth.
  """
  table = np.empty((2, 2, 2))
  for prep in BasisId:
    for bit in (0, 1):
      state = prepare_state(bit, prep)
      for meas in BasisId:
        table[prep, bit, meas] = measurement_probabilities(state, meas)[1]
  return table

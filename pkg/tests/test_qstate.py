import math

import numpy as np

from .simtest.unittest import SimulationTestCase
from .simtest import markers

from sdmqkd.errors import NormalizationError, ParameterError
from sdmqkd.qstate import (
  BasisId, CorePairState, MziSetting, STATE_A, STATE_B,
  prepare_state, mzi_matrix, mzi_transfer, measurement_probabilities, mub_overlap,
  preparation_setting, measurement_settings, measure_via_mzi, ideal_outcome_table,
)

_H = math.sqrt(0.5)


def _random_state(rng: np.random.Generator) -> CorePairState:
  v = rng.normal(size=2) + 1j * rng.normal(size=2)
  return CorePairState.from_array(v / np.linalg.norm(v))


def _probs(state: CorePairState):
  return list(measurement_probabilities(state, BasisId.X)) + list(measurement_probabilities(state, BasisId.Z))


class PrepareStateTests(SimulationTestCase):

  def test_core_basis(self):
    self.assertEqual(STATE_A, prepare_state(0, BasisId.X))
    self.assertEqual(STATE_B, prepare_state(1, BasisId.X))

  def test_superposition_basis(self):
    s0 = prepare_state(0, BasisId.Z)
    s1 = prepare_state(1, BasisId.Z)
    self.assertListAlmostEqual([_H, _H], [s0.amp_a.real, s0.amp_b.real], places=12)
    self.assertListAlmostEqual([_H, -_H], [s1.amp_a.real, s1.amp_b.real], places=12)

  def test_normalized(self):
    for basis in BasisId:
      for bit in (0, 1):
        self.assertAlmostEqual(1.0, prepare_state(bit, basis).norm_squared, places=12)

  def test_bad_bit(self):
    with self.assertRaises(ParameterError):
      prepare_state(2, BasisId.X)


class MziSettingTests(SimulationTestCase):

  def test_ranges(self):
    MziSetting(math.pi, 2 * math.pi - 1e-9)
    with self.assertRaises(ParameterError) as cm:
      MziSetting(-0.1, 0.0)
    self.assertEqual('theta', cm.exception.key)
    with self.assertRaises(ParameterError) as cm:
      MziSetting(0.0, 2 * math.pi)
    self.assertEqual('phi', cm.exception.key)


class MziTransferTests(SimulationTestCase):

  def test_bar_state_identity(self):
    out = mzi_transfer(MziSetting(0.0, 0.0), STATE_A)
    self.assertListAlmostEqual([1.0, 0.0], [abs(out.amp_a) ** 2, abs(out.amp_b) ** 2], places=12)

  def test_fifty_fifty(self):
    out = mzi_transfer(MziSetting(math.pi / 2, 0.0), STATE_A)
    self.assertListAlmostEqual([0.5, 0.5], [abs(out.amp_a) ** 2, abs(out.amp_b) ** 2], places=12)

  def test_cross_state(self):
    out = mzi_transfer(MziSetting(math.pi, 0.0), STATE_A)
    self.assertListAlmostEqual([0.0, 1.0], [abs(out.amp_a) ** 2, abs(out.amp_b) ** 2], places=12)

  def test_unitary(self):
    rng = self.rng(11)
    for _ in range(100):
      setting = MziSetting(rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi))
      u = mzi_matrix(setting)
      self.assertArrayWithin(np.eye(2), u @ u.conj().T, 1e-12)

  def test_norm_preserved(self):
    rng = self.rng(12)
    for _ in range(100):
      setting = MziSetting(rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi))
      out = mzi_transfer(setting, _random_state(rng))
      self.assertAlmostEqual(1.0, out.norm_squared, places=12)

  def test_composition(self):
    rng = self.rng(13)
    for _ in range(50):
      t1, t2 = rng.uniform(0, math.pi / 2, size=2)
      state = _random_state(rng)
      cascaded = mzi_transfer(MziSetting(t2, 0.0), mzi_transfer(MziSetting(t1, 0.0), state))
      single = mzi_transfer(MziSetting(t1 + t2, 0.0), state)
      self.assertListAlmostEqual(_probs(single), _probs(cascaded), places=12)

  def test_input_unmodified(self):
    with self.assertUnmodified(prepare_state(0, BasisId.Z)) as state:
      mzi_transfer(MziSetting(1.0, 2.0), state)


class MeasurementProbabilitiesTests(SimulationTestCase):

  def test_core_state(self):
    self.assertListAlmostEqual([1.0, 0.0], measurement_probabilities(STATE_A, BasisId.X), places=12)
    self.assertListAlmostEqual([0.5, 0.5], measurement_probabilities(STATE_A, BasisId.Z), places=12)

  def test_circular_state(self):
    state = CorePairState(complex(_H), 1j * _H)
    self.assertListAlmostEqual([0.5, 0.5], measurement_probabilities(state, BasisId.Z), places=12)

  def test_round_trip(self):
    for basis in BasisId:
      for bit in (0, 1):
        probs = measurement_probabilities(prepare_state(bit, basis), basis)
        self.assertAlmostEqual(1.0, probs[bit], places=12)

  def test_sums_to_one(self):
    rng = self.rng(14)
    for _ in range(100):
      for basis in BasisId:
        self.assertProbabilityVector(measurement_probabilities(_random_state(rng), basis))

  def test_rejects_unnormalized(self):
    with self.assertRaises(NormalizationError):
      measurement_probabilities(CorePairState(1 + 0j, 1 + 0j), BasisId.X)

  def test_tolerates_rounding(self):
    state = CorePairState(complex(1.0 + 1e-11), 0j)
    self.assertListAlmostEqual([1.0, 0.0], measurement_probabilities(state, BasisId.X), places=12)


class MubOverlapTests(SimulationTestCase):

  def test_examples(self):
    a_plus_b = prepare_state(0, BasisId.Z)
    a_minus_b = prepare_state(1, BasisId.Z)
    self.assertAlmostEqual(1.0, mub_overlap(STATE_A, STATE_A), places=12)
    self.assertAlmostEqual(0.5, mub_overlap(STATE_A, a_plus_b), places=12)
    self.assertAlmostEqual(0.0, mub_overlap(a_plus_b, a_minus_b), places=12)

  def test_mutually_unbiased(self):
    for x_bit in (0, 1):
      for z_bit in (0, 1):
        self.assertAlmostEqual(
          0.5, mub_overlap(prepare_state(x_bit, BasisId.X), prepare_state(z_bit, BasisId.Z)), places=12)

  def test_rejects_unnormalized(self):
    with self.assertRaises(NormalizationError):
      mub_overlap(STATE_A, CorePairState(0j, 0j))


class ChipSettingsTests(SimulationTestCase):

  def test_preparation_reproduces_states(self):
    for basis in BasisId:
      for bit in (0, 1):
        prepared = mzi_transfer(preparation_setting(bit, basis), STATE_A)
        self.assertListAlmostEqual(_probs(prepare_state(bit, basis)), _probs(prepared), places=12)

  def test_measurement_matches_born_rule(self):
    rng = self.rng(15)
    for _ in range(50):
      state = _random_state(rng)
      for basis in BasisId:
        self.assertListAlmostEqual(
          measurement_probabilities(state, basis), measure_via_mzi(state, basis), places=12)

  def test_core_basis_needs_no_interference(self):
    self.assertEqual((MziSetting(), MziSetting()), measurement_settings(BasisId.X))

  @markers.tags('table')
  def test_ideal_outcome_table(self):
    table = ideal_outcome_table()
    self.assertEqual((2, 2, 2), table.shape)
    for prep in BasisId:
      for bit in (0, 1):
        self.assertAlmostEqual(float(bit), table[prep, bit, prep], places=12)
        self.assertAlmostEqual(0.5, table[prep, bit, 1 - prep], places=12)

import math

import numpy as np

from .simtest.unittest import SimulationTestCase
from .simtest import markers

from sdmqkd.errors import InsufficientStatisticsError, ParameterError, StatisticsError
from sdmqkd.qstate import BasisId
from sdmqkd.channel import ChannelParams, DetectionRecord, calibrated_link
from sdmqkd.protocol import (
  PRBS_TAPS, prbs_next, Prbs,
  IntensityClass, IntensitySchedule, TWO_KEY_PATTERN,
  SessionConfig, derive_seeds,
  PulseRecord, PulseRecords, DetectionRecords, SiftedBatch, ClassCounts, DecoyStatistics,
  sift, estimate_qber, accumulate_statistics, run_session, qber_series,
)

LOSSLESS = ChannelParams(crosstalk_db=-math.inf)


def _correlation(a: np.ndarray, b: np.ndarray) -> float:
  n = min(len(a), len(b))
  x = 2.0 * a[:n].astype(float) - 1.0
  y = 2.0 * b[:n].astype(float) - 1.0
  return float(np.mean(x * y))


def _session(n_pulses, n_pairs=1, seed=0, schedule=None, **kw) -> SessionConfig:
  schedule = schedule or IntensitySchedule()
  return SessionConfig.from_seed(seed, n_pulses, [schedule] * n_pairs, **kw)


class PrbsNextTests(SimulationTestCase):

  def test_rejects_zero_state(self):
    with self.assertRaises(ParameterError):
      prbs_next(0)
    with self.assertRaises(ParameterError):
      prbs_next(1 << 7, order=7)

  def test_rejects_unknown_order(self):
    with self.assertRaises(ParameterError):
      prbs_next(1, order=9)

  def test_prbs7_period(self):
    state, period = 1, 0
    while True:
      _, state = prbs_next(state, order=7)
      period += 1
      if state == 1:
        break
    self.assertEqual(127, period)

  def test_prbs7_balanced(self):
    gen = Prbs(0x55, order=7)
    self.assertEqual(64, int(gen.bits(127).sum()))

  def test_deterministic(self):
    self.assertTrue(np.array_equal(Prbs(12345).bits(10_000), Prbs(12345).bits(10_000)))

  def test_distinct_seeds_uncorrelated(self):
    n = 100_000
    a, b = Prbs(0x2B6C1F35).bits(n), Prbs(0x51A3E7C9).bits(n)
    self.assertLess(abs(_correlation(a, b)), 4 / math.sqrt(n))


class PrbsTests(SimulationTestCase):

  def _scalar(self, seed, order, n):
    state, out = seed, []
    for _ in range(n):
      bit, state = prbs_next(state, order)
      out.append(bit)
    return out, state

  def test_vector_matches_scalar(self):
    for order, n in ((7, 50_000), (31, 200_000)):
      expected, state = self._scalar(0x1234 % (1 << order) or 1, order, n)
      gen = Prbs(0x1234 % (1 << order) or 1, order)
      self.assertEqual(expected, gen.bits(n).tolist())
      self.assertEqual(state, gen.state)

  def test_chunks_continue(self):
    whole = Prbs(777).bits(6000)
    gen = Prbs(777)
    parts = np.concatenate([gen.bits(1000), gen.bits(0), gen.bits(5000)])
    self.assertTrue(np.array_equal(whole, parts))

  def test_next_bit(self):
    gen = Prbs(99)
    bits = [gen.next_bit() for _ in range(100)]
    self.assertEqual(Prbs(99).bits(100).tolist(), bits)

  def test_taps(self):
    self.assertEqual({7: 6, 31: 28}, PRBS_TAPS)


class IntensityScheduleTests(SimulationTestCase):

  def test_defaults(self):
    s = IntensitySchedule(u=0.45)
    self.assertAlmostEqual(0.225, s.v)
    self.assertEqual((0.7, 0.2, 0.1), s.probabilities)
    self.assertListAlmostEqual([0.45, 0.225, 0.0], s.means)

  def test_invalid(self):
    for kw in ({'u': 0.5, 'v': 0.5}, {'u': 0.0}, {'p_u': 0.5}, {'mode': 'table'}):
      with self.assertRaises(ParameterError):
        IntensitySchedule(**kw)

  def test_iid_frequencies(self):
    n = 100_000
    classes = IntensitySchedule().draw(n, self.rng(3))
    for cls, p in zip(IntensityClass, (0.7, 0.2, 0.1)):
      self.assertWithinSigma(p, int(np.count_nonzero(classes == cls)), n)

  def test_pattern(self):
    s = IntensitySchedule(mode='pattern')
    for pair in (0, 1):
      classes = s.draw(20, self.rng(), pair)
      expected = [int(c) for c in TWO_KEY_PATTERN[pair]] * 3
      self.assertEqual(expected[:20], classes.tolist())

  def test_labels(self):
    self.assertEqual(['u', 'v', 'vacuum'], [c.label for c in IntensityClass])
    self.assertEqual(IntensityClass.VACUUM, IntensityClass.from_label('vacuum'))


class SessionConfigTests(SimulationTestCase):

  def test_derive_seeds(self):
    seeds = derive_seeds(42, 8)
    self.assertEqual(seeds, derive_seeds(42, 8))
    self.assertEqual(8, len(set(seeds.prbs)))
    for s in seeds.prbs + seeds.bob_prbs:
      self.assertTrue(0 < s < 2 ** 31)
    self.assertNotEqual(seeds.prbs, derive_seeds(43, 8).prbs)

  def test_invariants(self):
    s = IntensitySchedule()
    with self.assertRaises(ParameterError):
      SessionConfig(10, (5, 5), (1, 2), (s, s))
    with self.assertRaises(ParameterError):
      SessionConfig(10, (), (), ())
    with self.assertRaises(ParameterError) as cm:
      SessionConfig(10, (5,), (1,), (s,), basis_prob_x=1.0)
    self.assertEqual('basis_prob_x', cm.exception.key)

  def test_n_core_pairs(self):
    self.assertEqual(3, _session(10, n_pairs=3).n_core_pairs)


class SiftTests(SimulationTestCase):

  def _pulses(self, bits, bases, classes=None):
    classes = classes or [IntensityClass.U] * len(bits)
    return [PulseRecord(b, BasisId(s), c, 0, i) for i, (b, s, c) in enumerate(zip(bits, bases, classes))]

  def _detections(self, c0, c1, bases, tiebreak=None):
    tiebreak = tiebreak or [0] * len(c0)
    return [DetectionRecord(a, b, BasisId(s), i, t) for i, (a, b, s, t) in enumerate(zip(c0, c1, bases, tiebreak))]

  def test_no_clicks(self):
    batches = sift(self._pulses([0, 1], [0, 1]), self._detections([False] * 2, [False] * 2, [0, 1]))
    for cls in IntensityClass:
      self.assertEqual(0, len(batches[cls]))

  def test_matching_bases_noiseless(self):
    bits = [0, 1, 1, 0]
    batches = sift(
      self._pulses(bits, [0, 0, 1, 1]),
      self._detections([b == 0 for b in bits], [b == 1 for b in bits], [0, 0, 1, 1]),
    )
    u = batches[IntensityClass.U]
    self.assertEqual(bits, u.alice_bits.tolist())
    self.assertEqual(bits, u.bob_bits.tolist())

  def test_drops_mismatched_bases(self):
    batches = sift(self._pulses([0, 0], [0, 1]), self._detections([True, True], [False, False], [0, 0]))
    self.assertEqual(1, len(batches[IntensityClass.U]))

  def test_double_click_uses_tiebreak(self):
    batches = sift(
      self._pulses([0, 0], [0, 0]),
      self._detections([True, True], [True, True], [0, 0], tiebreak=[1, 0]),
    )
    self.assertEqual([1, 0], batches[IntensityClass.U].bob_bits.tolist())

  def test_partitions_by_class(self):
    classes = [IntensityClass.U, IntensityClass.V, IntensityClass.VACUUM]
    batches = sift(self._pulses([1, 1, 1], [0, 0, 0], classes), self._detections([False] * 3, [True] * 3, [0, 0, 0]))
    for cls in IntensityClass:
      self.assertEqual(1, len(batches[cls]))

  def test_length_mismatch(self):
    with self.assertRaises(ParameterError) as cm:
      sift(self._pulses([0, 1], [0, 0]), self._detections([True], [False], [0]))
    self.assertEqual('records', cm.exception.key)

  def test_columnar_and_scalar_agree(self):
    pulses = self._pulses([0, 1, 1], [0, 1, 0])
    dets = self._detections([True, False, True], [False, True, True], [0, 1, 0], [0, 0, 1])
    scalar = sift(pulses, dets)
    columnar = sift(PulseRecords.from_records(pulses), DetectionRecords.from_records(dets))
    for cls in IntensityClass:
      self.assertEqual(scalar[cls].bob_bits.tolist(), columnar[cls].bob_bits.tolist())


class EstimateQberTests(SimulationTestCase):

  def test_examples(self):
    self.assertEqual(0.0, estimate_qber(SiftedBatch([0, 1, 1], [0, 1, 1])))
    self.assertEqual(1.0, estimate_qber(SiftedBatch([0, 1, 1], [1, 0, 0])))
    self.assertEqual(0.25, estimate_qber(SiftedBatch([0, 0, 0, 0], [0, 1, 0, 0])))

  def test_empty(self):
    with self.assertRaises(InsufficientStatisticsError):
      estimate_qber(SiftedBatch([], []))

  def test_unequal_lengths(self):
    with self.assertRaises(ParameterError):
      SiftedBatch([0, 1], [0])


class StatisticsTests(SimulationTestCase):

  def test_invariants(self):
    with self.assertRaises(StatisticsError):
      ClassCounts(sent=10, clicked=5, sifted=2, errors=3)
    with self.assertRaises(StatisticsError):
      ClassCounts(sent=10, clicked=11)
    with self.assertRaises(StatisticsError):
      ClassCounts(sent=-1)

  def test_empty_rates(self):
    stats = DecoyStatistics()
    self.assertEqual(0.0, stats.gain(IntensityClass.U))
    self.assertEqual(0.0, stats.error_rate(IntensityClass.V))
    self.assertEqual(0.0, stats.y0)

  def test_merge(self):
    a = DecoyStatistics((ClassCounts(10, 4, 2, 1), ClassCounts(5, 1, 1, 0), ClassCounts(2, 0, 0, 0)))
    b = DecoyStatistics((ClassCounts(7, 3, 1, 0), ClassCounts(5, 2, 1, 1), ClassCounts(3, 1, 1, 1)))
    c = DecoyStatistics((ClassCounts(1, 1, 1, 0), ClassCounts(), ClassCounts(4, 0, 0, 0)))
    self.assertEqual((a + b) + c, a + (b + c))
    self.assertEqual(37, ((a + b) + c).n_pulses)
    self.assertAlmostEqual(7 / 17, (a + b).gain(IntensityClass.U))
    self.assertAlmostEqual(1 / 3, (a + b).error_rate(IntensityClass.U))

  def test_to_dict(self):
    d = DecoyStatistics((ClassCounts(10, 4, 2, 1), ClassCounts(), ClassCounts(5, 1, 1, 0))).to_dict()
    self.assertEqual({'u', 'v', 'vacuum', 'y0'}, set(d))
    self.assertEqual(0.4, d['u']['gain'])
    self.assertEqual(0.5, d['u']['qber'])
    self.assertEqual(0.2, d['y0'])


class RunSessionTests(SimulationTestCase):

  def test_noiseless(self):
    n = 10_000
    (result,) = run_session(_session(n), LOSSLESS)
    stats = result.statistics
    for cls in IntensityClass:
      if stats[cls].clicked:
        self.assertEqual(0, stats[cls].errors)
        self.assertEqual(0.0, estimate_qber(result.batches[cls]))
    clicked = sum(stats[c].clicked for c in IntensityClass)
    sifted = sum(stats[c].sifted for c in IntensityClass)
    self.assertWithinSigma(0.5, sifted, clicked)
    self.assertEqual(0, stats[IntensityClass.VACUUM].clicked)

  def test_conservation(self):
    n = 5000
    for result in run_session(_session(n, n_pairs=3), calibrated_link(0)):
      self.assertEqual(n, result.statistics.n_pulses)
      self.assertEqual(n, len(result.pulses))

  def test_empty_session(self):
    (result,) = run_session(_session(0), LOSSLESS)
    self.assertEqual(DecoyStatistics(), result.statistics)

  def test_deterministic(self):
    a = run_session(_session(20_000, n_pairs=2, seed=5), calibrated_link(0))
    b = run_session(_session(20_000, n_pairs=2, seed=5), calibrated_link(0))
    for ra, rb in zip(a, b):
      self.assertEqual(ra.statistics, rb.statistics)
      self.assertTrue(np.array_equal(ra.detections.click0, rb.detections.click0))
      self.assertTrue(np.array_equal(ra.batches[IntensityClass.U].bob_bits, rb.batches[IntensityClass.U].bob_bits))

  def test_worker_count_does_not_matter(self):
    params = ChannelParams(crosstalk_db=-10.0, det_efficiency=0.3)
    serial = run_session(_session(5000, n_pairs=2, seed=9), params)
    parallel = run_session(_session(5000, n_pairs=2, seed=9, workers=2), params)
    self.assertEqual([r.statistics for r in serial], [r.statistics for r in parallel])

  def test_per_pair_params(self):
    results = run_session(_session(20_000, n_pairs=2), [LOSSLESS, ChannelParams(det_efficiency=1e-3)])
    self.assertGreater(results[0].statistics.gain(IntensityClass.U), results[1].statistics.gain(IntensityClass.U))
    with self.assertRaises(ParameterError):
      run_session(_session(10, n_pairs=2), [LOSSLESS])

  def test_bob_prbs_bases(self):
    a = run_session(_session(5000, bob_basis_source='prbs'), LOSSLESS)[0]
    b = run_session(_session(5000, bob_basis_source='prbs'), LOSSLESS)[0]
    self.assertTrue(np.array_equal(a.detections.bases, b.detections.bases))
    self.assertWithinSigma(0.5, int(np.count_nonzero(a.detections.bases == BasisId.X)), 5000)

  def test_biased_bases(self):
    n = 50_000
    (result,) = run_session(_session(n, basis_prob_x=0.8), LOSSLESS)
    self.assertWithinSigma(0.8, int(np.count_nonzero(result.pulses.bases == BasisId.X)), n)
    self.assertWithinSigma(0.8, int(np.count_nonzero(result.detections.bases == BasisId.X)), n)

  def test_crosstalk_keys_differ(self):
    results = run_session(_session(20_000, n_pairs=2, seed=3), ChannelParams())
    k0 = results[0].batches[IntensityClass.U].alice_bits
    k1 = results[1].batches[IntensityClass.U].alice_bits
    n = min(len(k0), len(k1))
    self.assertFalse(np.array_equal(k0[:n], k1[:n]))

  def test_keys_independent_without_crosstalk(self):
    schedule = IntensitySchedule(u=0.9)
    params = ChannelParams(crosstalk_db=-math.inf)
    results = run_session(_session(300_000, n_pairs=2, seed=22, schedule=schedule), params)
    keys = [np.concatenate([r.batches[c].bob_bits for c in IntensityClass]) for r in results]
    n = min(len(k) for k in keys)
    self.assertGreaterEqual(n, 50_000)
    self.assertLess(abs(_correlation(keys[0], keys[1])), 4 / math.sqrt(n))
    for r in results:
      self.assertEqual(0, int(r.detections.leaked.sum()))

  @markers.heavy
  @markers.tags('acceptance')
  def test_key_independence(self):
    schedule = IntensitySchedule(u=0.9)
    results = run_session(_session(600_000, n_pairs=2, seed=21, schedule=schedule), ChannelParams())
    keys = []
    for r in results:
      keys.append(np.concatenate([r.batches[c].bob_bits for c in IntensityClass]))
    n = min(len(k) for k in keys)
    self.assertGreaterEqual(n, 100_000)
    self.assertLess(abs(_correlation(keys[0], keys[1])), 4 / math.sqrt(n))

  @markers.heavy
  @markers.tags('acceptance')
  def test_two_key_link(self):
    config = SessionConfig.from_seed(
      2024, 1_000_000, [IntensitySchedule(u=0.5), IntensitySchedule(u=0.45)])
    results = run_session(config, [calibrated_link(0), calibrated_link(1)])
    s0, s1 = results[0].statistics, results[1].statistics
    self.assertLess(abs(s0.gain(IntensityClass.U) - 3.32e-2), 0.1 * 3.32e-2)
    self.assertLess(abs(s0.gain(IntensityClass.V) - 1.7e-2), 0.15 * 1.7e-2)
    self.assertLess(abs(s1.gain(IntensityClass.U) - 1.67e-2), 0.1 * 1.67e-2)
    self.assertLess(abs(estimate_qber(results[0].batches[IntensityClass.U]) - 0.059), 0.01)
    self.assertLess(abs(estimate_qber(results[1].batches[IntensityClass.U]) - 0.047), 0.01)
    for s in (s0, s1):
      self.assertLess(s.error_rate(IntensityClass.U), 0.11)


class QberSeriesTests(SimulationTestCase):

  def test_windows_add_up(self):
    (result,) = run_session(_session(10_500), calibrated_link(0))
    series = qber_series(result.pulses, result.detections, 1000)
    self.assertEqual(11, len(series))
    self.assertEqual([0, 1000, 10_000], [series[0].start_pulse, series[1].start_pulse, series[-1].start_pulse])
    total = DecoyStatistics()
    for w in series:
      total = total + w.statistics
    self.assertEqual(result.statistics, total)
    self.assertEqual(accumulate_statistics(result.pulses, result.detections), total)

  def test_window_size(self):
    with self.assertRaises(ParameterError):
      qber_series([], [], 0)

"""
Line-delimited pulse log.

The first line is a header object:

    {"format_version": 1, "kind": "pulse_log", "config": {...}}

followed by one JSON object per pulse and core pair, pair-major:

    {"i": 0, "pair": 0, "class": "u", "a_basis": "X", "a_bit": 1,
     "b_basis": "Z", "click0": 0, "click1": 1, "tiebreak": 0, "leaked": 0}

Clicks are logged after crosstalk routing, and the receiver's tie-break
coin travels with them, so sifting a replayed log gives the same result
as sifting in memory.
"""

from typing import IO, Any, Dict, Iterator, List, Sequence, Tuple

import json
import logging

import numpy as np

from .errors import FORMAT_VERSION, ConfigError
from .qstate import BasisId
from .protocol import DetectionRecords, IntensityClass, PairResult, PulseRecords

__all__ = ['LOG_KIND', 'write_pulse_log', 'read_pulse_log']

logger = logging.getLogger(__name__)

LOG_KIND = 'pulse_log'

_BASIS_NAMES = tuple(b.name for b in BasisId)
_CLASS_LABELS = tuple(c.label for c in IntensityClass)
_RECORD_KEYS = (
  'i', 'pair', 'class', 'a_basis', 'a_bit', 'b_basis', 'click0', 'click1', 'tiebreak', 'leaked',
)


def _records(result: PairResult) -> Iterator[str]:
  a, b = result.pulses, result.detections
  for i in range(len(a)):
    yield (
      f'{{"i": {i}, "pair": {result.index}, "class": "{_CLASS_LABELS[a.classes[i]]}", '
      f'"a_basis": "{_BASIS_NAMES[a.bases[i]]}", "a_bit": {int(a.bits[i])}, '
      f'"b_basis": "{_BASIS_NAMES[b.bases[i]]}", '
      f'"click0": {int(b.click0[i])}, "click1": {int(b.click1[i])}, '
      f'"tiebreak": {int(b.tiebreak[i])}, "leaked": {int(b.leaked[i])}}}\n'
    )


def write_pulse_log(fp: IO[str], results: Sequence[PairResult], config: Dict[str, Any]) -> None:
  header = {'format_version': FORMAT_VERSION, 'kind': LOG_KIND, 'config': config}
  fp.write(json.dumps(header, sort_keys=True) + '\n')
  for result in results:
    fp.writelines(_records(result))
  logger.info("wrote pulse log for %d core pairs", len(results))


def _bad(lineno: int, message: str) -> ConfigError:
  return ConfigError(f"pulse log: {message}", key='pulse_log', line=lineno, column=1)


def read_pulse_log(fp: IO[str]) -> Tuple[Dict[str, Any], List[Tuple[PulseRecords, DetectionRecords]]]:
  """Return the header and one (pulses, detections) pair per core pair."""
  first = fp.readline()
  try:
    header = json.loads(first)
  except json.JSONDecodeError as exc:
    raise _bad(1, f"unreadable header ({exc.msg})") from exc
  if not isinstance(header, dict) or header.get('kind') != LOG_KIND:
    raise _bad(1, "missing pulse_log header")
  if header.get('format_version') != FORMAT_VERSION:
    raise _bad(1, f"unsupported format_version {header.get('format_version')!r}")
  config = header.get('config')
  if not isinstance(config, dict):
    raise _bad(1, "header has no config object")
  session = config.get('session')
  n_pairs = session.get('n_core_pairs') if isinstance(session, dict) else None
  if n_pairs is not None and (isinstance(n_pairs, bool) or not isinstance(n_pairs, int) or n_pairs < 1):
    raise _bad(1, f"header n_core_pairs must be a positive integer, got {n_pairs!r}")

  columns: Dict[int, Dict[str, list]] = {}
  for lineno, line in enumerate(fp, start=2):
    if not line.strip():
      continue
    try:
      rec = json.loads(line)
      pair, i = int(rec['pair']), int(rec['i'])
      values = {
        'class': _CLASS_LABELS.index(rec['class']),
        'a_basis': _BASIS_NAMES.index(rec['a_basis']),
        'b_basis': _BASIS_NAMES.index(rec['b_basis']),
      }
      for key in ('a_bit', 'click0', 'click1', 'tiebreak', 'leaked'):
        values[key] = int(rec[key])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
      raise _bad(lineno, f"malformed record ({exc})") from exc
    if pair < 0 or (n_pairs is not None and pair >= n_pairs):
      raise _bad(lineno, f"record for core pair {pair} outside the logged n_core_pairs={n_pairs}")
    cols = columns.setdefault(pair, {k: [] for k in _RECORD_KEYS})
    if i != len(cols['i']):
      raise _bad(lineno, f"pulse index {i} out of sequence for pair {pair}")
    cols['i'].append(i)
    for key, value in values.items():
      cols[key].append(value)

  if n_pairs is None:
    n_pairs = max(columns) + 1 if columns else 0
  pairs = []
  for k in range(n_pairs):
    cols = columns.get(k, {key: [] for key in _RECORD_KEYS})
    pulses = PulseRecords(
      bits=np.array(cols['a_bit'], dtype=np.uint8),
      bases=np.array(cols['a_basis'], dtype=np.uint8),
      classes=np.array(cols['class'], dtype=np.uint8),
      core_pair_index=k,
    )
    detections = DetectionRecords(
      click0=np.array(cols['click0'], dtype=bool),
      click1=np.array(cols['click1'], dtype=bool),
      bases=np.array(cols['b_basis'], dtype=np.uint8),
      tiebreak=np.array(cols['tiebreak'], dtype=np.uint8),
      leaked=np.array(cols['leaked'], dtype=np.int64),
    )
    pairs.append((pulses, detections))
  logger.info("read pulse log: %d core pairs", len(pairs))
  return header, pairs

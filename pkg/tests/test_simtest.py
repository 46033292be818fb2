import unittest

from .simtest.unittest import SimulationTestCase
from .simtest.markers import skip_tags, tags


def _run(method) -> unittest.TestResult:
  case = type('Case', (unittest.TestCase,), {'test_it': method})('test_it')
  result = unittest.TestResult()
  case.run(result)
  return result


class SkipTagsTests(SimulationTestCase):

  def test_parse(self):
    self.assertEqual(frozenset(), skip_tags({}))
    self.assertEqual({'acceptance', 'table'}, skip_tags({'SDMQKD_SKIP_TAGS': 'acceptance, table,'}))
    self.assertEqual({'heavy'}, skip_tags({'SDMQKD_FAST_TESTS': '1'}))
    self.assertEqual(frozenset(), skip_tags({'SDMQKD_FAST_TESTS': '0'}))


class TagsTests(SimulationTestCase):

  def test_selected_tag_skips(self):
    @tags('acceptance', skipped=frozenset({'acceptance'}))
    def method(case):
      pass
    result = _run(method)
    self.assertEqual(1, len(result.skipped))
    self.assertEqual(1, result.testsRun)

  def test_other_tags_run(self):
    calls = []

    @tags('table', skipped=frozenset({'acceptance'}))
    def method(case):
      calls.append(1)
    self.assertEqual(('table',), method.__tags__)
    result = _run(method)
    self.assertEqual(0, len(result.skipped))
    self.assertEqual([1], calls)

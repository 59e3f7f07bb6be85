from unittest import TestCase

from core.models import Box
from features.selftest.schemas import CheckResult
from features.selftest.service import (
    GRAD_CASES,
    check_gradients,
    check_identities,
    check_memory,
    check_metrics,
    pixel_iou,
)


class SelftestTests(TestCase):
    def _assert_all_pass(self, results):
        failed = [r.line() for r in results if not r.passed]
        self.assertEqual(failed, [])

    def test_gradient_checks(self):
        results = check_gradients(0)
        self.assertGreaterEqual(len(results), len(GRAD_CASES))
        self._assert_all_pass(results)

    def test_identity_checks(self):
        self._assert_all_pass(check_identities(0))

    def test_memory_checks(self):
        self._assert_all_pass(check_memory(0))

    def test_metric_checks(self):
        self._assert_all_pass(check_metrics(0))

    def test_pixel_oracle(self):
        self.assertAlmostEqual(pixel_iou(Box(x=0, y=0, w=2, h=2), Box(x=1, y=1, w=2, h=2)), 1.0 / 7.0)

    def test_result_line(self):
        self.assertEqual(CheckResult(group="memory", name="roi", passed=True).line(), "ok   memory/roi")
        self.assertEqual(
            CheckResult(group="grad", name="exp", passed=False, detail="3.1e-02").line(), "FAIL grad/exp 3.1e-02"
        )

    def test_stmt_gradient_reaches_joint_inputs(self):
        by_name = {r.name: r for r in check_gradients(0)}
        self.assertTrue(by_name["stmt_forward"].passed, by_name["stmt_forward"].line())

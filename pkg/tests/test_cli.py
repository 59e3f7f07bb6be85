import os
import tempfile
from pathlib import Path
from unittest import TestCase, mock

import pandas as pd

from core.models import Box
from core.utils.config import save_config, save_model
from features.data_io.sequence import GROUNDTRUTH_FILE, read_boxes, write_boxes
from features.data_io.synth import SynthSpec
from features.selftest.service import tiny_config
from main import main


class CliTests(TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)
        self.spec = save_model(
            SynthSpec(length=4, width=64, height=48, min_target=8, max_target=12), self.root / "spec.cfg"
        )
        self.config = save_config(tiny_config(train_steps=1, batch_size=1), self.root / "tiny.cfg")

    def tearDown(self):
        self._tmp.cleanup()

    def test_usage_errors_exit_two(self):
        self.assertEqual(main(["track", "--out", str(self.root / "r.txt")]), 2)
        self.assertEqual(main(["unknown"]), 2)

    def test_missing_sequence_exits_one(self):
        code = main(["track", "--seq", str(self.root / "nope"), "--out", str(self.root / "r.txt")])
        self.assertEqual(code, 1)

    def test_synth_then_track(self):
        seq = self.root / "seq"
        self.assertEqual(main(["synth", "--spec", str(self.spec), "--seed", "3", "--out", str(seq)]), 0)
        self.assertTrue((seq / GROUNDTRUTH_FILE).is_file())

        out = self.root / "results.txt"
        dump = self.root / "dump"
        code = main(["track", "--config", str(self.config), "--seq", str(seq), "--out", str(out), "--dump-cache", str(dump)])
        self.assertEqual(code, 0)
        boxes = read_boxes(out)
        self.assertEqual(len(boxes), 4)
        self.assertEqual(boxes[0], read_boxes(seq / GROUNDTRUTH_FILE)[0])
        self.assertTrue((dump / "cache.bin").is_file())

    def test_track_several_sequences_into_directory(self):
        data = self.root / "data"
        self.assertEqual(main(["synth", "--spec", str(self.spec), "--out", str(data), "--count", "2"]), 0)
        out = self.root / "results"
        args = ["track", "--config", str(self.config), "--out", str(out), "--jobs", "2"]
        for name in ("seq_0001", "seq_0002"):
            args += ["--seq", str(data / name)]
        self.assertEqual(main(args), 0)
        self.assertEqual(sorted(p.name for p in out.iterdir()), ["seq_0001.txt", "seq_0002.txt"])

    def test_eval_perfect_trace(self):
        gt = self.root / "gt.txt"
        truth = [Box(x=10 + i, y=8, w=12, h=9) for i in range(3)]
        write_boxes(gt, truth)
        results = self.root / "pred.txt"
        write_boxes(results, truth)
        report = self.root / "report.csv"
        self.assertEqual(main(["eval", "--results", str(results), "--gt", str(gt), "--out", str(report)]), 0)
        lines = report.read_text(encoding="utf-8").splitlines()
        self.assertEqual(lines[0], "seq,n_frames,PR20,NPR,SR")
        self.assertEqual(lines[1], "pred,2,1.000,1.000,1.000")

    def test_train_writes_model(self):
        data = self.root / "data"
        main(["synth", "--spec", str(self.spec), "--out", str(data), "--count", "1"])
        out = self.root / "run"
        self.assertEqual(main(["train", "--config", str(self.config), "--data", str(data), "--out", str(out)]), 0)
        self.assertTrue((out / "model.bin").is_file())
        self.assertEqual(len(pd.read_csv(out / "loss.csv")), 1)

    def test_selftest_passes(self):
        self.assertEqual(main(["selftest"]), 0)

    def test_invalid_environment_exits_one(self):
        with mock.patch.dict(os.environ, {"STMT_JOBS": "many"}):
            self.assertEqual(main(["selftest"]), 1)

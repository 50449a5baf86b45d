import contextlib
import io
import json
import os
import tempfile
import unittest

from qtlink.main import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main

LOSSY = {
    "name": "lossy",
    "seed": 3,
    "duration": 10.0,
    "protocol": "teleport",
    "source": {"pair_probability": 0.1, "detection_efficiency": 0.236},
    "channels": [{
        "name": "link",
        "geometry": {"distance": 97e3, "divergence": 3.6e-5, "receiver_aperture": 0.4},
        "loss_db": 120.0,
    }],
    "detectors": {"bob": {}},
}


def invoke(*argv):
    stdout, stderr = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
        code = main(["-q", *argv])
    return code, stdout.getvalue(), stderr.getvalue()


def error_of(stderr):
    lines = [line for line in stderr.splitlines() if line.startswith('{"error"')]
    return json.loads(lines[-1])["error"]


class TestMain(unittest.TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)

    def path(self, *parts):
        return os.path.join(self.directory.name, *parts)

    def write_scenario(self, data):
        path = self.path("scenario.json")
        with open(path, "w") as f:
            json.dump(data, f)
        return path

    def test_validate_echoes_resolved_config(self):
        code, stdout, _ = invoke("validate", "-s", "qinghai-97km", "--seed", "9")
        self.assertEqual(code, EXIT_OK)
        echoed = json.loads(stdout)
        self.assertEqual(echoed["seed"], 9)
        self.assertEqual(echoed["protocol"], "teleport")

    def test_config_error(self):
        path = self.write_scenario({**LOSSY, "seed": -1})
        code, stdout, stderr = invoke("validate", "-s", path)
        self.assertEqual(code, EXIT_CONFIG)
        self.assertEqual(stdout, "")
        error = error_of(stderr)
        self.assertEqual(error["kind"], "config")
        self.assertEqual(error["path"], "seed")

    def test_missing_scenario(self):
        code, _, stderr = invoke("teleport", "-s", self.path("absent.json"))
        self.assertEqual(code, EXIT_CONFIG)
        self.assertEqual(error_of(stderr)["path"], "<file>")

    def test_verb_is_required(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit):
                main(["-s", "qinghai-97km"])

    def test_runs_are_reproducible(self):
        for verb in ("budget", "sync"):
            first, second = self.path(verb, "a"), self.path(verb, "b")
            self.assertEqual(invoke(verb, "-s", "qinghai-97km", "-o", first)[0], EXIT_OK)
            self.assertEqual(invoke(verb, "-s", "qinghai-97km", "-o", second)[0], EXIT_OK)
            for name in os.listdir(first):
                with open(os.path.join(first, name), "rb") as a, open(os.path.join(second, name), "rb") as b:
                    self.assertEqual(a.read(), b.read(), msg=f"{verb}/{name}")

    def test_budget_report(self):
        code, stdout, _ = invoke("budget", "-s", "qinghai-97km")
        self.assertEqual(code, EXIT_OK)
        report = json.loads(stdout)
        self.assertEqual(report["protocol"], "budget")
        self.assertNotIn("wall_time", report["provenance"])
        turbulent = report["results"]["gangcha-guanjing"]["turbulent"]
        self.assertAlmostEqual(turbulent["total_db"], 52.9, delta=0.1)

    def test_csv_output(self):
        code, stdout, _ = invoke("budget", "-s", "qinghai-97km", "--format", "csv")
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(stdout.startswith("channel,variant,component,db\n"))

    def test_wall_time_is_opt_in(self):
        code, stdout, _ = invoke("budget", "-s", "qinghai-97km", "--record-wall-time")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("wall_time", json.loads(stdout)["provenance"])

    def test_two_link_report_carries_locality(self):
        out = self.path("chsh")
        self.assertEqual(invoke("chsh", "-s", "haixin-two-link", "-o", out)[0], EXIT_OK)
        with open(os.path.join(out, "report.json")) as f:
            report = json.load(f)
        locality = report["results"]["locality"]
        self.assertAlmostEqual(locality["light_time_between_receivers"], 339.6, places=1)
        self.assertTrue(os.path.exists(os.path.join(out, "chsh.csv")))

    def test_insufficient_statistics(self):
        out = self.path("lossy")
        code, _, _ = invoke("teleport", "-s", self.write_scenario(LOSSY), "-o", out)
        self.assertEqual(code, EXIT_RUNTIME)
        with open(os.path.join(out, "report.json")) as f:
            report = json.load(f)
        self.assertIsNone(report["results"]["average_fidelity"])
        self.assertTrue(report["results"]["insufficient_statistics"])

    def test_unwritable_output(self):
        blocker = self.path("not-a-directory")
        with open(blocker, "w") as f:
            f.write("taken")
        code, stdout, stderr = invoke("budget", "-s", "qinghai-97km", "-o", blocker)
        self.assertEqual(code, EXIT_RUNTIME)
        self.assertEqual(stdout, "")
        self.assertEqual(error_of(stderr)["kind"], "output")

    def test_list_presets(self):
        code, stdout, _ = invoke("--list-presets")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("qinghai-97km", stdout)
        self.assertIn("haixin-two-link", stdout)


if __name__ == "__main__":
    unittest.main()

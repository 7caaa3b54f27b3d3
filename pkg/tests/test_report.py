import csv
import json

import numpy as np

from inverse_renderer.autodiff import GradCheckReport
from inverse_renderer.metrics import Evaluation, ViewMetrics
from inverse_renderer.renderer import RenderResult
from inverse_renderer.report import (
    TRACE_FIELDS,
    format_eval_report,
    print_eval_report,
    print_fit_summary,
    print_gradcheck_report,
    print_render_summary,
    save_eval_report,
    save_trace_csv,
    save_trace_json,
)
from inverse_renderer.training import FitResult, StepRecord


def _trace():
    return [StepRecord(0, 0.5, 0.1, 0.02, 0.6, 3.0, 4), StepRecord(1, 0.3, 0.1, 0.01, 0.4, 2.5, 2)]


def _evaluation():
    return Evaluation([ViewMetrics(0, 0.01, 20.0, 0.9, albedo_mse=0.02, roughness_mse=0.03, roughness_are=0.1)], env_mse=0.05)


def test_trace_files(tmp_path):
    json_path, csv_path = tmp_path / "trace.json", tmp_path / "trace.csv"
    save_trace_json(_trace(), str(json_path))
    save_trace_csv(_trace(), str(csv_path))
    payload = json.loads(json_path.read_text())
    assert payload["steps"] == 2 and payload["trace"][1]["total"] == 0.4
    with open(csv_path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == TRACE_FIELDS
    assert rows[0]["boundary_flips"] == "4"


def test_format_eval_report():
    text = format_eval_report(_evaluation())
    assert "psnr" in text and "20.00" in text
    assert "env map mse" in text and "0.050000" in text
    assert "lpips" in text and "n/a" in text


def test_save_eval_report_text_and_json(tmp_path):
    text_path, json_path = tmp_path / "report.txt", tmp_path / "report.json"
    save_eval_report(_evaluation(), str(text_path))
    save_eval_report(_evaluation(), str(json_path))
    assert text_path.read_text() == format_eval_report(_evaluation())
    assert json.loads(json_path.read_text())["summary"]["env_mse"] == 0.05


def test_plain_output(capsys):
    result = RenderResult(np.ones((2, 3, 3)), np.array([[True, False, True], [False, False, True]]), np.zeros((2, 3, 3)), np.zeros((2, 3)), {"rays": 6, "hits": 3, "occluded": 5})
    print_render_summary(result, "out.pfm", colored=False)
    print_fit_summary(FitResult(None, _trace()), colored=False)
    print_gradcheck_report(GradCheckReport(max_rel_err=2e-4, worst_param="env.amplitude[3]", checked=12), 1e-3, colored=False)
    print_eval_report(_evaluation(), colored=False)
    out = capsys.readouterr().out
    assert "Resolution:    3x2" in out and "occluded: 5" in out
    assert "Best Loss:    0.400000 (step 1)" in out
    assert "PASS" in out and "env.amplitude[3]" in out
    assert "mean psnr" in out


def test_colored_output_mentions_key_values(capsys):
    print_fit_summary(FitResult(None, []), colored=True)
    print_gradcheck_report(GradCheckReport(max_rel_err=0.5, worst_param="geometry.sphere1.radius[0]", checked=1), 1e-3, colored=True)
    out = capsys.readouterr().out
    assert "No training steps" in out
    assert "FAIL" in out

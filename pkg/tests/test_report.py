"""Figure rendering from results directories."""

import json

from lotion_lab.harness import parse_spec_dict, run_sweep
from lotion_lab.report import render_report


def test_curves_figure_written(tmp_path):
    spec = parse_spec_dict(
        {
            "testbed": "quadratic",
            "d": 12,
            "methods": ["ptq", "qat", "lotion"],
            "lr_grid": [0.1, 0.3],
            "total_steps": 60,
            "eval_every": 20,
            "rr_eval_seeds": 2,
        }
    )
    out = tmp_path / "run"
    run_sweep(spec, workers=1, out_dir=out)
    written = render_report(out)
    assert any("curves_quadratic_int4" in p.name for p in written)
    for p in written:
        assert p.exists() and p.stat().st_size > 1000


def test_k_sweep_figure_written(tmp_path):
    spec = parse_spec_dict(
        {
            "testbed": "twolayer",
            "d": 12,
            "k_list": [1, 2, 4],
            "methods": ["qat", "lotion"],
            "lr_grid": [0.1],
            "total_steps": 40,
            "eval_every": 20,
            "rr_eval_seeds": 2,
        }
    )
    out = tmp_path / "run"
    run_sweep(spec, workers=1, out_dir=out)
    written = render_report(out)
    names = {p.name for p in written}
    assert "ksweep_twolayer_int4.png" in names


def test_gt_sweep_report(tmp_path):
    spec = parse_spec_dict({"testbed": "gt-sweep", "d": 16, "k_list": [1, 4], "rr_eval_seeds": 2})
    out = tmp_path / "run"
    run_sweep(spec, workers=1, out_dir=out)
    written = render_report(out)
    # single-step rows cannot make curves, but the k sweep renders
    assert any(p.name.startswith("ksweep_gt-sweep") for p in written)

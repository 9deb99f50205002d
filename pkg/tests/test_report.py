import json

import pytest

from dgqnet.errors import DataError
from dgqnet.metrics import METRIC_KEYS
from dgqnet.report import (ROC_HEADER, emit_report, load_metrics_file,
                           load_roc_file, render_metric_bars,
                           render_roc_overlay, render_summary)


def entry(name="model_a", auc=0.9732, with_ci=True):
    data = dict(name=name, accuracy=0.9667, auc=auc, f1=0.9666,
                precision=0.9672, recall=0.9667, sensitivity=0.9516,
                specificity=0.9828)
    if with_ci:
        data["ci"] = {k: [max(data[k] - 0.03, 0.0), min(data[k] + 0.02, 1.0)]
                      for k in METRIC_KEYS if data[k] is not None}
    data["confusion"] = dict(tn=57, fp=1, fn=3, tp=59)
    return data


def roc_points():
    return [(0.0, 0.0), (0.0, 0.5), (0.2, 0.5), (0.2, 1.0), (1.0, 1.0)]


def write_metrics(path, data):
    path.write_text(json.dumps(data) + "\n", encoding="utf-8")
    return path


def write_roc(path, points, header=None):
    lines = [",".join(header or ROC_HEADER)]
    lines += [f"{fpr},{tpr},0.5" for fpr, tpr in points]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestLoadMetricsFile:
    def test_round_trip(self, tmp_path):
        path = write_metrics(tmp_path / "m.json", entry())
        loaded = load_metrics_file(path)
        assert loaded["name"] == "model_a"
        assert loaded["precision"] == 0.9672
        assert loaded["ci"]["auc"] == entry()["ci"]["auc"]

    def test_auc_null_allowed(self, tmp_path):
        path = write_metrics(tmp_path / "m.json", entry(auc=None, with_ci=False))
        assert load_metrics_file(path)["auc"] is None

    def test_malformed_json_names_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(DataError, match="bad.json"):
            load_metrics_file(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="cannot read"):
            load_metrics_file(tmp_path / "absent.json")

    def test_non_object(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(DataError, match="JSON object"):
            load_metrics_file(path)

    @pytest.mark.parametrize("key", ["name", "accuracy", "specificity"])
    def test_missing_key_named(self, tmp_path, key):
        data = entry()
        del data[key]
        path = write_metrics(tmp_path / "m.json", data)
        with pytest.raises(DataError, match=key):
            load_metrics_file(path)

    def test_bool_metric_rejected(self, tmp_path):
        data = entry()
        data["accuracy"] = True
        path = write_metrics(tmp_path / "m.json", data)
        with pytest.raises(DataError, match="accuracy"):
            load_metrics_file(path)

    def test_null_non_auc_rejected(self, tmp_path):
        data = entry()
        data["f1"] = None
        path = write_metrics(tmp_path / "m.json", data)
        with pytest.raises(DataError, match="'f1'"):
            load_metrics_file(path)

    @pytest.mark.parametrize("bounds", [[0.9], [0.9, 0.95, 0.99], "wide",
                                        [0.9, "hi"], [0.9, True]])
    def test_bad_ci_entry(self, tmp_path, bounds):
        data = entry()
        data["ci"] = {"auc": bounds}
        path = write_metrics(tmp_path / "m.json", data)
        with pytest.raises(DataError, match="ci|'auc'"):
            load_metrics_file(path)


class TestLoadRocFile:
    def test_round_trip_uses_stem_as_name(self, tmp_path):
        path = write_roc(tmp_path / "dgq_full.csv", roc_points())
        name, points = load_roc_file(path)
        assert name == "dgq_full"
        assert points == roc_points()

    def test_wrong_header(self, tmp_path):
        path = write_roc(tmp_path / "r.csv", roc_points(),
                         header=["tpr", "fpr", "threshold"])
        with pytest.raises(DataError, match="expected header fpr,tpr,threshold"):
            load_roc_file(path)

    def test_bad_row_names_file_and_line(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("fpr,tpr,threshold\n0,0,inf\nok,0.5,0.5\n",
                        encoding="utf-8")
        with pytest.raises(DataError, match=r"r.csv:3"):
            load_roc_file(path)

    def test_short_row_rejected(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("fpr,tpr,threshold\n0.5\n", encoding="utf-8")
        with pytest.raises(DataError, match="bad ROC row"):
            load_roc_file(path)

    def test_single_point_rejected(self, tmp_path):
        path = write_roc(tmp_path / "r.csv", [(0.0, 0.0)])
        with pytest.raises(DataError, match="at least 2 points"):
            load_roc_file(path)

    def test_inf_threshold_column_accepted(self, tmp_path):
        # evaluate writes the first ROC row with an infinite threshold
        path = tmp_path / "r.csv"
        path.write_text("fpr,tpr,threshold\n0,0,inf\n1,1,0.1\n",
                        encoding="utf-8")
        _, points = load_roc_file(path)
        assert points == [(0.0, 0.0), (1.0, 1.0)]


class TestSvgRendering:
    def test_byte_identical_across_calls(self):
        entries = [entry("a"), entry("b", auc=0.91)]
        assert render_metric_bars(entries) == render_metric_bars(entries)
        curves = [("a", roc_points())]
        assert render_roc_overlay(curves) == render_roc_overlay(curves)

    def test_canvas_and_viewbox(self):
        svg = render_metric_bars([entry()])
        assert 'width="800"' in svg
        assert 'height="600"' in svg
        assert 'viewBox="0 0 800 600"' in svg
        assert svg.startswith("<svg ")
        assert svg.endswith("</svg>\n")

    def test_bar_count_and_labels(self):
        svg = render_metric_bars([entry()])
        # 1 background + 7 bars + 1 legend swatch
        assert svg.count("<rect ") == 9
        assert ">0.9672<" in svg  # values printed to 4 decimals
        assert ">precision<" in svg

    def test_none_auc_skips_one_bar(self):
        with_auc = render_metric_bars([entry(with_ci=False)])
        without = render_metric_bars([entry(auc=None, with_ci=False)])
        assert without.count("<rect ") == with_auc.count("<rect ") - 1

    def test_ci_whiskers_present_only_with_ci(self):
        plain = render_metric_bars([entry(with_ci=False)])
        with_ci = render_metric_bars([entry()])
        # each whisker adds a stem and two caps
        assert with_ci.count('stroke="#333333"') == 21
        assert plain.count('stroke="#333333"') == 0

    def test_name_escaped(self):
        svg = render_metric_bars([entry(name="a<b&c")])
        assert "a&lt;b&amp;c" in svg
        assert "a<b" not in svg

    def test_roc_unit_box_and_diagonal(self):
        svg = render_roc_overlay([("a", roc_points())])
        # the [0,1]x[0,1] region maps to a 460px box at (80, 60)
        assert ('<rect x="80.00" y="60.00" width="460.00" height="460.00" '
                'fill="none"') in svg
        assert 'stroke-dasharray="6,4"' in svg
        assert "False positive rate" in svg
        assert "True positive rate" in svg
        assert "rotate(-90" in svg

    def test_roc_polyline_endpoints(self):
        svg = render_roc_overlay([("a", roc_points())])
        assert '<polyline points="80.00,520.00' in svg  # (0,0) corner
        assert '540.00,60.00"' in svg  # (1,1) corner

    def test_roc_one_polyline_per_curve(self):
        svg = render_roc_overlay([("a", roc_points()), ("b", roc_points())])
        assert svg.count("<polyline ") == 2


class TestSummary:
    def test_table_structure(self):
        text = render_summary([entry("a"), entry("b", auc=None)])
        lines = text.splitlines()
        assert lines[0] == "# Evaluation summary"
        header = lines[2]
        for key in METRIC_KEYS:
            assert key in header
        assert "| a | 0.9667 |" in text
        assert "| n/a |" in text  # missing AUC shows as n/a
        assert "## a" in text and "## b" in text

    def test_ci_table(self):
        text = render_summary([entry("a")])
        assert "| metric | point | lower | upper |" in text
        assert "| precision | 0.9672 | 0.9372 | 0.9872 |" in text

    def test_confusion_table(self):
        text = render_summary([entry("a")])
        assert "| true 0 | 57 | 1 |" in text
        assert "| true 1 | 3 | 59 |" in text
        assert "| predicted 0 | predicted 1 |" in text

    def test_no_ci_no_table(self):
        text = render_summary([entry("a", with_ci=False)])
        assert "| metric | point | lower | upper |" not in text


class TestEmitReport:
    def test_writes_all_outputs(self, tmp_path):
        metrics = write_metrics(tmp_path / "a.json", entry("a"))
        roc = write_roc(tmp_path / "a_roc.csv", roc_points())
        out = emit_report([metrics], [roc], tmp_path / "report")
        assert out["bars"].name == "metrics.svg"
        assert out["roc"].name == "roc.svg"
        assert out["summary"].name == "summary.md"
        for path in out.values():
            assert path.exists()
            assert path.stat().st_size > 0

    def test_roc_optional(self, tmp_path):
        metrics = write_metrics(tmp_path / "a.json", entry("a"))
        out = emit_report([metrics], out_dir=tmp_path / "report")
        assert out["roc"] is None
        assert not (tmp_path / "report" / "roc.svg").exists()

    def test_deterministic_outputs(self, tmp_path):
        metrics = write_metrics(tmp_path / "a.json", entry("a"))
        roc = write_roc(tmp_path / "a_roc.csv", roc_points())
        first = emit_report([metrics], [roc], tmp_path / "r1")
        second = emit_report([metrics], [roc], tmp_path / "r2")
        for key in ("bars", "roc", "summary"):
            assert first[key].read_bytes() == second[key].read_bytes()

    def test_empty_inputs_rejected(self, tmp_path):
        with pytest.raises(DataError, match="at least one"):
            emit_report([], out_dir=tmp_path)

"""Integration tests - Test toàn bộ workflow synth -> compute -> evaluate"""
import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from app.cli.main import cli
from app.services.corpus_service import CorpusService
from app.services.indicator_service import IndicatorService
from app.services.report_service import ReportService
from app.services.stats_service import StatsService
from app.services.synth_service import SynthService, preset_spec
from core.schemas import INDICATOR_COLUMNS


class TestFlattening:
    """Hai văn hoá trích dẫn, 100,000 bài: raw khác nhau, chỉ số chuẩn hoá gần như bằng nhau"""

    @pytest.fixture(scope="class")
    def table(self):
        spec = preset_spec("two-cultures", papers_per_field_year=12500)
        synthetic = SynthService(spec).generate_corpus(seed=2013)
        corpus = synthetic.corpus
        assert synthetic.focal_count == 100_000
        index = CorpusService(corpus.config).build_citation_index(corpus)
        frame = IndicatorService(corpus, index).compute().frame
        means = StatsService.category_indicator_means(frame, corpus, INDICATOR_COLUMNS)
        return means.pivot(index="category", columns="indicator", values="mean")

    def test_raw_citations_differ(self, table):
        assert table.loc["medicine", "citations_3y"] >= 1.4 * table.loc["engineering", "citations_3y"]

    def test_mncs_flattened(self, table):
        for field in ("engineering", "medicine"):
            assert 0.95 <= table.loc[field, "mncs"] <= 1.05

    def test_hazen_flattened(self, table):
        for field in ("engineering", "medicine"):
            assert 49.0 <= table.loc[field, "hazen"] <= 51.0

    def test_sncs3_flattened(self, table):
        ratio = table.loc["medicine", "sncs3"] / table.loc["engineering", "sncs3"]
        assert abs(ratio - 1.0) <= 0.10


class TestEvaluationShape:
    """Bảng correlation / regression / margins trên synthetic run mặc định"""

    @pytest.fixture(scope="class")
    def report(self):
        service = SynthService(preset_spec("two-cultures"))
        synthetic = service.generate_corpus(seed=42)
        recommendations = service.generate_recommendations(synthetic)
        corpus = synthetic.corpus
        index = CorpusService(corpus.config).build_citation_index(corpus)
        table = IndicatorService(corpus, index).compute().frame
        return StatsService().evaluate(table, recommendations, INDICATOR_COLUMNS, reps=50, seed=42)

    def test_nine_indicators(self, report):
        assert [c.indicator for c in report.correlations] == INDICATOR_COLUMNS
        assert len(report.regressions) == 9
        assert len(report.margins) == 9

    def test_first_only_smaller(self, report):
        row = report.correlations[0]
        assert row.n_first < row.n_all

    def test_regression_table(self, report):
        assert report.metadata["reference_category"] == "Good"
        mncs = report.regressions[1]
        assert mncs.indicator == "mncs"
        assert mncs.b_ex > mncs.b_vg > 0
        assert mncs.stars("ex") == "***"

    def test_correlations_positive(self, report):
        for row in report.correlations:
            assert row.rho_all > 0
            assert row.ci_all_low < row.rho_all < row.ci_all_high

    def test_margins_plot_ready(self, report, tmp_path):
        paths = ReportService(tmp_path).write_evaluation(report)
        margins = pd.read_csv(paths["margins"])
        assert len(margins) == 27
        assert margins["level"].tolist() == [1, 2, 3] * 9
        assert margins["indicator"].unique().tolist() == INDICATOR_COLUMNS
        assert "***" in paths["txt"].read_text(encoding="utf-8")


class TestTenThousandPerField:
    """Two-cultures với 2,500 bài mỗi field-year (10,000 bài mỗi field)"""

    @pytest.fixture(scope="class")
    def synthetic(self):
        return SynthService(preset_spec("two-cultures", papers_per_field_year=2500)).generate_corpus(seed=42)

    @pytest.fixture(scope="class")
    def index(self, synthetic):
        corpus = synthetic.corpus
        return CorpusService(corpus.config).build_citation_index(corpus)

    @pytest.fixture(scope="class")
    def full_counts(self, synthetic, index):
        corpus = synthetic.corpus
        upper = np.full(corpus.n_publications, corpus.horizon_year)
        return pd.Series(index.window_counts(corpus.years, upper), index=corpus.pub_ids)

    @pytest.fixture(scope="class")
    def joined(self, synthetic, index):
        recommendations = SynthService(synthetic.spec).generate_recommendations(synthetic)
        table = IndicatorService(synthetic.corpus, index).compute().frame
        return recommendations.merge(table, on="pub_id")

    def test_planted_field_means(self, synthetic, full_counts):
        corpus = synthetic.corpus
        focal = pd.DataFrame({
            "field": [corpus.categories[p][0] for p in range(synthetic.focal_count)],
            "citations": full_counts.to_numpy()[: synthetic.focal_count],
        })
        sizes = focal.groupby("field").size()
        means = focal.groupby("field")["citations"].mean()
        for profile in synthetic.spec.fields:
            assert sizes[profile.label] == 10_000
            assert means[profile.label] == pytest.approx(profile.citation_rate, rel=0.05)

    def test_uncoupled_scores(self, synthetic, full_counts):
        recommendations = SynthService(synthetic.spec).generate_recommendations(synthetic, coupling=0.0)
        assert len(recommendations) >= 10_000
        citations = full_counts.loc[recommendations["pub_id"]].to_numpy()
        assert abs(StatsService.spearman(citations, recommendations["score"])) < 0.05

    @pytest.mark.parametrize("indicator", INDICATOR_COLUMNS)
    def test_all_records_correlate_higher(self, joined, indicator):
        # rater thêm đồng thuận với rater đầu và tập trung ở bài được đánh giá cao
        first = StatsService.dedup_first_recommendation(joined)
        rho_all = StatsService.spearman(joined[indicator], joined["score"])
        rho_first = StatsService.spearman(first[indicator], first["score"])
        assert rho_all > rho_first


def test_cli_pipeline(tmp_path):
    """synth -> compute -> evaluate qua CLI"""
    runner = CliRunner()
    synth_dir, table_dir, eval_dir = tmp_path / "synth", tmp_path / "table", tmp_path / "eval"

    result = runner.invoke(cli, [
        "synth", "--preset", "humanities-stress", "--seed", "9", "--papers-per-field-year", "60",
        "--out", str(synth_dir),
    ])
    assert result.exit_code == 0, result.output

    result = runner.invoke(cli, [
        "compute", "--publications", str(synth_dir / "publications.tsv"),
        "--references", str(synth_dir / "references.tsv"), "--out", str(table_dir), "--threads", "2",
    ])
    assert result.exit_code == 0, result.output

    result = runner.invoke(cli, [
        "evaluate", "--table", str(table_dir / "indicators.jsonl"),
        "--recommendations", str(synth_dir / "recommendations.tsv"),
        "--out", str(eval_dir), "--seed", "9", "--reps", "20", "--first-only",
    ])
    assert result.exit_code == 0, result.output

    report = json.loads((eval_dir / "evaluation.json").read_text(encoding="utf-8"))
    assert report["metadata"]["regression_sample"] == "first_only"
    assert report["metadata"]["orphan_recommendations"] == 0
    meta = json.loads((eval_dir / "run_meta.json").read_text(encoding="utf-8"))
    assert meta["config"]["seed"] == 9

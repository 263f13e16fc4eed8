"""Test cases cho SynthService"""
import json

import numpy as np
import pytest
import yaml

from app.services.corpus_service import CorpusService
from app.services.stats_service import StatsService, check_records
from app.services.synth_service import SynthService, load_generator_spec, preset_spec
from core.schemas import CorpusConfig, GeneratorSpec


@pytest.fixture
def small_spec():
    return preset_spec("two-cultures", papers_per_field_year=40)


@pytest.fixture
def small_synthetic(small_spec):
    return SynthService(small_spec).generate_corpus(seed=11)


class TestGeneratorSpec:
    """Test preset và file spec"""

    def test_preset_defaults(self):
        spec = preset_spec("two-cultures")
        assert [f.label for f in spec.fields] == ["engineering", "medicine"]
        assert [f.citation_rate for f in spec.fields] == [10.77, 16.85]
        assert spec.level_shares == [0.59, 0.35, 0.06]

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match="Unknown preset"):
            preset_spec("nope")

    def test_yaml_spec(self, tmp_path):
        path = tmp_path / "spec.yaml"
        path.write_text(yaml.safe_dump({
            "fields": [{"label": "a", "citation_rate": 5.0, "mean_linked_refs": 8.0}],
            "papers_per_field_year": 10,
        }), encoding="utf-8")
        spec = load_generator_spec(path)
        assert spec.fields[0].label == "a"
        assert spec.papers_per_field_year == 10

    def test_json_spec_with_preset(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps({"preset": "humanities-stress", "papers_per_field_year": 12}), encoding="utf-8")
        spec = load_generator_spec(path)
        assert len(spec.fields) == 3
        assert spec.papers_per_field_year == 12

    def test_missing_spec_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_generator_spec(tmp_path / "none.yaml")

    def test_duplicate_field_labels(self):
        fields = [{"label": "a", "citation_rate": 1.0, "mean_linked_refs": 2.0}] * 2
        with pytest.raises(ValueError, match="duplicate field labels"):
            GeneratorSpec.model_validate({"fields": fields})

    def test_year_factors_normalized(self, small_spec):
        factors = SynthService(small_spec).year_factors()
        assert factors.mean() == pytest.approx(1.0)
        assert factors[0] / factors[-1] == pytest.approx(22.53 / 7.34)


class TestGenerateCorpus:
    """Test generate_corpus"""

    def test_focal_papers(self, small_synthetic):
        corpus = small_synthetic.corpus
        assert small_synthetic.focal_count == 2 * 4 * 40
        assert all(pid.startswith("P-") for pid in small_synthetic.focal_ids)
        assert corpus.n_citable == small_synthetic.focal_count

    def test_same_seed_same_corpus(self, small_spec, small_synthetic):
        again = SynthService(small_spec).generate_corpus(seed=11)
        assert again.corpus == small_synthetic.corpus
        assert np.array_equal(again.quality, small_synthetic.quality)

    def test_different_seed(self, small_spec, small_synthetic):
        other = SynthService(small_spec).generate_corpus(seed=12)
        assert not np.array_equal(other.quality, small_synthetic.quality)

    def test_seed_required(self, small_spec):
        with pytest.raises(ValueError, match="seed is required"):
            SynthService(small_spec).generate_corpus()

    def test_files_load_cleanly(self, tmp_path, small_spec, small_synthetic):
        recommendations = SynthService(small_spec).generate_recommendations(small_synthetic)
        paths = SynthService.write(small_synthetic, recommendations, tmp_path)
        service = CorpusService(CorpusConfig(horizon_year=small_spec.horizon_year))
        corpus = service.load_corpus(paths["publications"], paths["references"])
        report = service.validate_corpus(corpus)
        assert report.warning_count == 0
        assert corpus.n_publications == small_synthetic.corpus.n_publications

    def test_citations_within_horizon(self, small_synthetic):
        corpus = small_synthetic.corpus
        linked = corpus.cited_pos >= 0
        citing_years = corpus.years[corpus.citing_pos[linked]]
        cited_years = corpus.years[corpus.cited_pos[linked]]
        assert np.all(citing_years >= cited_years)
        assert np.all(citing_years <= corpus.horizon_year)

    def test_infeasible_spec(self):
        spec = preset_spec("two-cultures", papers_per_field_year=20, max_citing_papers_per_field_year=1)
        with pytest.raises(ValueError, match="Infeasible spec"):
            SynthService(spec).generate_corpus(seed=1)

    def test_linked_share_humanities(self):
        spec = preset_spec("humanities-stress", papers_per_field_year=60)
        corpus = SynthService(spec).generate_corpus(seed=3).corpus
        humanities = np.array([c.startswith("C-humanities-") for c in corpus.citing_ids])
        share = np.mean(corpus.cited_pos[humanities] >= 0)
        assert abs(share - 0.3) <= 0.05


class TestGenerateRecommendations:
    """Test generate_recommendations"""

    def test_records_valid(self, small_spec, small_synthetic):
        recommendations = SynthService(small_spec).generate_recommendations(small_synthetic)
        checked = check_records(recommendations)
        assert set(checked["score"]) == {1, 2, 3}
        assert set(checked["pub_id"]) <= set(small_synthetic.focal_ids)
        assert checked.groupby("pub_id")["seq"].min().eq(1).all()

    def test_level_shares(self, small_spec, small_synthetic):
        recommendations = SynthService(small_spec).generate_recommendations(small_synthetic)
        shares = recommendations["score"].value_counts(normalize=True).sort_index().tolist()
        assert shares == pytest.approx([0.59, 0.35, 0.06], abs=0.02)

    def test_multiple_raters(self, small_spec, small_synthetic):
        recommendations = SynthService(small_spec).generate_recommendations(small_synthetic)
        assert recommendations["pub_id"].nunique() < len(recommendations)

    def test_extra_raters_agree_with_first(self, small_spec, small_synthetic):
        recommendations = SynthService(small_spec).generate_recommendations(small_synthetic)
        first = recommendations[recommendations["seq"] == 1].set_index("pub_id")["score"]
        extra = recommendations[recommendations["seq"] > 1]
        agree = extra["score"].to_numpy() == first.loc[extra["pub_id"]].to_numpy()
        assert agree.mean() >= 0.8

    def test_exact_agreement_without_noise(self, small_synthetic):
        spec = preset_spec("two-cultures", papers_per_field_year=40, rater_agreement_noise=0.0)
        recommendations = SynthService(spec).generate_recommendations(small_synthetic)
        assert recommendations.groupby("pub_id")["score"].nunique().eq(1).all()

    def test_highly_rated_papers_get_more_raters(self, small_spec, small_synthetic):
        recommendations = SynthService(small_spec).generate_recommendations(small_synthetic)
        per_paper = recommendations.groupby("pub_id").agg(score=("score", "first"), raters=("seq", "size"))
        high = per_paper.loc[per_paper["score"] > 1, "raters"].mean()
        low = per_paper.loc[per_paper["score"] == 1, "raters"].mean()
        assert high > low

    def test_reproducible(self, small_spec, small_synthetic):
        service = SynthService(small_spec)
        a = service.generate_recommendations(small_synthetic)
        b = service.generate_recommendations(small_synthetic)
        assert a.equals(b)

    def test_coupling_tracks_quality(self, small_spec, small_synthetic):
        recommendations = SynthService(small_spec).generate_recommendations(small_synthetic, coupling=1.0)
        position = {pid: i for i, pid in enumerate(small_synthetic.focal_ids)}
        quality = [small_synthetic.quality[position[p]] for p in recommendations["pub_id"]]
        assert StatsService.spearman(quality, recommendations["score"]) > 0.5

    def test_invalid_coupling(self, small_spec, small_synthetic):
        with pytest.raises(ValueError, match="coupling"):
            SynthService(small_spec).generate_recommendations(small_synthetic, coupling=1.5)

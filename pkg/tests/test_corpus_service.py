"""Test cases cho CorpusService"""
import json

import numpy as np
import pytest

from app.services.corpus_service import Corpus, CorpusService, corpus_config_from
from core.schemas import CorpusConfig, Publication
from tests.conftest import write_jsonl, write_tsv
from tests.test_data import (
    FIVE_PAPER_PUBLICATIONS,
    FIVE_PAPER_REFERENCES,
    PUBLICATION_HEADER,
    REFERENCE_HEADER,
)


class TestLoadCorpus:
    """Test load_corpus"""

    def test_load_counts(self, sncs_corpus):
        corpus, _ = sncs_corpus
        assert corpus.n_publications == 10
        assert corpus.n_citable == 3
        assert corpus.n_references == 11
        assert corpus.n_linked == 10
        assert corpus.n_unlinked == 1

    def test_unlinked_reference_kept_as_edge(self, sncs_corpus):
        corpus, _ = sncs_corpus
        unlinked = [e for e in corpus.edges() if not e.linked]
        assert len(unlinked) == 1
        assert unlinked[0].citing_id == "D2"
        assert unlinked[0].cited_ref == "EXT-0001"
        assert unlinked[0].cited_id is None

    def test_multi_category_parsed(self, multi_category_corpus):
        corpus, _ = multi_category_corpus
        assert corpus.publication("M").categories == ["Physics", "Chemistry"]

    def test_duplicate_pub_id(self, corpus_files, corpus_config):
        rows = FIVE_PAPER_PUBLICATIONS + [("P3", 2009, "J1", "article", "Physics")]
        pub_path, ref_path = corpus_files(rows, FIVE_PAPER_REFERENCES)
        with pytest.raises(ValueError, match="Duplicate pub_id 'P3'"):
            CorpusService(corpus_config).load_corpus(pub_path, ref_path)

    def test_malformed_row_reports_line(self, corpus_files, corpus_config):
        rows = [("P1", 2008, "J1", "article", "Physics"), ("P2", "abc", "J1", "article", "Physics")]
        pub_path, ref_path = corpus_files(rows, [])
        with pytest.raises(ValueError, match="line 3"):
            CorpusService(corpus_config).load_corpus(pub_path, ref_path)

    def test_year_after_horizon(self, corpus_files, corpus_config):
        pub_path, ref_path = corpus_files([("P1", 2014, "J1", "article", "Physics")], [])
        with pytest.raises(ValueError, match="after horizon_year 2013"):
            CorpusService(corpus_config).load_corpus(pub_path, ref_path)

    def test_year_before_year_min(self, corpus_files):
        config = CorpusConfig(horizon_year=2013, year_min=2009)
        pub_path, ref_path = corpus_files([("P1", 2008, "J1", "article", "Physics")], [])
        with pytest.raises(ValueError, match="before year_min 2009"):
            CorpusService(config).load_corpus(pub_path, ref_path)

    def test_empty_publications(self, corpus_files, corpus_config):
        pub_path, ref_path = corpus_files([], [])
        with pytest.raises(ValueError, match="is empty"):
            CorpusService(corpus_config).load_corpus(pub_path, ref_path)

    def test_unknown_citing_id(self, corpus_files, corpus_config):
        pub_path, ref_path = corpus_files(FIVE_PAPER_PUBLICATIONS, [("NOPE", "P1")])
        with pytest.raises(ValueError, match="citing_id 'NOPE'"):
            CorpusService(corpus_config).load_corpus(pub_path, ref_path)

    def test_self_citation(self, corpus_files, corpus_config):
        pub_path, ref_path = corpus_files(FIVE_PAPER_PUBLICATIONS, [("C00", "C00")])
        with pytest.raises(ValueError, match="Self-citation"):
            CorpusService(corpus_config).load_corpus(pub_path, ref_path)

    def test_duplicate_reference(self, corpus_files, corpus_config):
        pub_path, ref_path = corpus_files(FIVE_PAPER_PUBLICATIONS, [("C00", "P1"), ("C00", "P1")])
        with pytest.raises(ValueError, match="Duplicate reference C00 -> P1"):
            CorpusService(corpus_config).load_corpus(pub_path, ref_path)

    def test_missing_file(self, tmp_path, corpus_config):
        with pytest.raises(FileNotFoundError):
            CorpusService(corpus_config).load_corpus(tmp_path / "none.tsv", tmp_path / "none_refs.tsv")

    def test_unsupported_format(self, tmp_path, corpus_config):
        path = tmp_path / "publications.csv"
        path.write_text("pub_id,year\n", encoding="utf-8")
        with pytest.raises(ValueError, match="Unsupported publications format"):
            CorpusService(corpus_config).load_corpus(path, path)

    def test_alternative_category_column(self, tmp_path):
        header = ["pub_id", "year", "journal_id", "doc_type", "categories", "oecd_categories"]
        rows = [("P1", 2010, "J1", "article", "Physics", "Natural sciences")]
        pub_path = write_tsv(tmp_path / "publications.tsv", header, rows)
        ref_path = write_tsv(tmp_path / "references.tsv", REFERENCE_HEADER, [])
        config = corpus_config_from(2013, category_column="oecd_categories")
        corpus = CorpusService(config).load_corpus(pub_path, ref_path)
        assert corpus.publication("P1").categories == ["Natural sciences"]

    def test_jsonl_matches_tsv(self, tmp_path, sncs_corpus, corpus_config):
        corpus, _ = sncs_corpus
        pub_path, ref_path = CorpusService.write_corpus(corpus, tmp_path / "jsonl", "jsonl")
        first = json.loads(pub_path.read_text(encoding="utf-8").splitlines()[0])
        assert first["categories"] == ["Biology"]

        reloaded = CorpusService(corpus_config).load_corpus(pub_path, ref_path)
        assert reloaded == corpus

    def test_tsv_round_trip_keeps_quotes(self, tmp_path, corpus_config):
        service = CorpusService(corpus_config)
        pub_path = write_jsonl(tmp_path / "publications.jsonl", [
            {"pub_id": "P1", "year": 2010, "journal_id": "J\"1", "doc_type": "article",
             "categories": ['Arts "Humanities"', "History"]},
            {"pub_id": "P2", "year": 2011, "journal_id": "J2", "doc_type": "article",
             "categories": ["Physics"]},
        ])
        ref_path = write_jsonl(tmp_path / "references.jsonl", [
            {"citing_id": "P2", "cited_id": "P1"},
            {"citing_id": "P2", "cited_id": "\"ext\" 42"},
        ])
        corpus = service.load_corpus(pub_path, ref_path)

        tsv_pub, tsv_ref = CorpusService.write_corpus(corpus, tmp_path / "tsv", "tsv")
        reloaded = service.load_corpus(tsv_pub, tsv_ref)
        assert reloaded.publication("P1").categories == ['Arts "Humanities"', "History"]
        assert reloaded == corpus

    def test_semicolon_in_category_rejected(self, tmp_path, corpus_config):
        pub_path = write_jsonl(tmp_path / "publications.jsonl", [
            {"pub_id": "P1", "year": 2010, "journal_id": "J1", "doc_type": "article",
             "categories": ["Arts;Humanities"]},
        ])
        ref_path = write_jsonl(tmp_path / "references.jsonl", [])
        with pytest.raises(ValueError, match="line 1"):
            CorpusService(corpus_config).load_corpus(pub_path, ref_path)

    def test_tab_in_ids_rejected(self, tmp_path, corpus_config):
        pub_path = write_jsonl(tmp_path / "publications.jsonl", [
            {"pub_id": "P\t1", "year": 2010, "journal_id": "J1", "doc_type": "article",
             "categories": ["Physics"]},
        ])
        ref_path = write_jsonl(tmp_path / "references.jsonl", [])
        with pytest.raises(ValueError, match="forbidden character"):
            CorpusService(corpus_config).load_corpus(pub_path, ref_path)

    def test_newline_in_reference_rejected(self, tmp_path, corpus_config):
        pub_path = write_jsonl(tmp_path / "publications.jsonl", [
            {"pub_id": "P1", "year": 2010, "journal_id": "J1", "doc_type": "article",
             "categories": ["Physics"]},
        ])
        ref_path = write_jsonl(tmp_path / "references.jsonl", [{"citing_id": "P1", "cited_id": "X\n2"}])
        with pytest.raises(ValueError, match="Malformed reference row at line 1"):
            CorpusService(corpus_config).load_corpus(pub_path, ref_path)


class TestCitationIndex:
    """Test build_citation_index và count_citations"""

    def test_entries_sorted_by_citing_id(self, five_paper_corpus):
        corpus, index = five_paper_corpus
        entries = index.entries("P4")
        assert [c for c, _ in entries] == ["C00", "C01", "C02", "C03", "C04"]
        assert all(year == 2009 for _, year in entries)

    def test_unlinked_not_indexed(self, sncs_corpus):
        corpus, index = sncs_corpus
        assert index.n_events == corpus.n_linked

    def test_rebuild_is_identical(self, sncs_corpus, corpus_config):
        corpus, index = sncs_corpus
        assert CorpusService(corpus_config).build_citation_index(corpus) == index

    def test_count_citations_window(self, load_corpus):
        publications = [
            ("A", 2008, "J1", "article", "Physics"),
            ("K1", 2008, "J2", "other", "Physics"),
            ("K2", 2010, "J2", "other", "Physics"),
            ("K3", 2011, "J2", "other", "Physics"),
        ]
        references = [("K1", "A"), ("K2", "A"), ("K3", "A")]
        corpus, index = load_corpus(publications, references)
        pub = corpus.publication("A")
        assert CorpusService.count_citations(index, pub, (2008, 2010)) == 2
        assert CorpusService.count_citations(index, pub, (2008, 2013)) == 3

    def test_yearly_windows_sum_to_full_horizon(self):
        rng = np.random.default_rng(21)
        years = rng.integers(2006, 2014, size=40)
        publications = [
            Publication(pub_id=f"W{i}", year=int(years[i]), journal_id="J1",
                        doc_type="article", categories=["Physics"])
            for i in range(40)
        ]
        pairs = sorted({(int(a), int(b)) for a, b in rng.integers(0, 40, size=(200, 2)) if a != b})
        corpus = Corpus(
            publications,
            [f"W{a}" for a, _ in pairs],
            [f"W{b}" for _, b in pairs],
            CorpusConfig(horizon_year=2013)
        )
        index = CorpusService(corpus.config).build_citation_index(corpus)
        for pub in corpus.publications():
            full = CorpusService.count_citations(index, pub, (pub.year, corpus.horizon_year))
            yearly = [
                CorpusService.count_citations(index, pub, (year, year))
                for year in range(pub.year, corpus.horizon_year + 1)
            ]
            assert sum(yearly) == full

    def test_count_citations_zero(self, five_paper_corpus):
        corpus, index = five_paper_corpus
        assert CorpusService.count_citations(index, corpus.publication("P1"), (2008, 2013)) == 0

    def test_count_citations_window_before_publication(self, five_paper_corpus):
        corpus, index = five_paper_corpus
        with pytest.raises(ValueError, match="starts before publication year"):
            CorpusService.count_citations(index, corpus.publication("P1"), (2007, 2010))

    def test_count_citations_inverted_window(self, five_paper_corpus):
        corpus, index = five_paper_corpus
        with pytest.raises(ValueError, match="Invalid citation window"):
            CorpusService.count_citations(index, corpus.publication("P1"), (2010, 2009))


class TestValidateCorpus:
    """Test validate_corpus"""

    def test_clean_corpus(self, sncs_corpus, corpus_config):
        corpus, _ = sncs_corpus
        report = CorpusService(corpus_config).validate_corpus(corpus)
        assert report.warning_count == 0
        assert report.unlinked_ratio == pytest.approx(1 / 11)
        assert report.per_year == {2009: 3, 2010: 3, 2011: 4}

    def test_citing_year_precedes_cited_year(self, load_corpus, corpus_config):
        publications = [
            ("A", 2010, "J1", "article", "Physics"),
            ("B", 2009, "J1", "article", "Physics"),
        ]
        corpus, _ = load_corpus(publications, [("B", "A")])
        report = CorpusService(corpus_config).validate_corpus(corpus)
        assert report.warning_count == 1
        assert report.n_prepublication_citations == 1
        assert "B (2009) -> A (2010)" in report.warnings[0]

    def test_no_citable_publications(self, load_corpus, corpus_config):
        corpus, _ = load_corpus([("E1", 2010, "J1", "editorial", "Physics")], [])
        report = CorpusService(corpus_config).validate_corpus(corpus)
        assert any("no citable publications" in w for w in report.warnings)

    def test_validate_does_not_mutate(self, sncs_corpus, corpus_config):
        corpus, _ = sncs_corpus
        before = corpus.publications()
        CorpusService(corpus_config).validate_corpus(corpus)
        assert corpus.publications() == before


class TestCorpusConfig:
    """Test corpus_config_from"""

    def test_default_citable_types(self):
        config = corpus_config_from(2013)
        assert config.citable_types == ["article", "review", "letter"]

    def test_empty_citable_types_rejected(self):
        with pytest.raises(ValueError):
            CorpusConfig(horizon_year=2013, citable_types=[])


def test_publication_rejects_duplicate_categories(tmp_path, corpus_config):
    pub_path = write_tsv(tmp_path / "publications.tsv", PUBLICATION_HEADER,
                         [("P1", 2010, "J1", "article", "Physics;Physics")])
    ref_path = write_tsv(tmp_path / "references.tsv", REFERENCE_HEADER, [])
    with pytest.raises(ValueError, match="line 2"):
        CorpusService(corpus_config).load_corpus(pub_path, ref_path)

"""Pytest configuration và shared fixtures"""
import csv
import json
from pathlib import Path

import pytest

from app.services.corpus_service import CorpusService
from core.schemas import CorpusConfig
from tests.test_data import (
    FIVE_PAPER_PUBLICATIONS,
    FIVE_PAPER_REFERENCES,
    HORIZON_YEAR,
    MULTI_CATEGORY_PUBLICATIONS,
    MULTI_CATEGORY_REFERENCES,
    PUBLICATION_HEADER,
    REFERENCE_HEADER,
    SNCS_PUBLICATIONS,
    SNCS_REFERENCES,
)


def write_tsv(path: Path, header, rows) -> Path:
    """Ghi file TSV đơn giản (không quote)"""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    return path


def write_jsonl(path: Path, records) -> Path:
    """Ghi mỗi record một dòng JSON"""
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")
    return path


@pytest.fixture
def corpus_config():
    """CorpusConfig mặc định cho test"""
    return CorpusConfig(horizon_year=HORIZON_YEAR)


@pytest.fixture
def corpus_files(tmp_path):
    """Factory ghi publications.tsv + references.tsv, trả về (pub_path, ref_path)"""
    def _write(publications, references, name="corpus"):
        directory = tmp_path / name
        directory.mkdir(parents=True, exist_ok=True)
        pub_path = write_tsv(directory / "publications.tsv", PUBLICATION_HEADER, publications)
        ref_path = write_tsv(directory / "references.tsv", REFERENCE_HEADER, references)
        return pub_path, ref_path
    return _write


@pytest.fixture
def load_corpus(corpus_files, corpus_config):
    """Factory load corpus + citation index từ các dòng mẫu"""
    def _load(publications, references, config=None, name="corpus"):
        service = CorpusService(config or corpus_config)
        pub_path, ref_path = corpus_files(publications, references, name)
        corpus = service.load_corpus(pub_path, ref_path)
        return corpus, service.build_citation_index(corpus)
    return _load


@pytest.fixture
def five_paper_corpus(load_corpus):
    return load_corpus(FIVE_PAPER_PUBLICATIONS, FIVE_PAPER_REFERENCES, name="five")


@pytest.fixture
def sncs_corpus(load_corpus):
    return load_corpus(SNCS_PUBLICATIONS, SNCS_REFERENCES, name="sncs")


@pytest.fixture
def multi_category_corpus(load_corpus):
    return load_corpus(MULTI_CATEGORY_PUBLICATIONS, MULTI_CATEGORY_REFERENCES, name="multi")

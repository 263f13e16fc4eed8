"""
Corpus Service

Đọc publications + references (TSV hoặc JSON-lines), dựng CitationIndex
và kiểm tra corpus. Corpus và CitationIndex không thay đổi sau khi tạo,
có thể đọc song song từ nhiều worker.
"""
import csv
import json
import logging
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from core.schemas import CorpusConfig, LoadSummary, Publication, ReferenceEdge, ValidationReport, check_token

logger = logging.getLogger(__name__)

PUBLICATION_FIELDS = ["pub_id", "year", "journal_id", "doc_type"]
REFERENCE_FIELDS = ["citing_id", "cited_id"]
CATEGORY_SEPARATOR = ";"

PathLike = Union[str, Path]


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


class Corpus:
    """
    Snapshot phân tích: publications + reference edges + horizon.

    Publications giữ thứ tự load; edges giữ thứ tự file. Cited endpoint
    không có trong corpus -> reference unlinked (cited_pos = -1).
    """

    def __init__(
        self,
        publications: List[Publication],
        citing_ids: List[str],
        cited_refs: List[str],
        config: CorpusConfig
    ):
        self.config = config
        self.horizon_year = config.horizon_year
        self.year_min = config.year_min
        self.citable_types = frozenset(config.citable_types)
        self.category_column = config.category_column

        self.pub_ids = _frozen(np.array([p.pub_id for p in publications], dtype=object))
        self.years = _frozen(np.array([p.year for p in publications], dtype=np.int64))
        self.journal_ids = _frozen(np.array([p.journal_id for p in publications], dtype=object))
        self.doc_types = _frozen(np.array([p.doc_type for p in publications], dtype=object))
        self.categories: Tuple[Tuple[str, ...], ...] = tuple(tuple(p.categories) for p in publications)
        self.citable = _frozen(np.array([d in self.citable_types for d in self.doc_types], dtype=bool))

        id_index = pd.Index(self.pub_ids)
        self._id_index = id_index
        # Thứ hạng của pub_id theo thứ tự chuỗi, dùng để sort entries theo citing_id
        self.id_rank = _frozen(
            np.argsort(np.argsort(self.pub_ids.astype(str), kind="stable"), kind="stable").astype(np.int64)
        )

        self.citing_ids = _frozen(np.array(citing_ids, dtype=object))
        self.cited_refs = _frozen(np.array(cited_refs, dtype=object))
        self.citing_pos = _frozen(id_index.get_indexer(self.citing_ids).astype(np.int64))
        self.cited_pos = _frozen(id_index.get_indexer(self.cited_refs).astype(np.int64))

    # --- accessors ---
    @property
    def n_publications(self) -> int:
        return len(self.pub_ids)

    @property
    def n_references(self) -> int:
        return len(self.citing_ids)

    @property
    def n_linked(self) -> int:
        return int(np.count_nonzero(self.cited_pos >= 0))

    @property
    def n_unlinked(self) -> int:
        return self.n_references - self.n_linked

    @property
    def n_citable(self) -> int:
        return int(np.count_nonzero(self.citable))

    def position(self, pub_id: str) -> int:
        pos = self._id_index.get_indexer([pub_id])[0]
        if pos < 0:
            raise ValueError(f"Unknown pub_id '{pub_id}'")
        return int(pos)

    def publication_at(self, pos: int) -> Publication:
        return Publication(
            pub_id=self.pub_ids[pos],
            year=int(self.years[pos]),
            journal_id=self.journal_ids[pos],
            doc_type=self.doc_types[pos],
            categories=list(self.categories[pos])
        )

    def publication(self, pub_id: str) -> Publication:
        return self.publication_at(self.position(pub_id))

    def publications(self) -> List[Publication]:
        return [self.publication_at(i) for i in range(self.n_publications)]

    def edges(self) -> List[ReferenceEdge]:
        return [
            ReferenceEdge(
                citing_id=citing,
                cited_ref=cited,
                cited_id=cited if pos >= 0 else None
            )
            for citing, cited, pos in zip(self.citing_ids, self.cited_refs, self.cited_pos)
        ]

    def citable_positions(self) -> np.ndarray:
        return np.flatnonzero(self.citable)

    def summary(self) -> LoadSummary:
        return LoadSummary(
            n_publications=self.n_publications,
            n_citable=self.n_citable,
            n_references=self.n_references,
            n_linked=self.n_linked,
            n_unlinked=self.n_unlinked,
            horizon_year=self.horizon_year,
            category_column=self.category_column
        )

    def publications_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "pub_id": self.pub_ids,
            "year": self.years,
            "journal_id": self.journal_ids,
            "doc_type": self.doc_types,
            self.category_column: [CATEGORY_SEPARATOR.join(c) for c in self.categories],
        })

    def references_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"citing_id": self.citing_ids, "cited_id": self.cited_refs})

    def __eq__(self, other) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.config == other.config
            and self.publications() == other.publications()
            and self.edges() == other.edges()
        )


class CitationIndex:
    """
    Inverted index: với mỗi publication (cited), danh sách (citing pub, citing year)
    của các linked edges, sort theo citing_id. Lưu dạng CSR.
    """

    def __init__(self, corpus: Corpus, cited: np.ndarray, citing: np.ndarray, offsets: np.ndarray):
        self.corpus = corpus
        self.cited = _frozen(cited)
        self.citing = _frozen(citing)
        self.citing_year = _frozen(corpus.years[citing] if len(citing) else np.zeros(0, dtype=np.int64))
        self.offsets = _frozen(offsets)

    @property
    def n_events(self) -> int:
        return len(self.cited)

    def slice(self, pos: int) -> slice:
        return slice(int(self.offsets[pos]), int(self.offsets[pos + 1]))

    def entries(self, pub_id: str) -> List[Tuple[str, int]]:
        """(citing pub_id, citing year) cho mọi linked citation tới pub_id"""
        sl = self.slice(self.corpus.position(pub_id))
        return [
            (self.corpus.pub_ids[c], int(y))
            for c, y in zip(self.citing[sl], self.citing_year[sl])
        ]

    def count_at(self, pos: int, lower: int, upper: int) -> int:
        years = self.citing_year[self.slice(pos)]
        return int(np.count_nonzero((years >= lower) & (years <= upper)))

    def window_counts(self, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
        """Số citation trong [lower[p], upper[p]] cho mọi publication p"""
        n = self.corpus.n_publications
        if self.n_events == 0:
            return np.zeros(n, dtype=np.int64)
        mask = (self.citing_year >= lower[self.cited]) & (self.citing_year <= upper[self.cited])
        return np.bincount(self.cited[mask], minlength=n).astype(np.int64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CitationIndex):
            return NotImplemented
        return (
            np.array_equal(self.cited, other.cited)
            and np.array_equal(self.citing, other.citing)
            and np.array_equal(self.offsets, other.offsets)
        )


class CorpusService:
    """Service load, index, validate và ghi corpus"""

    def __init__(self, config: CorpusConfig):
        """
        Khởi tạo Corpus Service

        Args:
            config: CorpusConfig (horizon_year, citable_types, ...)
        """
        self.config = config

    # ------------------------------------------------------------------ load
    def load_corpus(self, publications_path: PathLike, references_path: PathLike) -> Corpus:
        """
        Load và validate corpus từ file .tsv hoặc .jsonl

        Args:
            publications_path: File publications
            references_path: File references

        Returns:
            Corpus đã validate

        Raises:
            FileNotFoundError: Nếu file không tồn tại
            ValueError: Duplicate pub_id, dòng sai định dạng, corpus rỗng, năm ngoài khoảng
        """
        publications = self._load_publications(Path(publications_path))
        citing_ids, cited_refs, lines = self._load_references(Path(references_path))
        self._check_references(publications, citing_ids, cited_refs, lines)

        corpus = Corpus(publications, citing_ids, cited_refs, self.config)
        logger.info(
            f"Loaded corpus: {corpus.n_publications} publications ({corpus.n_citable} citable), "
            f"{corpus.n_linked} linked / {corpus.n_unlinked} unlinked references"
        )
        return corpus

    def _load_publications(self, path: Path) -> List[Publication]:
        rows = self._read_rows(path, PUBLICATION_FIELDS + [self.config.category_column], "publications")
        publications: List[Publication] = []
        seen: Dict[str, int] = {}
        max_year = None

        for line, row in rows:
            categories = row[self.config.category_column]
            if isinstance(categories, str):
                categories = categories.split(CATEGORY_SEPARATOR)
            try:
                pub = Publication.model_validate({
                    "pub_id": row["pub_id"],
                    "year": row["year"],
                    "journal_id": row["journal_id"],
                    "doc_type": row["doc_type"],
                    "categories": categories,
                })
            except ValidationError as e:
                raise ValueError(f"Malformed publication row at line {line}: {self._first_error(e)}") from e

            if pub.pub_id in seen:
                raise ValueError(
                    f"Duplicate pub_id '{pub.pub_id}' at line {line} (first seen at line {seen[pub.pub_id]})"
                )
            seen[pub.pub_id] = line

            if self.config.year_min is not None and pub.year < self.config.year_min:
                raise ValueError(
                    f"Publication '{pub.pub_id}' at line {line}: year {pub.year} before year_min {self.config.year_min}"
                )
            if pub.year > self.config.horizon_year:
                raise ValueError(
                    f"Publication '{pub.pub_id}' at line {line}: year {pub.year} after horizon_year "
                    f"{self.config.horizon_year}"
                )
            max_year = pub.year if max_year is None else max(max_year, pub.year)
            publications.append(pub)

        if not publications:
            raise ValueError(f"Publications source {path} is empty")
        logger.debug(f"Read {len(publications)} publications, max year {max_year}")
        return publications

    def _load_references(self, path: Path) -> Tuple[List[str], List[str], List[int]]:
        rows = self._read_rows(path, REFERENCE_FIELDS, "references")
        citing_ids, cited_refs, lines = [], [], []
        for line, row in rows:
            citing, cited = row["citing_id"], row["cited_id"]
            if not isinstance(citing, str) or not citing.strip() or not isinstance(cited, str) or not cited.strip():
                raise ValueError(f"Malformed reference row at line {line}: citing_id and cited_id are required")
            try:
                check_token(citing)
                check_token(cited)
            except ValueError as e:
                raise ValueError(f"Malformed reference row at line {line}: {e}") from e
            citing_ids.append(citing.strip())
            cited_refs.append(cited.strip())
            lines.append(line)
        return citing_ids, cited_refs, lines

    def _check_references(
        self,
        publications: List[Publication],
        citing_ids: List[str],
        cited_refs: List[str],
        lines: List[int]
    ) -> None:
        if not citing_ids:
            return
        frame = pd.DataFrame({"citing_id": citing_ids, "cited_id": cited_refs, "line": lines})
        known = pd.Index([p.pub_id for p in publications])

        unresolved = known.get_indexer(frame["citing_id"]) < 0
        if unresolved.any():
            row = frame[unresolved].iloc[0]
            raise ValueError(
                f"Reference at line {row['line']}: citing_id '{row['citing_id']}' is not a publication in the corpus"
            )

        self_edges = (frame["citing_id"] == frame["cited_id"]).to_numpy()
        if self_edges.any():
            row = frame[self_edges].iloc[0]
            raise ValueError(f"Self-citation '{row['citing_id']}' at line {row['line']} is not allowed")

        duplicated = frame.duplicated(subset=["citing_id", "cited_id"]).to_numpy()
        if duplicated.any():
            row = frame[duplicated].iloc[0]
            raise ValueError(
                f"Duplicate reference {row['citing_id']} -> {row['cited_id']} at line {row['line']}"
            )

    def _read_rows(self, path: Path, required: List[str], label: str):
        """Trả về list (line number, row dict) cho file .tsv hoặc .jsonl"""
        if not path.exists():
            raise FileNotFoundError(f"{label} file not found: {path}")
        suffix = path.suffix.lower()
        if suffix == ".tsv":
            return self._read_tsv(path, required, label)
        if suffix == ".jsonl":
            return self._read_jsonl(path, required, label)
        raise ValueError(f"Unsupported {label} format '{suffix}' (expected .tsv or .jsonl)")

    def _read_tsv(self, path: Path, required: List[str], label: str):
        try:
            frame = pd.read_csv(
                path,
                sep="\t",
                dtype=str,
                keep_default_na=False,
                quoting=csv.QUOTE_NONE,
                encoding="utf-8"
            )
        except pd.errors.EmptyDataError:
            frame = pd.DataFrame(columns=required)
        except pd.errors.ParserError as e:
            raise ValueError(f"Malformed {label} file {path}: {e}") from e

        missing = [c for c in required if c not in frame.columns]
        if missing:
            raise ValueError(f"{label} file {path} is missing columns: {', '.join(missing)}")

        columns = [frame[c].tolist() for c in required]
        rows = []
        for i, values in enumerate(zip(*columns)):
            line = i + 2  # dòng 1 là header
            row = {}
            for column, value in zip(required, values):
                if not isinstance(value, str) or value == "":
                    raise ValueError(f"Malformed {label} row at line {line}: missing '{column}'")
                row[column] = value
            rows.append((line, row))
        return rows

    def _read_jsonl(self, path: Path, required: List[str], label: str):
        rows = []
        with open(path, "r", encoding="utf-8") as f:
            for line, text in enumerate(f, start=1):
                if not text.strip():
                    continue
                try:
                    record = json.loads(text)
                except json.JSONDecodeError as e:
                    raise ValueError(f"Malformed {label} row at line {line}: {e.msg}") from e
                if not isinstance(record, dict):
                    raise ValueError(f"Malformed {label} row at line {line}: expected a JSON object")
                missing = [c for c in required if record.get(c) in (None, "")]
                if missing:
                    raise ValueError(f"Malformed {label} row at line {line}: missing {', '.join(missing)}")
                rows.append((line, {c: record[c] for c in required}))
        return rows

    @staticmethod
    def _first_error(error: ValidationError) -> str:
        first = error.errors()[0]
        field = ".".join(str(part) for part in first.get("loc", ()))
        return f"{field}: {first.get('msg')}" if field else first.get("msg", str(error))

    # ----------------------------------------------------------------- index
    def build_citation_index(self, corpus: Corpus) -> CitationIndex:
        """
        Đảo linked edges thành index cited -> [(citing, year)], sort theo citing_id

        Args:
            corpus: Corpus hợp lệ

        Returns:
            CitationIndex (rỗng nếu không có edge)
        """
        linked = corpus.cited_pos >= 0
        cited = corpus.cited_pos[linked]
        citing = corpus.citing_pos[linked]
        order = np.lexsort((corpus.id_rank[citing], cited))
        cited = cited[order]
        citing = citing[order]
        counts = np.bincount(cited, minlength=corpus.n_publications)
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        logger.info(f"Citation index built: {len(cited)} citation events")
        return CitationIndex(corpus, cited.astype(np.int64), citing.astype(np.int64), offsets)

    @staticmethod
    def count_citations(index: CitationIndex, pub: Publication, window: Tuple[int, int]) -> int:
        """
        Đếm citation có citing year trong window [lower, upper]

        Raises:
            ValueError: Nếu lower < pub.year hoặc lower > upper
        """
        lower, upper = window
        if lower < pub.year:
            raise ValueError(
                f"Citation window [{lower}, {upper}] starts before publication year {pub.year} of '{pub.pub_id}'"
            )
        if lower > upper:
            raise ValueError(f"Invalid citation window [{lower}, {upper}]")
        return index.count_at(index.corpus.position(pub.pub_id), lower, upper)

    # -------------------------------------------------------------- validate
    def validate_corpus(self, corpus: Corpus) -> ValidationReport:
        """
        Thống kê và cảnh báo mềm, không thay đổi corpus

        Args:
            corpus: Corpus cần kiểm tra

        Returns:
            ValidationReport
        """
        warnings: List[str] = []

        linked = corpus.cited_pos >= 0
        citing_years = corpus.years[corpus.citing_pos[linked]]
        cited_years = corpus.years[corpus.cited_pos[linked]]
        early = np.flatnonzero(citing_years < cited_years)
        citing_linked = corpus.citing_ids[linked]
        cited_linked = corpus.cited_refs[linked]
        for i in early:
            warnings.append(
                f"citing year precedes cited year: {citing_linked[i]} ({citing_years[i]}) "
                f"-> {cited_linked[i]} ({cited_years[i]})"
            )

        if corpus.n_citable == 0:
            warnings.append(f"no citable publications (citable types: {', '.join(sorted(corpus.citable_types))})")

        per_year = {int(y): int(n) for y, n in sorted(Counter(corpus.years.tolist()).items())}
        category_counts = Counter(c for cats in corpus.categories for c in cats)
        per_category = {c: category_counts[c] for c in sorted(category_counts)}

        unlinked_ratio = corpus.n_unlinked / corpus.n_references if corpus.n_references else 0.0

        for w in warnings[:20]:
            logger.warning(w)
        if len(warnings) > 20:
            logger.warning(f"... {len(warnings) - 20} more warnings")

        return ValidationReport(
            summary=corpus.summary(),
            unlinked_ratio=unlinked_ratio,
            n_prepublication_citations=len(early),
            per_year=per_year,
            per_category=per_category,
            warnings=warnings
        )

    # ----------------------------------------------------------------- write
    @staticmethod
    def write_corpus(corpus: Corpus, directory: PathLike, fmt: str = "tsv") -> Tuple[Path, Path]:
        """
        Ghi corpus ra publications.<fmt> và references.<fmt>

        Returns:
            (publications path, references path)
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        pub_path = directory / f"publications.{fmt}"
        ref_path = directory / f"references.{fmt}"

        if fmt == "tsv":
            _write_plain_tsv(corpus.publications_frame(), pub_path)
            _write_plain_tsv(corpus.references_frame(), ref_path)
        elif fmt == "jsonl":
            with open(pub_path, "w", encoding="utf-8") as f:
                for pub in corpus.publications():
                    record = pub.model_dump(exclude={"categories"})
                    record[corpus.category_column] = pub.categories
                    f.write(json.dumps(record) + "\n")
            with open(ref_path, "w", encoding="utf-8") as f:
                for citing, cited in zip(corpus.citing_ids, corpus.cited_refs):
                    f.write(json.dumps({"citing_id": citing, "cited_id": cited}) + "\n")
        else:
            raise ValueError(f"Unsupported corpus format '{fmt}'")
        return pub_path, ref_path


def corpus_config_from(
    horizon_year: int,
    citable_types: Optional[List[str]] = None,
    year_min: Optional[int] = None,
    category_column: str = "categories"
) -> CorpusConfig:
    return CorpusConfig(
        horizon_year=horizon_year,
        year_min=year_min,
        citable_types=citable_types or ["article", "review", "letter"],
        category_column=category_column
    )


def _write_plain_tsv(frame: pd.DataFrame, path: Path) -> None:
    """Ghi TSV không quote, khớp với cách đọc quoting=csv.QUOTE_NONE"""
    lines = ["\t".join(frame.columns)]
    lines.extend("\t".join(row) for row in frame.astype(str).itertuples(index=False, name=None))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")

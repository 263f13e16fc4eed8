"""
Cited-side Indicator Service

MNCS, InCites percentile (inverted), Hazen percentile, P100, P100'
và raw 3-year citations cho mọi publication citable.

Quy ước tie:
    - Hazen: mid-rank tăng dần (tie -> trung bình các vị trí)
    - InCites: max-rank giảm dần rồi đảo (= tỷ lệ bài có ít citation hơn)
    - P100: rank trên các giá trị citation UNIQUE
    - P100': số bài có strictly ít citation hơn, chia cho n - 1
"""
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import rankdata

from app.services.corpus_service import CitationIndex, Corpus
from app.services.reference_set_service import ReferenceSet, ReferenceSetService, SetKey
from core.schemas import CITED_SIDE_INDICATORS, Publication

logger = logging.getLogger(__name__)

RAW_WINDOW_YEARS = 3
RANK_INDICATORS = ["mncs", "incites", "hazen", "p100", "p100_prime"]


class RankContext:
    """Các rank của một reference set (tính một lần, dùng cho mọi indicator)"""

    def __init__(self, counts: Sequence[int]):
        counts = np.asarray(counts, dtype=np.int64)
        if len(counts) == 0:
            raise ValueError("RankContext needs at least one count")
        self.counts = counts
        self.n = len(counts)
        self.unique_counts = np.unique(counts)
        self.i_max_unique = len(self.unique_counts) - 1
        self.mean = float(np.mean(counts))
        self.mid_rank = rankdata(counts, method="average")
        self.desc_max_rank = rankdata(-counts, method="max")
        self.strict_lower = (rankdata(counts, method="min") - 1).astype(np.int64)
        self.unique_rank = (rankdata(counts, method="dense") - 1).astype(np.int64)

    @property
    def is_singleton(self) -> bool:
        return self.n == 1

    @property
    def is_all_equal(self) -> bool:
        return self.n > 1 and self.i_max_unique == 0

    def mncs(self) -> np.ndarray:
        if self.mean == 0:
            return np.zeros(self.n)
        return self.counts / self.mean

    def incites(self) -> np.ndarray:
        # 100 - (desc_max_rank / n) * 100 == 100 * strict_lower / n
        return 100.0 * self.strict_lower / self.n

    def hazen(self) -> np.ndarray:
        return (self.mid_rank - 0.5) / self.n * 100.0

    def p100(self) -> np.ndarray:
        if self.i_max_unique == 0:
            return np.zeros(self.n)
        return 100.0 * self.unique_rank / self.i_max_unique

    def p100_prime(self) -> np.ndarray:
        if self.n == 1:
            return np.zeros(1)
        return 100.0 * self.strict_lower / (self.n - 1)

    def scores(self, indicators: Sequence[str]) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name)() for name in indicators}


class CitedSideService:
    """Service tính các indicator phía cited"""

    def __init__(
        self,
        corpus: Corpus,
        index: CitationIndex,
        sets: Dict[SetKey, ReferenceSet],
        reference_set_service: Optional[ReferenceSetService] = None,
        threads: int = 1
    ):
        """
        Args:
            corpus: Corpus
            index: CitationIndex
            sets: Reference sets từ partition_reference_sets
            reference_set_service: Service chứa quy tắc kết hợp đa category
            threads: Số worker khi tính theo từng set
        """
        self.corpus = corpus
        self.index = index
        self.sets = sets
        self.reference_set_service = reference_set_service or ReferenceSetService()
        self.threads = max(1, threads)
        self._contexts: Dict[SetKey, RankContext] = {}

    def rank_context(self, ref_set: ReferenceSet) -> RankContext:
        context = self._contexts.get(ref_set.key)
        if context is None or not np.array_equal(context.counts, ref_set.counts):
            context = RankContext(ref_set.counts)
            self._contexts[ref_set.key] = context
        return context

    # ---------------------------------------------------------- per paper
    def raw_citations_3y(self, pub: Publication) -> int:
        """Citation trong [year, year + 2], cắt tại horizon"""
        self._require_citable(pub)
        upper = min(pub.year + RAW_WINDOW_YEARS - 1, self.corpus.horizon_year)
        return self.index.count_at(self.corpus.position(pub.pub_id), pub.year, upper)

    def mncs(self, pub: Publication) -> float:
        """MNCS kết hợp qua mọi reference set của bài báo"""
        return self._combined(pub, "mncs")

    def incites_percentile(self, pub: Publication, ref_set: Optional[ReferenceSet] = None) -> float:
        return self._per_set_or_combined(pub, ref_set, "incites")

    def hazen_percentile(self, pub: Publication, ref_set: Optional[ReferenceSet] = None) -> float:
        return self._per_set_or_combined(pub, ref_set, "hazen")

    def p100(self, pub: Publication, ref_set: Optional[ReferenceSet] = None) -> float:
        return self._per_set_or_combined(pub, ref_set, "p100")

    def p100_prime(self, pub: Publication, ref_set: Optional[ReferenceSet] = None) -> float:
        return self._per_set_or_combined(pub, ref_set, "p100_prime")

    def score_in_set(self, pub: Publication, ref_set: ReferenceSet, indicator: str) -> float:
        member = ref_set.index_of(pub.pub_id)
        return float(getattr(self.rank_context(ref_set), indicator)()[member])

    def _per_set_or_combined(self, pub: Publication, ref_set: Optional[ReferenceSet], indicator: str) -> float:
        if ref_set is not None:
            return self.score_in_set(pub, ref_set, indicator)
        return self._combined(pub, indicator)

    def _combined(self, pub: Publication, indicator: str) -> float:
        self._require_citable(pub)
        sets = ReferenceSetService.sets_for(self.sets, self.corpus, pub.pub_id)
        return self.reference_set_service.combine_multi_category(
            [self.score_in_set(pub, s, indicator) for s in sets]
        )

    def _require_citable(self, pub: Publication) -> None:
        if pub.doc_type not in self.corpus.citable_types:
            raise ValueError(f"'{pub.pub_id}' has non-citable doc_type '{pub.doc_type}'")

    # -------------------------------------------------------------- bulk
    def score_all(self, indicators: Optional[Sequence[str]] = None):
        """
        Tính các cột cited-side cho mọi publication citable

        Args:
            indicators: Tập con của CITED_SIDE_INDICATORS (None = tất cả)

        Returns:
            (DataFrame pub_id + các cột, metadata dict)
        """
        selected = [c for c in CITED_SIDE_INDICATORS if indicators is None or c in indicators]
        rank_columns = [c for c in RANK_INDICATORS if c in selected]
        corpus = self.corpus
        citable = corpus.citable_positions()
        frame = pd.DataFrame({"pub_id": corpus.pub_ids[citable].astype(str)})

        metadata = {
            "horizon_year": corpus.horizon_year,
            "citable_types": sorted(corpus.citable_types),
            "multi_category_rule": self.reference_set_service.rule.value,
            "cited_window": "[pub_year, horizon_year]",
            "degenerate_sets": [],
            "truncated_window": {"count": 0, "pub_ids": []},
        }

        if "citations_3y" in selected:
            upper = np.minimum(corpus.years + RAW_WINDOW_YEARS - 1, corpus.horizon_year)
            raw = self.index.window_counts(corpus.years, upper)
            frame["citations_3y"] = raw[citable]
            truncated = citable[corpus.years[citable] + RAW_WINDOW_YEARS - 1 > corpus.horizon_year]
            metadata["truncated_window"] = {
                "count": int(len(truncated)),
                "pub_ids": corpus.pub_ids[truncated].astype(str).tolist(),
            }
            if len(truncated):
                logger.warning(f"{len(truncated)} publications have a truncated 3-year window")

        if not rank_columns or len(citable) == 0:
            for column in rank_columns:
                frame[column] = np.zeros(len(citable))
            return frame, metadata

        keys = list(self.sets.keys())
        per_set = Parallel(n_jobs=self.threads, prefer="threads")(
            delayed(self._score_set)(self.sets[key], rank_columns) for key in keys
        )

        n = corpus.n_publications
        totals = {c: np.zeros(n) for c in rank_columns}
        memberships = np.zeros(n, dtype=np.int64)
        # Cộng theo thứ tự key: giống combine_multi_category trên danh sách sort theo category
        for key, (context, scores) in zip(keys, per_set):
            ref_set = self.sets[key]
            self._contexts[key] = context
            for column in rank_columns:
                totals[column][ref_set.positions] += scores[column]
            memberships[ref_set.positions] += 1
            if context.is_singleton or context.is_all_equal:
                metadata["degenerate_sets"].append({
                    "category": ref_set.category,
                    "year": ref_set.year,
                    "n": ref_set.n,
                    "kind": "singleton" if context.is_singleton else "all_equal",
                })

        missing = citable[memberships[citable] == 0]
        if len(missing):
            raise ValueError(f"Publication '{corpus.pub_ids[missing[0]]}' belongs to no reference set")

        for column in rank_columns:
            frame[column] = totals[column][citable] / memberships[citable]

        if metadata["degenerate_sets"]:
            logger.warning(f"{len(metadata['degenerate_sets'])} degenerate reference sets (singleton or all-equal)")
        logger.info(f"Cited-side scores computed for {len(citable)} publications over {len(keys)} sets")
        return frame, metadata

    def _score_set(self, ref_set: ReferenceSet, columns: List[str]):
        context = RankContext(ref_set.counts)
        return context, context.scores(columns)

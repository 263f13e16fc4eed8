"""
Citing-side Indicator Service

SNCS1 = sum 1/a_i, SNCS2 = sum 1/r_i, SNCS3 = sum 1/(p_i * r_i) trên các
citation trong [pub_year, horizon_year].

    r_i: số linked reference của bài citing có năm cited trong [y - w + 1, y]
    a_i: trung bình r của mọi publication cùng journal + năm với bài citing
    p_i: tỷ lệ publication trong cohort đó có r >= 1

w = horizon_year - pub_year + 1 của bài được cite (hoặc w cố định khi override).
Cohort tính trên MỌI publication của journal-year, không chỉ loại citable.
"""
import logging
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.services.corpus_service import CitationIndex, Corpus
from core.schemas import CITING_SIDE_INDICATORS, Publication

logger = logging.getLogger(__name__)


class CohortStats:
    """a (mean windowed linked refs) và p (share với >= 1) của một (journal, year, w)"""

    __slots__ = ("a", "p", "size")

    def __init__(self, a: float, p: float, size: int):
        self.a = a
        self.p = p
        self.size = size

    def __repr__(self) -> str:
        return f"CohortStats(a={self.a}, p={self.p}, size={self.size})"


class CitingSideService:
    """Service tính SNCS1/2/3"""

    def __init__(
        self,
        corpus: Corpus,
        index: CitationIndex,
        fixed_window: Optional[int] = None,
        use_cache: bool = True
    ):
        """
        Args:
            corpus: Corpus
            index: CitationIndex
            fixed_window: w cố định cho mọi bài (None = horizon - pub_year + 1)
            use_cache: Cache cohort statistics theo (journal, year, w)
        """
        if fixed_window is not None and fixed_window < 1:
            raise ValueError(f"fixed_window must be >= 1, got {fixed_window}")
        self.corpus = corpus
        self.index = index
        self.fixed_window = fixed_window
        self.use_cache = use_cache

        linked = corpus.cited_pos >= 0
        self._ref_citing = corpus.citing_pos[linked]
        self._ref_lag = corpus.years[self._ref_citing] - corpus.years[corpus.cited_pos[linked]]

        cohort_frame = pd.DataFrame({"journal_id": corpus.journal_ids, "year": corpus.years})
        self._cohort_code = cohort_frame.groupby(["journal_id", "year"], sort=True).ngroup().to_numpy()
        self._cohort_size = np.bincount(self._cohort_code)
        self._cohort_lookup: Dict[Tuple[str, int], int] = {
            (j, int(y)): int(code)
            for j, y, code in zip(corpus.journal_ids, corpus.years, self._cohort_code)
        }

        self._r_cache: Dict[int, np.ndarray] = {}
        self._cohort_cache: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
        self.anomalies = {"skipped_zero_r": 0, "skipped_zero_a": 0}

    def window_length(self, pub: Publication) -> int:
        if self.fixed_window is not None:
            return self.fixed_window
        return self.corpus.horizon_year - pub.year + 1

    # ----------------------------------------------------------- building blocks
    def linked_reference_count(self, citing: Publication, window: Tuple[int, int]) -> int:
        """
        Số linked reference của bài citing có năm cited nằm trong window

        Args:
            citing: Bài citing
            window: (lower, upper), thường là [citing.year - w + 1, citing.year]
        """
        lower, upper = window
        pos = self.corpus.position(citing.pub_id)
        mask = (self.corpus.citing_pos == pos) & (self.corpus.cited_pos >= 0)
        cited_years = self.corpus.years[self.corpus.cited_pos[mask]]
        return int(np.count_nonzero((cited_years >= lower) & (cited_years <= upper)))

    def r_vector(self, w: int) -> np.ndarray:
        """r của mọi publication với reference window độ dài w"""
        r = self._r_cache.get(w) if self.use_cache else None
        if r is None:
            in_window = (self._ref_lag >= 0) & (self._ref_lag <= w - 1)
            r = np.bincount(self._ref_citing[in_window], minlength=self.corpus.n_publications)
            if self.use_cache:
                self._r_cache[w] = r
        return r

    def _cohort_arrays(self, w: int) -> Tuple[np.ndarray, np.ndarray]:
        cached = self._cohort_cache.get(w) if self.use_cache else None
        if cached is None:
            r = self.r_vector(w)
            a = np.bincount(self._cohort_code, weights=r) / self._cohort_size
            p = np.bincount(self._cohort_code, weights=(r > 0).astype(float)) / self._cohort_size
            cached = (a, p)
            if self.use_cache:
                self._cohort_cache[w] = cached
        return cached

    def cohort_stats(self, journal_id: str, year: int, w: int) -> CohortStats:
        """
        Raises:
            ValueError: Nếu cohort (journal, year) rỗng
        """
        code = self._cohort_lookup.get((journal_id, int(year)))
        if code is None:
            raise ValueError(f"Empty cohort: no publications in journal '{journal_id}' for year {year}")
        size = int(self._cohort_size[code])
        if self.use_cache:
            a, p = self._cohort_arrays(w)
            return CohortStats(float(a[code]), float(p[code]), size)
        members = np.flatnonzero(self._cohort_code == code)
        r = self.r_vector(w)[members]
        return CohortStats(float(r.sum() / size), float(np.count_nonzero(r) / size), size)

    def journal_year_avg_linked_refs(self, journal_id: str, year: int, w: int) -> float:
        return self.cohort_stats(journal_id, year, w).a

    def journal_year_linked_share(self, journal_id: str, year: int, w: int) -> float:
        return self.cohort_stats(journal_id, year, w).p

    # ----------------------------------------------------------- per paper
    def citation_weights(self, pub: Publication):
        """
        Trọng số của từng citation trong [pub.year, horizon] theo thứ tự index

        Returns:
            List (citing pub_id, w1, w2, w3); w = None khi citation bị bỏ qua
        """
        w = self.window_length(pub)
        r_all = self.r_vector(w)
        pos = self.corpus.position(pub.pub_id)
        sl = self.index.slice(pos)
        rows = []
        for citing, year in zip(self.index.citing[sl], self.index.citing_year[sl]):
            if year < pub.year or year > self.corpus.horizon_year:
                continue
            stats = self.cohort_stats(self.corpus.journal_ids[citing], int(year), w)
            r = int(r_all[citing])
            w1 = 1.0 / stats.a if stats.a > 0 else None
            w2 = 1.0 / r if r > 0 else None
            w3 = 1.0 / (stats.p * r) if r > 0 else None
            rows.append((self.corpus.pub_ids[citing], w1, w2, w3))
        return rows

    def sncs1(self, pub: Publication) -> float:
        return self._sum_weights(pub, 1)

    def sncs2(self, pub: Publication) -> float:
        return self._sum_weights(pub, 2)

    def sncs3(self, pub: Publication) -> float:
        return self._sum_weights(pub, 3)

    def _sum_weights(self, pub: Publication, variant: int) -> float:
        if pub.doc_type not in self.corpus.citable_types:
            raise ValueError(f"'{pub.pub_id}' has non-citable doc_type '{pub.doc_type}'")
        total = 0.0
        for row in self.citation_weights(pub):
            weight = row[variant]
            if weight is not None:
                total += weight
        return total

    # ----------------------------------------------------------------- bulk
    def score_all(self, indicators: Optional[Sequence[str]] = None):
        """
        SNCS cho mọi publication citable (vector hoá theo từng w)

        Returns:
            (DataFrame pub_id + các cột sncs, metadata dict)
        """
        selected = [c for c in CITING_SIDE_INDICATORS if indicators is None or c in indicators]
        corpus, index = self.corpus, self.index
        n = corpus.n_publications
        citable = corpus.citable_positions()
        frame = pd.DataFrame({"pub_id": corpus.pub_ids[citable].astype(str)})
        totals = {c: np.zeros(n) for c in CITING_SIDE_INDICATORS}

        if self.fixed_window is not None:
            w_of = np.full(n, self.fixed_window, dtype=np.int64)
        else:
            w_of = corpus.horizon_year - corpus.years + 1

        skipped_r = skipped_a = prepublication = 0
        if index.n_events:
            focal_citable = corpus.citable[index.cited]
            focal_year = corpus.years[index.cited]
            prepublication = int(np.count_nonzero(focal_citable & (index.citing_year < focal_year)))
            in_window = focal_citable & (index.citing_year >= focal_year) & (index.citing_year <= corpus.horizon_year)
            event_w = w_of[index.cited]

            for w in np.unique(event_w[in_window]):
                events = np.flatnonzero(in_window & (event_w == w))
                cited = index.cited[events]
                citing = index.citing[events]
                r = self.r_vector(int(w))[citing]
                a_all, p_all = self._cohort_arrays(int(w))
                a = a_all[self._cohort_code[citing]]
                p = p_all[self._cohort_code[citing]]

                ok_a = a > 0
                ok_r = r > 0
                skipped_a += int(np.count_nonzero(~ok_a))
                skipped_r += int(np.count_nonzero(~ok_r))

                w1 = np.zeros(len(events))
                w1[ok_a] = 1.0 / a[ok_a]
                w2 = np.zeros(len(events))
                w2[ok_r] = 1.0 / r[ok_r]
                w3 = np.zeros(len(events))
                w3[ok_r] = 1.0 / (p[ok_r] * r[ok_r])

                # Mỗi bài được cite thuộc đúng một nhóm w -> cộng theo thứ tự index
                totals["sncs1"] += self._ordered_sum(cited[ok_a], w1[ok_a], n)
                totals["sncs2"] += self._ordered_sum(cited[ok_r], w2[ok_r], n)
                totals["sncs3"] += self._ordered_sum(cited[ok_r], w3[ok_r], n)

        for column in selected:
            frame[column] = totals[column][citable]

        self.anomalies = {"skipped_zero_r": skipped_r, "skipped_zero_a": skipped_a}
        if skipped_r:
            logger.warning(f"{skipped_r} in-window citations skipped: citing paper has no windowed linked reference")
        if prepublication:
            logger.warning(f"{prepublication} citations precede the cited publication year and were excluded")

        metadata = {
            "w_mode": "per_publication" if self.fixed_window is None else f"fixed:{self.fixed_window}",
            "cohort_population": "all_publications",
            "anomalies": {
                "skipped_citations": skipped_r,
                "skipped_zero_cohort_mean": skipped_a,
                "prepublication_citations": prepublication,
            },
            "cohort_cache_size": len(self._cohort_cache),
        }
        logger.info(f"Citing-side scores computed for {len(citable)} publications")
        return frame, metadata

    @staticmethod
    def _ordered_sum(targets: np.ndarray, weights: np.ndarray, n: int) -> np.ndarray:
        if len(targets) == 0:
            return np.zeros(n)
        return np.bincount(targets, weights=weights, minlength=n)

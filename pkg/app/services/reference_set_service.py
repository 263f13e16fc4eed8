"""
Reference Set Service

Chia các publication citable thành reference set theo (category, year)
và cung cấp expected citation rate + quy tắc kết hợp nhiều category.
"""
import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator

from app.services.corpus_service import CitationIndex, Corpus
from core.schemas import MultiCategoryRule

logger = logging.getLogger(__name__)

SetKey = Tuple[str, int]


class ReferenceSet(BaseModel):
    """Các bài báo cùng (category, year) và citation count full-horizon của chúng"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    category: str
    year: int
    member_ids: List[str]
    positions: np.ndarray
    counts: np.ndarray

    @model_validator(mode="after")
    def check_members(self):
        if len(self.member_ids) == 0:
            raise ValueError(f"reference set ({self.category}, {self.year}) is empty")
        if len(self.member_ids) != len(self.counts) or len(self.positions) != len(self.counts):
            raise ValueError("member ids, positions and counts must have equal length")
        if np.any(self.counts < 0):
            raise ValueError("citation counts must be non-negative")
        return self

    @property
    def key(self) -> SetKey:
        return self.category, self.year

    @property
    def n(self) -> int:
        return len(self.member_ids)

    @property
    def members(self) -> List[Tuple[str, int]]:
        return [(pid, int(c)) for pid, c in zip(self.member_ids, self.counts)]

    def index_of(self, pub_id: str) -> int:
        try:
            return self.member_ids.index(pub_id)
        except ValueError:
            raise ValueError(f"'{pub_id}' is not a member of reference set ({self.category}, {self.year})")

    @classmethod
    def from_counts(cls, category: str, year: int, counts: Sequence[int], member_ids: Sequence[str] = None):
        """Tạo reference set độc lập với corpus (dùng cho phân tích / test)"""
        counts = np.asarray(counts, dtype=np.int64)
        ids = list(member_ids) if member_ids is not None else [f"{category}-{year}-{i}" for i in range(len(counts))]
        return cls(category=category, year=year, member_ids=ids, positions=np.arange(len(counts)), counts=counts)


class ReferenceSetService:
    """Service tạo reference set và các phép tính trên reference set"""

    def __init__(self, rule: MultiCategoryRule = MultiCategoryRule.MEAN_OF_PER_CATEGORY_SCORES):
        """
        Args:
            rule: Quy tắc kết hợp điểm đa category (hiện chỉ có mean)
        """
        self.rule = MultiCategoryRule(rule)

    @staticmethod
    def full_horizon_counts(corpus: Corpus, index: CitationIndex) -> np.ndarray:
        """Citation count trong [pub_year, horizon_year] cho mọi publication"""
        upper = np.full(corpus.n_publications, corpus.horizon_year, dtype=np.int64)
        return index.window_counts(corpus.years, upper)

    def partition_reference_sets(self, corpus: Corpus, index: CitationIndex) -> Dict[SetKey, ReferenceSet]:
        """
        Chia publication citable theo (category, year)

        Args:
            corpus: Corpus
            index: CitationIndex của corpus

        Returns:
            Dict (category, year) -> ReferenceSet, sort theo key
        """
        citable = corpus.citable_positions()
        if len(citable) == 0:
            return {}
        counts = self.full_horizon_counts(corpus, index)

        exploded = pd.DataFrame({
            "pos": citable,
            "category": [list(corpus.categories[p]) for p in citable],
        }).explode("category")
        exploded["year"] = corpus.years[exploded["pos"].to_numpy(dtype=np.int64)]

        sets: Dict[SetKey, ReferenceSet] = {}
        for (category, year), group in exploded.groupby(["category", "year"], sort=True):
            positions = group["pos"].to_numpy(dtype=np.int64)
            sets[(category, int(year))] = ReferenceSet(
                category=category,
                year=int(year),
                member_ids=corpus.pub_ids[positions].tolist(),
                positions=positions,
                counts=counts[positions]
            )
        logger.info(f"Built {len(sets)} reference sets over {len(citable)} citable publications")
        return sets

    @staticmethod
    def expected_citation_rate(ref_set: ReferenceSet) -> float:
        """Trung bình citation count của reference set"""
        return float(np.mean(ref_set.counts))

    def combine_multi_category(self, per_category_scores: Sequence[float]) -> float:
        """
        Kết hợp điểm của một bài báo thuộc nhiều category

        Raises:
            ValueError: Nếu danh sách rỗng
        """
        scores = list(per_category_scores)
        if not scores:
            raise ValueError("combine_multi_category needs at least one score")
        # Cộng tuần tự theo thứ tự set key, khớp với đường tính vector hoá
        total = 0.0
        for s in scores:
            total += float(s)
        return total / len(scores)

    @staticmethod
    def sets_for(sets: Dict[SetKey, ReferenceSet], corpus: Corpus, pub_id: str) -> List[ReferenceSet]:
        """Các reference set chứa pub_id, theo thứ tự key"""
        pub = corpus.publication(pub_id)
        found = [sets[(c, pub.year)] for c in sorted(pub.categories) if (c, pub.year) in sets]
        if not found:
            raise ValueError(f"'{pub_id}' belongs to no reference set (not citable?)")
        return found

    @staticmethod
    def dump_reference_sets(sets: Dict[SetKey, ReferenceSet]) -> pd.DataFrame:
        """Một dòng cho mỗi reference set: category, year, n, mean, min, max"""
        rows = [
            {
                "category": s.category,
                "year": s.year,
                "n": s.n,
                "mean": float(np.mean(s.counts)),
                "min": int(np.min(s.counts)),
                "max": int(np.max(s.counts)),
            }
            for s in sets.values()
        ]
        return pd.DataFrame(rows, columns=["category", "year", "n", "mean", "min", "max"])

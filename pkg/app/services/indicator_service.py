"""
Indicator Service

Ghép các cột cited-side và citing-side thành IndicatorTable, thêm cột z_.
"""
import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from app.services.cited_side_service import CitedSideService
from app.services.citing_side_service import CitingSideService
from app.services.corpus_service import CitationIndex, Corpus
from app.services.reference_set_service import ReferenceSetService
from app.services.stats_service import StatsService
from core.schemas import CITED_SIDE_INDICATORS, CITING_SIDE_INDICATORS, INDICATOR_COLUMNS, MultiCategoryRule

logger = logging.getLogger(__name__)


def parse_indicator_selection(selection: Optional[str]) -> List[str]:
    """
    "mncs,hazen" -> ["mncs", "hazen"] theo thứ tự cột chuẩn

    Raises:
        ValueError: Tên indicator không hợp lệ
    """
    if selection is None or not selection.strip():
        return list(INDICATOR_COLUMNS)
    names = [s.strip() for s in selection.split(",") if s.strip()]
    unknown = [n for n in names if n not in INDICATOR_COLUMNS]
    if unknown:
        raise ValueError(f"Unknown indicators: {', '.join(unknown)} (choose from {', '.join(INDICATOR_COLUMNS)})")
    return [c for c in INDICATOR_COLUMNS if c in names]


class IndicatorTable:
    """Điểm từng publication citable + metadata của lần tính"""

    def __init__(self, frame: pd.DataFrame, metadata: Dict[str, Any]):
        self.frame = frame
        self.metadata = metadata

    @property
    def indicators(self) -> List[str]:
        return [c for c in self.frame.columns if c in INDICATOR_COLUMNS]

    def __len__(self) -> int:
        return len(self.frame)


class IndicatorService:
    """Service chạy toàn bộ pipeline tính indicator"""

    def __init__(
        self,
        corpus: Corpus,
        index: CitationIndex,
        rule: MultiCategoryRule = MultiCategoryRule.MEAN_OF_PER_CATEGORY_SCORES,
        threads: int = 1,
        fixed_window: Optional[int] = None
    ):
        self.corpus = corpus
        self.index = index
        self.reference_set_service = ReferenceSetService(rule)
        self.threads = threads
        self.fixed_window = fixed_window
        self.sets = None

    def compute(self, indicators: Optional[Sequence[str]] = None) -> IndicatorTable:
        """
        Tính IndicatorTable

        Args:
            indicators: Tập con của INDICATOR_COLUMNS (None = tất cả)

        Returns:
            IndicatorTable với cột pub_id, các indicator đã chọn và cột z_ tương ứng
        """
        selected = [c for c in INDICATOR_COLUMNS if indicators is None or c in indicators]
        self.sets = self.reference_set_service.partition_reference_sets(self.corpus, self.index)

        frame = pd.DataFrame({"pub_id": self.corpus.pub_ids[self.corpus.citable_positions()].astype(str)})
        metadata: Dict[str, Any] = {"indicators": selected, "n_publications": len(frame)}

        cited_columns = [c for c in selected if c in CITED_SIDE_INDICATORS]
        if cited_columns:
            cited = CitedSideService(
                self.corpus, self.index, self.sets, self.reference_set_service, self.threads
            )
            cited_frame, cited_meta = cited.score_all(cited_columns)
            for column in cited_columns:
                frame[column] = cited_frame[column].to_numpy()
            metadata["cited_side"] = cited_meta

        citing_columns = [c for c in selected if c in CITING_SIDE_INDICATORS]
        if citing_columns:
            citing = CitingSideService(self.corpus, self.index, self.fixed_window)
            citing_frame, citing_meta = citing.score_all(citing_columns)
            for column in citing_columns:
                frame[column] = citing_frame[column].to_numpy()
            metadata["citing_side"] = citing_meta

        metadata["z_undefined"] = self.add_z_columns(frame, selected)
        metadata["horizon_year"] = self.corpus.horizon_year
        metadata["citable_types"] = sorted(self.corpus.citable_types)
        metadata["multi_category_rule"] = self.reference_set_service.rule.value
        return IndicatorTable(frame, metadata)

    @staticmethod
    def add_z_columns(frame: pd.DataFrame, columns: Sequence[str]) -> List[str]:
        """Thêm z_<col>; cột không z-transform được (hằng, n < 2) điền 0.0 và trả về tên"""
        undefined = []
        for column in columns:
            try:
                frame[f"z_{column}"] = StatsService.z_transform(frame[column].to_numpy(dtype=float))
            except ValueError as e:
                frame[f"z_{column}"] = np.zeros(len(frame))
                undefined.append(column)
                logger.warning(f"z_{column} set to 0.0: {e}")
        return undefined

"""
Synth Service

Sinh corpus tổng hợp có văn hoá trích dẫn khác nhau theo field/year và
recommendation gắn với chất lượng ẩn của bài báo.

    - Focal papers (citable) theo field x year, citation ~ negative binomial
      với mean = field rate x year factor x exp(sigma q - sigma^2 / 2)
    - Citing papers (doc_type "other") theo cohort journal-year của từng field,
      số linked reference quanh mean_linked_refs của field
    - Unlinked reference tới id ngoài corpus theo linked_ref_share
"""
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
import yaml
from scipy.stats import rankdata

from app.services.corpus_service import Corpus, CorpusService
from core.schemas import CorpusConfig, FieldProfile, GeneratorSpec, Publication

logger = logging.getLogger(__name__)

BASE_LINKED_REFS = 12.0
BASE_CITATION_RATE = 10.77
CITABLE_CYCLE = ("article",) * 8 + ("review", "letter")
# P(rater thêm) = (hạng của đánh giá đầu)^EXTRA_RATER_EXPONENT
EXTRA_RATER_EXPONENT = 3


def _proportional_refs(rate: float) -> float:
    """Linked refs tỷ lệ với citation rate của field"""
    return round(BASE_LINKED_REFS * rate / BASE_CITATION_RATE, 2)


PRESETS: Dict[str, Dict] = {
    "two-cultures": {
        "fields": [
            {"label": "engineering", "citation_rate": 10.77, "mean_linked_refs": _proportional_refs(10.77),
             "linked_ref_share": 0.9},
            {"label": "medicine", "citation_rate": 16.85, "mean_linked_refs": _proportional_refs(16.85),
             "linked_ref_share": 0.9},
        ],
    },
    "humanities-stress": {
        "fields": [
            {"label": "engineering", "citation_rate": 10.77, "mean_linked_refs": _proportional_refs(10.77),
             "linked_ref_share": 0.9},
            {"label": "medicine", "citation_rate": 16.85, "mean_linked_refs": _proportional_refs(16.85),
             "linked_ref_share": 0.9},
            {"label": "humanities", "citation_rate": 3.0, "mean_linked_refs": _proportional_refs(3.0),
             "linked_ref_share": 0.3},
        ],
    },
}


def preset_spec(name: str, **overrides) -> GeneratorSpec:
    """
    Raises:
        ValueError: Preset không tồn tại
    """
    if name not in PRESETS:
        raise ValueError(f"Unknown preset '{name}' (available: {', '.join(sorted(PRESETS))})")
    payload = dict(PRESETS[name])
    payload.update({k: v for k, v in overrides.items() if v is not None})
    return GeneratorSpec.model_validate(payload)


def load_generator_spec(path: Union[str, Path]) -> GeneratorSpec:
    """
    Đọc GeneratorSpec từ file YAML hoặc JSON

    Raises:
        FileNotFoundError: Nếu file không tồn tại
        ValueError: Nội dung không hợp lệ
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Generator spec not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        if path.suffix.lower() == ".json":
            payload = json.load(f)
        else:
            payload = yaml.safe_load(f)
    if not isinstance(payload, dict):
        raise ValueError(f"Generator spec {path} must be a mapping")
    if "preset" in payload:
        name = payload.pop("preset")
        return preset_spec(name, **payload)
    return GeneratorSpec.model_validate(payload)


class SyntheticCorpus:
    """Corpus tổng hợp + chất lượng ẩn của các focal paper"""

    def __init__(self, corpus: Corpus, spec: GeneratorSpec, seed: int, focal_count: int, quality: np.ndarray):
        self.corpus = corpus
        self.spec = spec
        self.seed = seed
        self.focal_count = focal_count  # focal papers chiếm các vị trí đầu tiên
        self.quality = quality

    @property
    def focal_ids(self) -> np.ndarray:
        return self.corpus.pub_ids[: self.focal_count]


class SynthService:
    """Service sinh corpus và recommendation tổng hợp"""

    def __init__(self, spec: GeneratorSpec):
        """
        Args:
            spec: GeneratorSpec đã validate
        """
        self.spec = spec

    def _resolve_seed(self, seed: Optional[int]) -> int:
        seed = seed if seed is not None else self.spec.seed
        if seed is None:
            raise ValueError("A seed is required for synthetic generation")
        return int(seed)

    def year_factors(self) -> np.ndarray:
        """Hệ số citation theo năm, nội suy tuyến tính, chuẩn hoá về mean 1"""
        n_years = self.spec.year_last - self.spec.year_first + 1
        rates = np.linspace(self.spec.year_rate_first, self.spec.year_rate_last, n_years)
        return rates / rates.mean()

    # -------------------------------------------------------------- corpus
    def generate_corpus(self, seed: Optional[int] = None) -> SyntheticCorpus:
        """
        Sinh corpus tổng hợp

        Args:
            seed: Seed (mặc định lấy spec.seed)

        Returns:
            SyntheticCorpus

        Raises:
            ValueError: Spec không khả thi (cần quá nhiều citing papers trong một field-year)
        """
        spec = self.spec
        seed = self._resolve_seed(seed)
        rng = np.random.default_rng(seed)
        fields: List[FieldProfile] = spec.fields
        n_fields = len(fields)
        years = np.arange(spec.year_first, spec.year_last + 1)
        n_years = len(years)
        per_cell = spec.papers_per_field_year

        # Focal papers
        focal_field = np.repeat(np.arange(n_fields), n_years * per_cell)
        focal_year = np.tile(np.repeat(years, per_cell), n_fields)
        focal_serial = np.tile(np.arange(per_cell), n_fields * n_years)
        n_focal = len(focal_field)

        rates = np.array([f.citation_rate for f in fields])
        dispersion = np.array([f.dispersion for f in fields])
        sigma = spec.quality_sigma
        quality = rng.standard_normal(n_focal)
        mu = (
            rates[focal_field]
            * self.year_factors()[focal_year - spec.year_first]
            * np.exp(sigma * quality - sigma ** 2 / 2)
        )
        k = dispersion[focal_field]
        citations = rng.negative_binomial(k, k / (k + mu))

        # Citation events: năm citing đều trong [year, horizon]
        ev_focal = np.repeat(np.arange(n_focal), citations)
        span = spec.horizon_year - focal_year[ev_focal] + 1
        ev_year = focal_year[ev_focal] + rng.integers(0, span)

        citing, citing_meta = self._assign_citing_papers(rng, focal_field, ev_focal, ev_year)

        publications = self._focal_publications(focal_field, focal_year, focal_serial)
        focal_ids = [p.pub_id for p in publications]
        citing_ids = self._citing_ids(citing_meta)
        publications.extend(self._citing_publications(citing_meta, citing_ids))

        edge_citing, edge_cited = self._edges(rng, citing, ev_focal, citing_meta, citing_ids, focal_ids)

        config = CorpusConfig(horizon_year=spec.horizon_year, year_min=spec.year_first)
        corpus = Corpus(publications, edge_citing, edge_cited, config)
        logger.info(
            f"Generated synthetic corpus: {n_focal} focal + {len(citing_ids)} citing papers, "
            f"{len(ev_focal)} citations, {corpus.n_unlinked} unlinked references (seed={seed})"
        )
        return SyntheticCorpus(corpus, spec, seed, n_focal, quality)

    def _assign_citing_papers(self, rng, focal_field, ev_focal, ev_year):
        """
        Gán mỗi citation event cho một citing paper trong cohort (field, năm citing).

        Mỗi focal paper lấy các slot liên tiếp (start + j) mod M, nên không có
        citing paper nào cite cùng một focal paper hai lần.
        """
        spec = self.spec
        n_fields = len(spec.fields)
        n_citing_years = spec.horizon_year - spec.year_first + 1
        n_groups = n_fields * n_citing_years

        group = focal_field[ev_focal] * n_citing_years + (ev_year - spec.year_first)
        order = np.lexsort((ev_focal, group))
        ev_focal_sorted = ev_focal[order]
        group_sorted = group[order]

        n_events = len(order)
        if n_events:
            change = np.r_[True, (group_sorted[1:] != group_sorted[:-1]) | (ev_focal_sorted[1:] != ev_focal_sorted[:-1])]
        else:
            change = np.zeros(0, dtype=bool)
        run_start = np.flatnonzero(change)
        run_id = np.cumsum(change) - 1
        run_length = np.diff(np.r_[run_start, n_events])
        offset_in_run = np.arange(n_events) - run_start[run_id] if n_events else np.zeros(0, dtype=np.int64)

        events_per_group = np.bincount(group_sorted, minlength=n_groups)
        max_run = np.zeros(n_groups, dtype=np.int64)
        if n_events:
            np.maximum.at(max_run, group_sorted[run_start], run_length)

        mean_refs = np.repeat([f.mean_linked_refs for f in spec.fields], n_citing_years)
        pool = np.where(
            events_per_group > 0,
            np.maximum(np.ceil(events_per_group / mean_refs).astype(np.int64), max_run),
            0
        )
        over = np.flatnonzero(pool > spec.max_citing_papers_per_field_year)
        if len(over):
            g = over[0]
            label = spec.fields[g // n_citing_years].label
            raise ValueError(
                f"Infeasible spec: field '{label}' year {spec.year_first + g % n_citing_years} needs "
                f"{pool[g]} citing papers for {events_per_group[g]} citations, above "
                f"max_citing_papers_per_field_year={spec.max_citing_papers_per_field_year}"
            )

        pool_offset = np.r_[0, np.cumsum(pool)[:-1]]
        run_group = group_sorted[run_start]
        start = rng.integers(0, np.maximum(pool[run_group], 1)) if len(run_start) else np.zeros(0, dtype=np.int64)
        slot = (start[run_id] + offset_in_run) % np.maximum(pool[group_sorted], 1)

        citing = np.empty(n_events, dtype=np.int64)
        citing[order] = pool_offset[group_sorted] + slot

        meta = pd.DataFrame({
            "field": np.repeat(np.arange(n_groups) // n_citing_years, pool),
            "year": np.repeat(spec.year_first + np.arange(n_groups) % n_citing_years, pool),
            "slot": np.concatenate([np.arange(m) for m in pool]) if pool.sum() else np.zeros(0, dtype=np.int64),
        })
        return citing, meta

    def _focal_publications(self, focal_field, focal_year, focal_serial) -> List[Publication]:
        spec = self.spec
        labels = [f.label for f in spec.fields]
        return [
            Publication(
                pub_id=f"P-{labels[f]}-{y}-{i:06d}",
                year=int(y),
                journal_id=f"{labels[f]}-J{i % spec.journals_per_field + 1:02d}",
                doc_type=CITABLE_CYCLE[i % len(CITABLE_CYCLE)],
                categories=[labels[f]]
            )
            for f, y, i in zip(focal_field.tolist(), focal_year.tolist(), focal_serial.tolist())
        ]

    def _citing_ids(self, meta: pd.DataFrame) -> List[str]:
        labels = [f.label for f in self.spec.fields]
        return [
            f"C-{labels[f]}-{y}-{s:06d}"
            for f, y, s in zip(meta["field"].tolist(), meta["year"].tolist(), meta["slot"].tolist())
        ]

    def _citing_publications(self, meta: pd.DataFrame, citing_ids: List[str]) -> List[Publication]:
        labels = [f.label for f in self.spec.fields]
        n_journals = self.spec.citing_journals_per_field
        return [
            Publication(
                pub_id=pid,
                year=int(y),
                journal_id=f"{labels[f]}-C{s % n_journals + 1:02d}",
                doc_type="other",
                categories=[labels[f]]
            )
            for pid, f, y, s in zip(citing_ids, meta["field"].tolist(), meta["year"].tolist(), meta["slot"].tolist())
        ]

    def _edges(self, rng, citing, ev_focal, meta, citing_ids, focal_ids):
        """Linked edges + unlinked edges, sort theo citing paper"""
        n_citing = len(citing_ids)
        load = np.bincount(citing, minlength=n_citing)
        share = np.array([f.linked_ref_share for f in self.spec.fields])[meta["field"].to_numpy(dtype=np.int64)]
        unlinked = rng.poisson(load * (1.0 - share) / share) if n_citing else np.zeros(0, dtype=np.int64)

        un_citing = np.repeat(np.arange(n_citing), unlinked)
        un_serial = np.arange(len(un_citing)) - np.repeat(np.r_[0, np.cumsum(unlinked)[:-1]], unlinked)

        all_citing = np.r_[citing, un_citing]
        kind = np.r_[np.zeros(len(citing), dtype=np.int64), np.ones(len(un_citing), dtype=np.int64)]
        sub = np.r_[ev_focal, un_serial]
        order = np.lexsort((sub, kind, all_citing))

        edge_citing, edge_cited = [], []
        n_linked = len(citing)
        for e in order.tolist():
            c = citing_ids[all_citing[e]]
            edge_citing.append(c)
            if e < n_linked:
                edge_cited.append(focal_ids[ev_focal[e]])
            else:
                edge_cited.append(f"EXT-{c}-{sub[e]:03d}")
        return edge_citing, edge_cited

    # ------------------------------------------------------ recommendations
    def generate_recommendations(
        self,
        synthetic: SyntheticCorpus,
        coupling: Optional[float] = None,
        seed: Optional[int] = None
    ) -> pd.DataFrame:
        """
        Sinh recommendation (pub_id, rater_id, score, seq) cho một phần focal papers

        Điểm ẩn của bài u = coupling * q + sqrt(1 - coupling^2) * e. Rater đầu tiên
        thấy u + rater_noise * e1; rater thêm đồng thuận với rater đầu (lệch
        rater_agreement_noise). Xác suất có rater thêm tăng theo hạng của đánh giá
        đầu (rank^3), nên bài được đánh giá cao có nhiều recommendation hơn.
        Ngưỡng level lấy theo quantile của toàn bộ record để tỷ lệ
        Good / Very good / Exceptional khớp level_shares.

        Args:
            synthetic: Corpus tổng hợp (chứa chất lượng ẩn q)
            coupling: Mức gắn giữa recommendation và q, trong [0, 1]
            seed: Seed (mặc định seed của corpus)
        """
        spec = self.spec
        coupling = spec.coupling if coupling is None else coupling
        if not 0.0 <= coupling <= 1.0:
            raise ValueError(f"coupling must be in [0, 1], got {coupling}")
        seed = synthetic.seed if seed is None else seed
        rng = np.random.default_rng([int(seed), 1])

        n_focal = synthetic.focal_count
        n_selected = max(1, int(round(spec.recommended_share * n_focal)))
        selected = np.sort(rng.choice(n_focal, size=n_selected, replace=False))

        latent = coupling * synthetic.quality[selected] + math.sqrt(1.0 - coupling ** 2) * rng.standard_normal(n_selected)
        first = latent + spec.rater_noise * rng.standard_normal(n_selected)
        if spec.max_raters > 1:
            extra_prob = ((rankdata(first) - 0.5) / n_selected) ** EXTRA_RATER_EXPONENT
            n_raters = 1 + rng.binomial(spec.max_raters - 1, extra_prob)
        else:
            n_raters = np.ones(n_selected, dtype=np.int64)

        paper = np.repeat(np.arange(n_selected), n_raters)
        seq = np.arange(len(paper)) - np.repeat(np.r_[0, np.cumsum(n_raters)[:-1]], n_raters)
        agreement = spec.rater_agreement_noise * rng.standard_normal(len(paper))
        perceived = first[paper] + np.where(seq > 0, agreement, 0.0)

        cuts = np.cumsum(spec.level_shares)[:2]
        thresholds = np.quantile(perceived, cuts)
        score = 1 + (perceived > thresholds[0]).astype(np.int64) + (perceived > thresholds[1]).astype(np.int64)

        base = rng.integers(0, spec.rater_pool, size=n_selected)
        rater = (base[paper] + seq) % spec.rater_pool

        pub_ids = synthetic.corpus.pub_ids[selected[paper]].astype(str)
        frame = pd.DataFrame({
            "pub_id": pub_ids,
            "rater_id": [f"R{r:05d}" for r in rater.tolist()],
            "score": score,
            "seq": seq + 1,
        })
        logger.info(
            f"Generated {len(frame)} recommendations for {n_selected} papers "
            f"(coupling={coupling}, level counts={np.bincount(score, minlength=4)[1:].tolist()})"
        )
        return frame

    # ---------------------------------------------------------------- write
    @staticmethod
    def write(synthetic: SyntheticCorpus, recommendations: pd.DataFrame, out_dir: Union[str, Path]) -> Dict[str, Path]:
        """Ghi publications.tsv, references.tsv, recommendations.tsv"""
        out_dir = Path(out_dir)
        pub_path, ref_path = CorpusService.write_corpus(synthetic.corpus, out_dir, "tsv")
        rec_path = out_dir / "recommendations.tsv"
        recommendations.to_csv(rec_path, sep="\t", index=False, lineterminator="\n")
        return {"publications": pub_path, "references": ref_path, "recommendations": rec_path}

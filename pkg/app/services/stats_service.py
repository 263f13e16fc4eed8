"""
Stats Service

Đánh giá indicator so với recommendation của chuyên gia:
    - Spearman + 95% CI (Fisher z)
    - z-transformation (sample SD, ddof = 1)
    - Hồi quy z lên dummy mức recommendation ("Good" là reference)
    - Cluster bootstrap SE (resample theo bài báo)
    - Predictive margins với 95% CI
    - Thống kê citation theo category
"""
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, ValidationError
from scipy.stats import norm, rankdata

from app.services.corpus_service import CitationIndex, Corpus
from core.schemas import (
    CorrelationRow,
    EvaluationReport,
    MarginRow,
    MarginsResult,
    RecommendationRecord,
    RegressionResult,
    SCORE_LABELS,
)

logger = logging.getLogger(__name__)

CI_Z = 1.96
STAR_THRESHOLD = 0.001
DRAW_BUDGET_PER_REPLICATE = 100
LEVELS = (1, 2, 3)
RECOMMENDATION_COLUMNS = ["pub_id", "rater_id", "score", "seq"]


class BootstrapResult(BaseModel):
    """Kết quả cluster bootstrap: hệ số và margins của từng replicate"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    coefficients: np.ndarray  # reps x 3: b0, b_vg, b_ex
    margins: np.ndarray  # reps x 3: mean z theo level
    reps: int
    seed: int
    draws: int

    @property
    def coefficient_se(self) -> np.ndarray:
        return np.std(self.coefficients, axis=0, ddof=1)

    @property
    def margin_se(self) -> np.ndarray:
        return np.std(self.margins, axis=0, ddof=1)


# --------------------------------------------------------------- recommendations
def records_frame(records: Sequence[RecommendationRecord]) -> pd.DataFrame:
    frame = pd.DataFrame([r.model_dump() for r in records], columns=RECOMMENDATION_COLUMNS)
    return check_records(frame)


def check_records(frame: pd.DataFrame) -> pd.DataFrame:
    """
    Kiểm tra bảng recommendation

    Raises:
        ValueError: score ngoài {1,2,3}, (pub_id, rater_id) trùng, seq trùng trong một bài
    """
    missing = [c for c in RECOMMENDATION_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"Recommendations are missing columns: {', '.join(missing)}")
    frame = frame[RECOMMENDATION_COLUMNS].copy()
    frame["pub_id"] = frame["pub_id"].astype(str)
    frame["rater_id"] = frame["rater_id"].astype(str)
    frame["score"] = frame["score"].astype(np.int64)
    frame["seq"] = frame["seq"].astype(np.int64)

    bad = ~frame["score"].isin(LEVELS)
    if bad.any():
        row = frame[bad].iloc[0]
        raise ValueError(f"Recommendation for '{row['pub_id']}' has score {row['score']} (expected 1, 2 or 3)")
    dup_rater = frame.duplicated(subset=["pub_id", "rater_id"])
    if dup_rater.any():
        row = frame[dup_rater].iloc[0]
        raise ValueError(f"Rater '{row['rater_id']}' recommended '{row['pub_id']}' more than once")
    dup_seq = frame.duplicated(subset=["pub_id", "seq"])
    if dup_seq.any():
        row = frame[dup_seq].iloc[0]
        raise ValueError(f"Duplicate seq {row['seq']} for '{row['pub_id']}'")
    return frame.reset_index(drop=True)


def load_recommendations(path: Union[str, Path]) -> pd.DataFrame:
    """
    Đọc file recommendations (.tsv hoặc .jsonl: pub_id, rater_id, score, seq)

    Raises:
        FileNotFoundError: Nếu file không tồn tại
        ValueError: Dòng sai định dạng (kèm số dòng)
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Recommendations file not found: {path}")
    if path.suffix.lower() == ".jsonl":
        frame = pd.read_json(path, lines=True, dtype={"pub_id": str, "rater_id": str})
    elif path.suffix.lower() == ".tsv":
        frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False)
    else:
        raise ValueError(f"Unsupported recommendations format '{path.suffix}' (expected .tsv or .jsonl)")

    header_offset = 2 if path.suffix.lower() == ".tsv" else 1
    records = []
    for i, row in enumerate(frame.to_dict(orient="records")):
        try:
            records.append(RecommendationRecord.model_validate(row))
        except ValidationError as e:
            raise ValueError(f"Malformed recommendation at line {i + header_offset}: {e.errors()[0]['msg']}") from e
    logger.info(f"Loaded {len(records)} recommendations from {path}")
    return records_frame(records)


class StatsService:
    """Service thống kê đánh giá indicator"""

    def __init__(self, threads: int = 1):
        """
        Args:
            threads: Số worker cho bootstrap replicates
        """
        self.threads = max(1, threads)

    # ------------------------------------------------------------ basics
    @staticmethod
    def dedup_first_recommendation(records: pd.DataFrame) -> pd.DataFrame:
        """Giữ recommendation có seq nhỏ nhất của mỗi bài, sort theo pub_id"""
        first = (
            records.sort_values(["pub_id", "seq"], kind="mergesort")
            .drop_duplicates(subset="pub_id", keep="first")
            .reset_index(drop=True)
        )
        return first

    @staticmethod
    def spearman(x: Sequence[float], y: Sequence[float]) -> float:
        """
        Spearman rho = Pearson của mid-ranks

        Raises:
            ValueError: Độ dài khác nhau, n < 3, hoặc vector hằng ("undefined correlation")
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(x) != len(y):
            raise ValueError(f"Vectors differ in length ({len(x)} vs {len(y)})")
        if len(x) < 3:
            raise ValueError(f"Spearman needs at least 3 observations, got {len(x)}")
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            raise ValueError("undefined correlation: constant input vector")
        rx = rankdata(x, method="average")
        ry = rankdata(y, method="average")
        dx = rx - rx.mean()
        dy = ry - ry.mean()
        rho = float(np.dot(dx, dy) / math.sqrt(np.dot(dx, dx) * np.dot(dy, dy)))
        return max(-1.0, min(1.0, rho))

    @staticmethod
    def spearman_ci(rho: float, n: int) -> Tuple[float, float]:
        """
        95% CI qua Fisher z: tanh(atanh(rho) +/- 1.96 / sqrt(n - 3))

        Raises:
            ValueError: Nếu n < 4
        """
        if n < 4:
            raise ValueError(f"Confidence interval needs n >= 4, got {n}")
        if abs(rho) >= 1.0:
            logger.warning(f"Degenerate confidence interval for rho = {rho}")
            return float(rho), float(rho)
        z = math.atanh(rho)
        half = CI_Z / math.sqrt(n - 3)
        return math.tanh(z - half), math.tanh(z + half)

    @staticmethod
    def z_transform(values: Sequence[float]) -> np.ndarray:
        """
        (v - mean) / sd với sample SD (ddof = 1)

        Raises:
            ValueError: n < 2 hoặc giá trị hằng
        """
        values = np.asarray(values, dtype=float)
        if len(values) < 2:
            raise ValueError(f"z-transformation needs at least 2 values, got {len(values)}")
        if np.ptp(values) == 0:
            raise ValueError("cannot z-transform a constant column")
        return (values - values.mean()) / values.std(ddof=1)

    @staticmethod
    def p_value(t: Optional[float]) -> Optional[float]:
        if t is None or not math.isfinite(t):
            return None
        return float(2.0 * norm.sf(abs(t)))

    @staticmethod
    def stars(p: Optional[float]) -> str:
        return "***" if p is not None and p < STAR_THRESHOLD else ""

    # -------------------------------------------------------- regression
    @staticmethod
    def _check_levels(scores: np.ndarray) -> None:
        absent = [SCORE_LABELS[level] for level in LEVELS if not np.any(scores == level)]
        if absent:
            raise ValueError(f"Recommendation levels missing from the data: {', '.join(absent)}")

    def fit_dummy_regression(
        self,
        z: Sequence[float],
        scores: Sequence[int],
        indicator: str = "",
        clusters: Optional[Sequence[str]] = None
    ) -> RegressionResult:
        """
        OLS z ~ 1 + [score = 2] + [score = 3]

        Args:
            z: z-score của indicator, một giá trị cho mỗi record
            scores: Mức recommendation 1/2/3
            indicator: Tên indicator
            clusters: pub_id của từng record (chỉ dùng để đếm cluster)

        Returns:
            RegressionResult với point estimates và naive OLS SE

        Raises:
            ValueError: Nếu thiếu mức recommendation
        """
        z = np.asarray(z, dtype=float)
        scores = np.asarray(scores, dtype=np.int64)
        if len(z) != len(scores):
            raise ValueError("z and scores differ in length")
        self._check_levels(scores)

        design = np.column_stack([np.ones(len(z)), scores == 2, scores == 3]).astype(float)
        beta, _, _, _ = np.linalg.lstsq(design, z, rcond=None)

        naive = [None, None, None]
        if len(z) > 3:
            residuals = z - design @ beta
            sigma2 = float(residuals @ residuals) / (len(z) - 3)
            cov = sigma2 * np.linalg.inv(design.T @ design)
            naive = [float(math.sqrt(max(v, 0.0))) for v in np.diag(cov)]

        n_clusters = len(set(clusters)) if clusters is not None else len(z)
        return RegressionResult(
            indicator=indicator,
            b0=float(beta[0]),
            b_vg=float(beta[1]),
            b_ex=float(beta[2]),
            naive_se_b0=naive[0],
            naive_se_vg=naive[1],
            naive_se_ex=naive[2],
            n_records=len(z),
            n_clusters=n_clusters
        )

    def cluster_bootstrap(
        self,
        z: Sequence[float],
        scores: Sequence[int],
        clusters: Optional[Sequence[str]],
        reps: int,
        seed: int
    ) -> BootstrapResult:
        """
        Resample cluster (bài báo) có hoàn lại, đủ số cluster ban đầu, refit mỗi replicate

        Replicate r dùng np.random.default_rng([seed, r]) nên kết quả giống nhau
        với mọi số thread. Replicate thiếu một mức recommendation được rút lại;
        tổng số lần rút của mọi replicate không vượt DRAW_BUDGET_PER_REPLICATE * reps.

        Raises:
            ValueError: reps < 2, hoặc vượt tổng budget mà vẫn thiếu mức
        """
        if reps < 2:
            raise ValueError(f"Bootstrap needs reps >= 2, got {reps}")
        z = np.asarray(z, dtype=float)
        scores = np.asarray(scores, dtype=np.int64)
        self._check_levels(scores)
        if clusters is None:
            codes = np.arange(len(z))
            n_clusters = len(z)
        else:
            codes, uniques = pd.factorize(pd.Series(list(clusters)))
            n_clusters = len(uniques)

        # Sufficient statistics theo cluster: số record và tổng z của từng level
        level_idx = scores - 1
        counts = np.zeros((n_clusters, 3))
        sums = np.zeros((n_clusters, 3))
        np.add.at(counts, (codes, level_idx), 1.0)
        np.add.at(sums, (codes, level_idx), z)
        budget = DRAW_BUDGET_PER_REPLICATE * reps

        def replicate(r: int):
            rng = np.random.default_rng([seed, r])
            for attempt in range(1, budget + 1):
                draw = rng.integers(0, n_clusters, size=n_clusters)
                weights = np.bincount(draw, minlength=n_clusters).astype(float)
                n_level = weights @ counts
                if np.all(n_level > 0):
                    return (weights @ sums) / n_level, attempt
            return None, budget

        results = Parallel(n_jobs=self.threads, prefer="threads")(
            delayed(replicate)(r) for r in range(reps)
        )
        draws = int(sum(a for _, a in results))
        if draws > budget or any(m is None for m, _ in results):
            raise ValueError(
                f"Bootstrap needed more than {budget} draws to get replicates with every recommendation level"
            )
        margins = np.array([m for m, _ in results])
        coefficients = np.column_stack([
            margins[:, 0],
            margins[:, 1] - margins[:, 0],
            margins[:, 2] - margins[:, 0],
        ])
        if draws > reps:
            logger.info(f"Bootstrap redrew {draws - reps} replicates lacking a recommendation level")
        return BootstrapResult(coefficients=coefficients, margins=margins, reps=reps, seed=seed, draws=draws)

    def with_bootstrap(self, fit: RegressionResult, boot: BootstrapResult) -> RegressionResult:
        """Gắn bootstrap SE, t và p-value vào RegressionResult"""
        se = boot.coefficient_se
        update = {"reps": boot.reps, "seed": boot.seed}
        for term, coef, s in zip(("b0", "vg", "ex"), (fit.b0, fit.b_vg, fit.b_ex), se):
            s = float(s)
            t = coef / s if s > 0 else None
            update[f"se_{term}"] = s
            update[f"t_{term}"] = t
            update[f"p_{term}"] = self.p_value(t)
        return fit.model_copy(update=update)

    def predictive_margins(
        self,
        fit: RegressionResult,
        scores: Sequence[int],
        bootstrap: Optional[BootstrapResult] = None,
        percentile: bool = False
    ) -> MarginsResult:
        """
        Margin của mỗi level = giá trị dự đoán của model = group mean

        Args:
            fit: RegressionResult đã fit
            scores: Mức recommendation của từng record (để đếm group size)
            bootstrap: Replicates cho CI (None -> không có CI)
            percentile: Dùng percentile CI (2.5%, 97.5%) thay vì margin +/- 1.96 SE
        """
        scores = np.asarray(scores, dtype=np.int64)
        predicted = [fit.b0, fit.b0 + fit.b_vg, fit.b0 + fit.b_ex]
        rows = []
        for k, level in enumerate(LEVELS):
            se = ci_low = ci_high = None
            if bootstrap is not None:
                se = float(bootstrap.margin_se[k])
                if percentile:
                    ci_low, ci_high = (float(v) for v in np.percentile(bootstrap.margins[:, k], [2.5, 97.5]))
                else:
                    ci_low, ci_high = predicted[k] - CI_Z * se, predicted[k] + CI_Z * se
            rows.append(MarginRow(
                level=level,
                label=SCORE_LABELS[level],
                margin=float(predicted[k]),
                se=se,
                ci_low=ci_low,
                ci_high=ci_high,
                n=int(np.count_nonzero(scores == level))
            ))
        return MarginsResult(
            indicator=fit.indicator,
            ci_method="percentile" if percentile else "normal",
            rows=rows
        )

    # ---------------------------------------------------- category stats
    @staticmethod
    def category_stats(
        corpus: Corpus,
        index: CitationIndex,
        top_k: Optional[int] = 20,
        combinations: bool = False
    ) -> pd.DataFrame:
        """
        Mean/min/max/n của citations_3y theo category (hoặc tổ hợp category)

        Args:
            corpus: Corpus
            index: CitationIndex
            top_k: Số dòng tối đa (None = tất cả)
            combinations: Mỗi bài đóng góp vào đúng một dòng tổ hợp category

        Returns:
            DataFrame category, mean, min, max, n sort theo n giảm dần
        """
        citable = corpus.citable_positions()
        columns = ["category", "mean", "min", "max", "n"]
        if len(citable) == 0:
            return pd.DataFrame(columns=columns)
        upper = np.minimum(corpus.years + 2, corpus.horizon_year)
        counts = index.window_counts(corpus.years, upper)[citable]

        if combinations:
            labels = [", ".join(sorted(corpus.categories[p])) for p in citable]
            frame = pd.DataFrame({"category": labels, "citations_3y": counts})
        else:
            frame = pd.DataFrame({
                "category": [list(corpus.categories[p]) for p in citable],
                "citations_3y": counts,
            }).explode("category")
            frame["citations_3y"] = frame["citations_3y"].astype(np.int64)

        stats = (
            frame.groupby("category")["citations_3y"]
            .agg(["mean", "min", "max", "count"])
            .rename(columns={"count": "n"})
            .reset_index()
            .sort_values(["n", "category"], ascending=[False, True], kind="mergesort")
            .reset_index(drop=True)
        )
        if top_k is not None:
            stats = stats.head(top_k)
        return stats[columns]

    @staticmethod
    def year_stats(corpus: Corpus, index: CitationIndex) -> pd.DataFrame:
        """
        Mean/min/max/n của citation (publication year -> horizon) theo năm xuất bản

        Returns:
            DataFrame year, mean, min, max, n sort theo year
        """
        citable = corpus.citable_positions()
        columns = ["year", "mean", "min", "max", "n"]
        if len(citable) == 0:
            return pd.DataFrame(columns=columns)
        upper = np.full(corpus.n_publications, corpus.horizon_year)
        counts = index.window_counts(corpus.years, upper)[citable]
        frame = pd.DataFrame({"year": corpus.years[citable], "citations": counts})
        stats = (
            frame.groupby("year")["citations"]
            .agg(["mean", "min", "max", "count"])
            .rename(columns={"count": "n"})
            .reset_index()
        )
        return stats[columns]

    @staticmethod
    def category_indicator_means(
        table: pd.DataFrame,
        corpus: Corpus,
        indicators: Sequence[str]
    ) -> pd.DataFrame:
        """
        Mean của từng indicator theo category. Bài nhiều category góp vào mỗi category của nó

        Args:
            table: IndicatorTable frame (pub_id + các cột indicator)
            corpus: Corpus chứa category của các pub_id trong table
            indicators: Các cột cần tổng hợp

        Returns:
            DataFrame dạng long: indicator, category, mean, n

        Raises:
            ValueError: Thiếu cột indicator, hoặc pub_id không có trong corpus
        """
        missing = [c for c in indicators if c not in table.columns]
        if missing:
            raise ValueError(f"Indicator table lacks columns: {', '.join(missing)}")
        columns = ["indicator", "category", "mean", "n"]
        if table.empty:
            return pd.DataFrame(columns=columns)

        pub_ids = table["pub_id"].astype(str)
        positions = pd.Index(corpus.pub_ids).get_indexer(pub_ids)
        if np.any(positions < 0):
            unknown = pub_ids[positions < 0].iloc[0]
            raise ValueError(f"Indicator row '{unknown}' is not a publication in the corpus")

        frame = table[list(indicators)].assign(
            category=[list(corpus.categories[p]) for p in positions]
        ).explode("category")

        parts = []
        for indicator in indicators:
            grouped = (
                frame.groupby("category")[indicator]
                .agg(["mean", "count"])
                .rename(columns={"count": "n"})
                .reset_index()
            )
            grouped.insert(0, "indicator", indicator)
            parts.append(grouped)
        return pd.concat(parts, ignore_index=True)[columns]

    # -------------------------------------------------------- evaluation
    def evaluate(
        self,
        table: pd.DataFrame,
        records: pd.DataFrame,
        indicators: Sequence[str],
        reps: int,
        seed: int,
        first_only: bool = False,
        percentile_ci: bool = False
    ) -> EvaluationReport:
        """
        Bảng correlation, regression và margins cho từng indicator

        Args:
            table: IndicatorTable frame (pub_id + các cột indicator)
            records: Recommendations (pub_id, rater_id, score, seq)
            indicators: Các cột cần đánh giá
            reps: Số bootstrap replicates
            seed: Seed bootstrap
            first_only: Hồi quy / margins chỉ trên recommendation đầu tiên
            percentile_ci: Dùng percentile CI cho margins

        Raises:
            ValueError: Ít hơn 3 record join được, hoặc dữ liệu suy biến
        """
        missing = [c for c in indicators if c not in table.columns]
        if missing:
            raise ValueError(f"Indicator table lacks columns: {', '.join(missing)}")

        table = table.assign(pub_id=table["pub_id"].astype(str))
        joined = records.merge(table[["pub_id"] + list(indicators)], on="pub_id", how="inner")
        orphans = len(records) - len(joined)
        if orphans:
            logger.warning(f"{orphans} recommendations have no indicator row and were dropped")
        if len(joined) < 3:
            raise ValueError(f"Only {len(joined)} recommendations match indicator rows (need at least 3)")

        first = self.dedup_first_recommendation(joined)
        sample = first if first_only else joined
        logger.info(
            f"Evaluating {len(indicators)} indicators on {len(joined)} recommendations "
            f"({len(first)} papers), reps={reps}, seed={seed}"
        )

        correlations, regressions, margins = [], [], []
        warnings: List[str] = []
        skipped: List[Dict[str, str]] = []
        self._check_levels(sample["score"].to_numpy())
        for indicator in indicators:
            if joined[indicator].nunique() < 2 or first[indicator].nunique() < 2:
                logger.warning(f"Skipping {indicator}: constant over the joined recommendations")
                skipped.append({"indicator": indicator, "reason": "constant over the joined recommendations"})
                continue
            rho_all = self.spearman(joined[indicator], joined["score"])
            rho_first = self.spearman(first[indicator], first["score"])
            ci_all = self._safe_ci(rho_all, len(joined), indicator, warnings)
            ci_first = self._safe_ci(rho_first, len(first), indicator, warnings)
            correlations.append(CorrelationRow(
                indicator=indicator,
                rho_all=rho_all,
                ci_all_low=ci_all[0],
                ci_all_high=ci_all[1],
                n_all=len(joined),
                rho_first=rho_first,
                ci_first_low=ci_first[0],
                ci_first_high=ci_first[1],
                n_first=len(first)
            ))

            z = self.z_transform(sample[indicator].to_numpy(dtype=float))
            scores = sample["score"].to_numpy()
            fit = self.fit_dummy_regression(z, scores, indicator, sample["pub_id"].tolist())
            boot = self.cluster_bootstrap(z, scores, sample["pub_id"].tolist(), reps, seed)
            fit = self.with_bootstrap(fit, boot)
            regressions.append(fit)
            margins.append(self.predictive_margins(fit, scores, boot, percentile_ci))

        if not correlations:
            raise ValueError(f"All indicators are constant over the joined recommendations: {', '.join(indicators)}")

        metadata = {
            "n_records": len(joined),
            "n_papers": int(joined["pub_id"].nunique()),
            "n_first": len(first),
            "orphan_recommendations": orphans,
            "regression_sample": "first_only" if first_only else "all_recommendations",
            "reference_category": SCORE_LABELS[1],
            "z_sd_convention": "sample (ddof=1)",
            "ci_method": "fisher_z",
            "bootstrap": {"reps": reps, "seed": seed, "cluster": "pub_id"},
            "margin_ci": "percentile" if percentile_ci else "normal",
            "warnings": warnings,
            "skipped_indicators": skipped,
        }
        return EvaluationReport(
            correlations=correlations,
            regressions=regressions,
            margins=margins,
            metadata=metadata
        )

    def _safe_ci(self, rho: float, n: int, indicator: str, warnings: List[str]) -> Tuple[float, float]:
        if n < 4:
            warnings.append(f"{indicator}: confidence interval undefined for n = {n}")
            return float("nan"), float("nan")
        return self.spearman_ci(rho, n)

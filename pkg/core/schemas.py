from enum import Enum
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Any, Dict, List, Optional


INDICATOR_COLUMNS = [
    "citations_3y",
    "mncs",
    "incites",
    "hazen",
    "p100",
    "p100_prime",
    "sncs1",
    "sncs2",
    "sncs3",
]

CITED_SIDE_INDICATORS = ["citations_3y", "mncs", "incites", "hazen", "p100", "p100_prime"]
CITING_SIDE_INDICATORS = ["sncs1", "sncs2", "sncs3"]

SCORE_LABELS = {1: "Good", 2: "Very good", 3: "Exceptional"}

# Ký tự không được xuất hiện trong id/label (TSV không quote, category nối bằng ";")
ID_FORBIDDEN_CHARS = ("\t", "\n", "\r")
CATEGORY_FORBIDDEN_CHARS = ID_FORBIDDEN_CHARS + (";",)


def check_token(value: str, forbidden=ID_FORBIDDEN_CHARS) -> str:
    """Raise ValueError nếu value chứa ký tự cấm"""
    bad = [c for c in forbidden if c in value]
    if bad:
        raise ValueError(f"{value!r} contains forbidden character {bad[0]!r}")
    return value


class MultiCategoryRule(str, Enum):
    """Quy tắc kết hợp điểm khi một bài báo thuộc nhiều category"""
    MEAN_OF_PER_CATEGORY_SCORES = "mean_of_per_category_scores"


# Corpus schemas
class Publication(BaseModel):
    """Một bài báo trong corpus"""
    model_config = ConfigDict(frozen=True)

    pub_id: str = Field(min_length=1, description="Unique opaque identifier")
    year: int = Field(description="Publication year")
    journal_id: str = Field(min_length=1, description="Opaque journal identifier")
    doc_type: str = Field(min_length=1, description="Document type label (article, review, letter, other)")
    categories: List[str] = Field(description="Subject category labels, non-empty, no duplicates")

    @field_validator("pub_id", "journal_id", "doc_type")
    @classmethod
    def check_id(cls, value: str) -> str:
        return check_token(value)

    @field_validator("categories")
    @classmethod
    def check_categories(cls, value: List[str]) -> List[str]:
        cleaned = [c.strip() for c in value]
        if not cleaned or any(not c for c in cleaned):
            raise ValueError("categories must be a non-empty list of non-empty labels")
        for label in cleaned:
            check_token(label, CATEGORY_FORBIDDEN_CHARS)
        if len(set(cleaned)) != len(cleaned):
            raise ValueError(f"duplicate category in {cleaned}")
        return cleaned


class ReferenceEdge(BaseModel):
    """Tham chiếu citing -> cited. cited_id = None khi reference không link được (unlinked)"""
    model_config = ConfigDict(frozen=True)

    citing_id: str = Field(min_length=1)
    cited_ref: str = Field(min_length=1, description="Cited identifier as read from the references file")
    cited_id: Optional[str] = Field(None, description="Resolved cited pub_id, None for an unlinked reference")

    @field_validator("citing_id", "cited_ref")
    @classmethod
    def check_id(cls, value: str) -> str:
        return check_token(value)

    @property
    def linked(self) -> bool:
        return self.cited_id is not None


class CorpusConfig(BaseModel):
    """Cấu hình khi load corpus"""
    horizon_year: int = Field(description="Last year of citation observation")
    year_min: Optional[int] = Field(None, description="Earliest accepted publication year")
    citable_types: List[str] = Field(default_factory=lambda: ["article", "review", "letter"])
    category_column: str = Field("categories", description="Column holding the category labels")

    @field_validator("citable_types")
    @classmethod
    def check_citable_types(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("citable_types must not be empty")
        return value


class LoadSummary(BaseModel):
    n_publications: int
    n_citable: int
    n_references: int
    n_linked: int
    n_unlinked: int
    horizon_year: int
    category_column: str


class ValidationReport(BaseModel):
    """Báo cáo kiểm tra corpus (không thay đổi corpus)"""
    summary: LoadSummary
    unlinked_ratio: float = Field(description="Unlinked references / all references")
    n_prepublication_citations: int = Field(0, description="Linked edges whose citing year precedes the cited year")
    per_year: Dict[int, int] = Field(default_factory=dict)
    per_category: Dict[str, int] = Field(default_factory=dict)
    warnings: List[str] = Field(default_factory=list)

    @property
    def warning_count(self) -> int:
        return len(self.warnings)


# Evaluation schemas
class RecommendationRecord(BaseModel):
    """Một đánh giá của chuyên gia: 1 = Good, 2 = Very good, 3 = Exceptional"""
    pub_id: str = Field(min_length=1)
    rater_id: str = Field(min_length=1)
    score: int = Field(description="Recommendation level in {1, 2, 3}")
    seq: int = Field(description="Intake order within the paper")

    @field_validator("score")
    @classmethod
    def check_score(cls, value: int) -> int:
        if value not in SCORE_LABELS:
            raise ValueError(f"score must be 1, 2 or 3, got {value}")
        return value


class RegressionResult(BaseModel):
    """Hồi quy z-score của một indicator lên dummy của mức recommendation ("Good" là reference)"""
    indicator: str
    b0: float = Field(description="Constant (mean z of Good)")
    b_vg: float = Field(description="Very good minus Good")
    b_ex: float = Field(description="Exceptional minus Good")
    se_b0: Optional[float] = None
    se_vg: Optional[float] = None
    se_ex: Optional[float] = None
    naive_se_b0: Optional[float] = Field(None, description="i.i.d. OLS standard error")
    naive_se_vg: Optional[float] = None
    naive_se_ex: Optional[float] = None
    t_b0: Optional[float] = None
    t_vg: Optional[float] = None
    t_ex: Optional[float] = None
    p_b0: Optional[float] = None
    p_vg: Optional[float] = None
    p_ex: Optional[float] = None
    reps: Optional[int] = None
    seed: Optional[int] = None
    n_records: int
    n_clusters: int

    @model_validator(mode="after")
    def check_reps(self):
        if self.reps is not None and self.reps < 2:
            raise ValueError("reps must be >= 2")
        return self

    def stars(self, term: str) -> str:
        p = getattr(self, f"p_{term}")
        return "***" if p is not None and p < 0.001 else ""


class MarginRow(BaseModel):
    level: int
    label: str
    margin: float
    se: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    n: int


class MarginsResult(BaseModel):
    indicator: str
    ci_method: str = Field("normal", description="normal (margin +/- 1.96 SE) or percentile")
    rows: List[MarginRow]


class CorrelationRow(BaseModel):
    indicator: str
    rho_all: float
    ci_all_low: float
    ci_all_high: float
    n_all: int
    rho_first: float
    ci_first_low: float
    ci_first_high: float
    n_first: int


class EvaluationReport(BaseModel):
    correlations: List[CorrelationRow]
    regressions: List[RegressionResult]
    margins: List[MarginsResult]
    metadata: Dict[str, Any] = Field(default_factory=dict)


# Synthetic corpus schemas
class FieldProfile(BaseModel):
    """Văn hoá trích dẫn của một lĩnh vực"""
    label: str = Field(min_length=1)
    citation_rate: float = Field(ge=0, description="Mean full-window citations per focal paper")
    dispersion: float = Field(3.0, gt=0, description="Negative binomial size parameter")
    mean_linked_refs: float = Field(gt=0, description="Mean linked references per citing paper")
    linked_ref_share: float = Field(1.0, gt=0, le=1, description="Share of references that resolve inside the corpus")


class GeneratorSpec(BaseModel):
    fields: List[FieldProfile]
    year_first: int = 2007
    year_last: int = 2010
    horizon_year: int = 2013
    papers_per_field_year: int = Field(250, ge=1)
    journals_per_field: int = Field(5, ge=1)
    citing_journals_per_field: int = Field(10, ge=1)
    max_citing_papers_per_field_year: int = Field(500_000, ge=1)
    year_rate_first: float = Field(22.53, gt=0, description="Citation rate of the oldest cohort")
    year_rate_last: float = Field(7.34, gt=0, description="Citation rate of the youngest cohort")
    quality_sigma: float = Field(1.0, ge=0)
    coupling: float = Field(0.6, ge=0, le=1)
    rater_noise: float = Field(0.5, ge=0, description="Noise of the first rater around latent quality")
    rater_agreement_noise: float = Field(0.1, ge=0, description="Noise of extra raters around the first rating")
    recommended_share: float = Field(0.4, gt=0, le=1)
    max_raters: int = Field(3, ge=1)
    level_shares: List[float] = Field(default_factory=lambda: [0.59, 0.35, 0.06])
    rater_pool: int = Field(5000, ge=3)
    seed: Optional[int] = None

    @model_validator(mode="after")
    def check_spec(self):
        if not self.fields:
            raise ValueError("generator spec needs at least one field")
        labels = [f.label for f in self.fields]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate field labels: {labels}")
        if self.year_first > self.year_last:
            raise ValueError("year_first must not exceed year_last")
        if self.horizon_year < self.year_last:
            raise ValueError("horizon_year must be >= year_last")
        if len(self.level_shares) != 3 or any(s <= 0 for s in self.level_shares):
            raise ValueError("level_shares needs three positive shares")
        if abs(sum(self.level_shares) - 1.0) > 1e-6:
            raise ValueError("level_shares must sum to 1")
        if self.rater_pool < self.max_raters:
            raise ValueError("rater_pool must be >= max_raters")
        return self


class RunConfig(BaseModel):
    """Cấu hình đã resolve của một lần chạy, ghi vào run_meta.json"""
    subcommand: str
    version: str
    inputs: Dict[str, Optional[str]] = Field(default_factory=dict)
    out_dir: Optional[str] = None
    horizon_year: Optional[int] = None
    year_min: Optional[int] = None
    citable_types: List[str] = Field(default_factory=list)
    category_column: Optional[str] = None
    multi_category_rule: MultiCategoryRule = MultiCategoryRule.MEAN_OF_PER_CATEGORY_SCORES
    indicators: List[str] = Field(default_factory=list)
    fixed_window: Optional[int] = None
    reps: Optional[int] = None
    seed: Optional[int] = None
    first_only: Optional[bool] = None
    percentile_ci: Optional[bool] = None
    top_k: Optional[int] = None
    combinations: Optional[bool] = None
    group_by: Optional[str] = None
    threads: int = 1
    preset: Optional[str] = None

from pydantic_settings import BaseSettings
from pydantic import ConfigDict
from typing import List, Optional


class Settings(BaseSettings):
    """Cấu hình ứng dụng sử dụng Pydantic Settings để tải từ config.env"""

    # Corpus Configuration
    HORIZON_YEAR: int = 2013
    YEAR_MIN: Optional[int] = None
    CITABLE_TYPES: str = "article,review,letter"
    # Cột phân loại thay thế (vd: "oecd_categories") có thể chọn khi load
    CATEGORY_COLUMN: str = "categories"
    MULTI_CATEGORY_RULE: str = "mean_of_per_category_scores"

    # Statistics Configuration
    BOOTSTRAP_REPS: int = 100
    CATEGORY_TOP_K: int = 20
    THREADS: int = 1

    # Logging Configuration
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "text"  # text | json
    LOG_FILE: Optional[str] = None

    model_config = ConfigDict(
        env_file="config.env",
        env_file_encoding="utf-8",
        extra="ignore"
    )

    @property
    def citable_types(self) -> List[str]:
        """Danh sách doc_type được tính là citable"""
        return [t.strip() for t in self.CITABLE_TYPES.split(",") if t.strip()]


# Khởi tạo settings instance
settings = Settings()

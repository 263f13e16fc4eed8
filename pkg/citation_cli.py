"""
Citation Impact CLI - Main Entry Point

Tính các chỉ số citation impact chuẩn hoá (cited-side và citing-side) và
đánh giá chúng so với recommendation của chuyên gia.

Usage:
    python citation_cli.py validate --publications pubs.tsv --references refs.tsv
    python citation_cli.py compute --publications pubs.tsv --references refs.tsv --out out/
    python citation_cli.py evaluate --table out/indicators.csv --recommendations recs.tsv --seed 1 --out eval/
    python citation_cli.py category-stats --publications pubs.tsv --references refs.tsv --out out/
    python citation_cli.py synth --preset two-cultures --seed 42 --out synth/

Environment Variables (đặt trong config.env):
    HORIZON_YEAR: Năm cuối quan sát citation (default: 2013)
    CITABLE_TYPES: Các doc_type citable (default: article,review,letter)
    BOOTSTRAP_REPS: Số replicate bootstrap (default: 100)
    THREADS: Số worker thread (default: 1)
    LOG_LEVEL / LOG_FORMAT / LOG_FILE: Cấu hình logging
"""

from app.cli.main import cli


if __name__ == "__main__":
    cli()

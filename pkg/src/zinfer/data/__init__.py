"""Bundled datasets."""

from __future__ import annotations

from pathlib import Path

FISH_CSV = Path(__file__).with_name("fish.csv")


def fish_path() -> Path:
    """Path of the bundled fish counts (columns ``count,persons,camper``).

    The file is not redistributed with the source; drop the 250-row CSV of
    the state park fishing survey here to enable the fish examples.
    """
    if not FISH_CSV.exists():
        raise FileNotFoundError(
            f"fish data not found at {FISH_CSV}; place the 250-row fish survey CSV "
            "(columns count,persons,camper) there"
        )
    return FISH_CSV

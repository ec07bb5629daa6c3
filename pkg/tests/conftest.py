from __future__ import annotations

from pathlib import Path

import pytest

from anosov_lab.config import from_dict
from anosov_lab.pipeline import Pipeline

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def sinusoidal(k: int, family: str = "cat_suspension", **extra) -> dict:
    return {"model": {"family": family, "roof": {"kind": "sinusoidal", "alpha": 0.05, "k": k}}, **extra}


@pytest.fixture(scope="session")
def pipeline():
    """pipeline(k, family, upto): default resolution plus two refinement rounds, shared across the session.

    Stages already run for the same (k, family) are not repeated.
    """
    cache: dict = {}

    def get(k: int, family: str = "cat_suspension", upto: str = "full") -> Pipeline:
        key = (k, family)
        if key not in cache:
            cache[key] = Pipeline(from_dict(sinusoidal(k, family)))
        p = cache[key]
        p.run(upto)
        return p

    return get

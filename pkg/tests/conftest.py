import numpy as np
import pytest

from helpers import panel_from_rows, synthetic_spec
from synthgen import generate


@pytest.fixture
def small_panel():
    """Two firms over five years with hand-checkable growth."""
    rows = [
        {"firm_id": "A", "year": 2000, "sic": 2834, "sales": 100.0, "opmar": 6.0},
        {"firm_id": "A", "year": 2001, "sic": 2834, "sales": 150.0, "opmar": 9.0},
        {"firm_id": "A", "year": 2002, "sic": 2834, "sales": 120.0, "opmar": 12.0},
        {"firm_id": "A", "year": 2003, "sic": 2834, "sales": 0.0, "opmar": np.nan},
        {"firm_id": "A", "year": 2004, "sic": 2834, "sales": 50.0, "opmar": 3.0},
        {"firm_id": "B", "year": 2000, "sic": 3571, "sales": 200.0, "opmar": 5.0},
        {"firm_id": "B", "year": 2002, "sic": 3571, "sales": 242.0, "opmar": 5.0},
    ]
    return panel_from_rows(rows)


@pytest.fixture(scope="module")
def synthetic():
    return generate(synthetic_spec())

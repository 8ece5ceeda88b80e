"""Per-subject cartilage T2 (ms) from the published five-subject comparison."""

GROUND_TRUTH = (35.2, 42.6, 27.9, 35.3, 36.6)

METHODS = {
    "MRSR": (35.8, 44.1, 29.1, 38.5, 38.0),
    "TCI": (36.4, 44.4, 29.8, 39.5, 39.0),
    "FI": (36.1, 44.5, 29.4, 39.0, 39.2),
    "ScSR": (42.4, 50.1, 35.9, 58.3, 46.7),
}

# Published summary rows: (mean, sd) pairs and CCC.
SUMMARY = {
    "MRSR": {"average": (37.1, 5.4), "cv": (3.1, 1.8), "difference": (1.6, 1.0), "ccc": 0.93},
    "TCI": {"average": (37.8, 5.3), "cv": (4.5, 2.2), "difference": (2.3, 1.1), "ccc": 0.87},
    "FI": {"average": (37.6, 5.5), "cv": (4.1, 2.0), "difference": (2.1, 1.1), "ccc": 0.89},
    "ScSR": {"average": (46.7, 8.4), "cv": (18.8, 9.3), "difference": (11.2, 6.7), "ccc": 0.21},
}
TRUTH_AVERAGE = (35.5, 5.2)


def pairs(method):
    return list(zip(GROUND_TRUTH, METHODS[method]))

import math

import numpy as np
import pytest

from infantfp.core import Gender, Minutia, MinutiaeSet, Template, Thumb
from infantfp.synth import build_benchmark


@pytest.fixture(scope="session")
def small_benchmark(tmp_path_factory):
    """10-subject mild benchmark shared by eval/CLI/protocol tests."""
    out = tmp_path_factory.mktemp("bench10")
    manifest = build_benchmark(out, n_subjects=10, sessions=2, profile="mild", seed=7)
    return manifest


def make_minutiae(points, ppi=1000):
    return MinutiaeSet(tuple(Minutia(x, y, t) for x, y, t in points), ppi)


def make_template(subject="s1", session="v1", thumb=Thumb.LEFT, gender=Gender.FEMALE,
                  age=20, points=((10.0, 20.0, 0.0),), embedding=None, aged=False, ppi=1000):
    return Template(
        subject_id=subject, thumb=thumb, session_id=session, age_weeks_at_capture=age,
        gender=gender, minutiae=make_minutiae(points, ppi), embedding=embedding, aged=aged)


def unit_vector(first_values):
    vec = np.zeros(192)
    vec[:len(first_values)] = first_values
    norm = np.linalg.norm(vec)
    if norm == 0:
        vec[0] = 1.0
        norm = 1.0
    return (vec / norm).astype(np.float32)


def random_separated_points(rng, n_max, width, height, min_sep, margin):
    """Rejection-sample points with pairwise separation and border margin."""
    points = []
    attempts = 0
    target = int(rng.integers(3, n_max + 1))
    while len(points) < target and attempts < 4000:
        attempts += 1
        x = float(rng.uniform(margin, width - margin))
        y = float(rng.uniform(margin, height - margin))
        if all((x - px) ** 2 + (y - py) ** 2 >= min_sep**2 for px, py in points):
            points.append((x, y))
    return points

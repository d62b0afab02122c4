"""TSP instances, tour evaluation and the prompt-view transforms.

Evaluation always uses an instance's true coordinates; a ``PromptView`` only
changes what the generator gets to see.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import InstanceError, TourError, ViewError

EARTH_RADIUS_KM = 6371.0
GRID_MAX = 100
SHIFT_OFFSET_RANGE = (50, 200)


class Metric(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    HAVERSINE = "haversine"


class ViewMode(str, enum.Enum):
    TRUE = "true"
    MASKED = "masked"
    SHIFTED = "shifted"
    NAMES_ONLY = "names_only"
    COORDS_ONLY = "coords_only"
    NAMES_AND_COORDS = "names_and_coords"


def haversine(p: Sequence[float], q: Sequence[float]) -> float:
    """Great-circle distance in km between two (lat, lon) points in degrees."""
    lat1, lon1 = math.radians(p[0]), math.radians(p[1])
    lat2, lon2 = math.radians(q[0]), math.radians(q[1])
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(1.0, max(0.0, h))))


def euclidean(p: Sequence[float], q: Sequence[float]) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


_METRIC_FN = {Metric.EUCLIDEAN: euclidean, Metric.HAVERSINE: haversine}


def distance_matrix(coords: Sequence[Sequence[float]], metric: Metric) -> np.ndarray:
    fn = _METRIC_FN[metric]
    n = len(coords)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = fn(coords[i], coords[j])
    return d


@dataclass(frozen=True)
class TspInstance:
    labels: tuple[str, ...]
    coordinates: tuple[tuple[float, float], ...]
    metric: Metric = Metric.EUCLIDEAN
    reference_length: float | None = None
    dist: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "metric", Metric(self.metric))
        labels = tuple(str(label) for label in self.labels)
        coords = tuple((float(c[0]), float(c[1])) for c in self.coordinates)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "coordinates", coords)
        if len(coords) < 3:
            raise InstanceError(f"need at least 3 cities, got {len(coords)}")
        if len(labels) != len(coords):
            raise InstanceError("labels and coordinates differ in length")
        if len(set(labels)) != len(labels):
            raise InstanceError("city labels must be unique")
        if self.metric is Metric.HAVERSINE:
            for lat, lon in coords:
                if abs(lat) > 90 or abs(lon) > 180:
                    raise InstanceError(f"invalid geographic point ({lat}, {lon})")
        dist = distance_matrix(coords, self.metric)
        dist.flags.writeable = False
        object.__setattr__(self, "dist", dist)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def has_names(self) -> bool:
        return self.labels != tuple(str(i) for i in range(self.n))


def random_instance(n_cities: int, rng_seed: int) -> TspInstance:
    """Integer cities uniform on the grid ``[0, 100]^2``."""
    if n_cities < 3:
        raise InstanceError(f"need at least 3 cities, got {n_cities}")
    rng = np.random.default_rng(rng_seed)
    pts = rng.integers(0, GRID_MAX + 1, size=(n_cities, 2))
    return TspInstance(tuple(str(i) for i in range(n_cities)), tuple(map(tuple, pts.tolist())))


def validate_tour(n: int, tour: Sequence[int]) -> tuple[int, ...]:
    order = tuple(int(i) for i in tour)
    if len(order) != n or sorted(order) != list(range(n)):
        raise TourError(f"tour is not a permutation of 0..{n - 1}: {list(order)}")
    return order


def tour_length(instance: TspInstance, tour: Sequence[int]) -> float:
    """Closed-cycle length. Uses ``fsum`` so rotations and reversals agree exactly."""
    order = validate_tour(instance.n, tour)
    d = instance.dist
    return math.fsum(d[order[i - 1], order[i]] for i in range(len(order)))


def canonical_tour(tour: Sequence[int]) -> tuple[int, ...]:
    """Rotate to start at city 0 and orient so the second city is the smaller neighbour."""
    order = list(tour)
    k = order.index(0)
    order = order[k:] + order[:k]
    if len(order) > 2 and order[-1] < order[1]:
        order = [order[0]] + order[1:][::-1]
    return tuple(order)


def nearest_neighbor_tour(coords: Sequence[Sequence[float]], start: int = 0) -> tuple[int, ...]:
    """Greedy planar nearest-neighbour tour; ties go to the lower index."""
    n = len(coords)
    unvisited = set(range(n)) - {start}
    order = [start]
    while unvisited:
        cur = coords[order[-1]]
        nxt = min(unvisited, key=lambda j: (euclidean(cur, coords[j]), j))
        order.append(nxt)
        unvisited.remove(nxt)
    return tuple(order)


# -- prompt views ------------------------------------------------------------


@dataclass(frozen=True)
class PromptView:
    mode: ViewMode
    displayed_coordinates: tuple[tuple[float, float], ...] | None
    names: tuple[str, ...] | None = None


def make_view(instance: TspInstance, mode: ViewMode | str, rng_seed: int = 0) -> PromptView:
    mode = ViewMode(mode)
    named_modes = (ViewMode.NAMES_ONLY, ViewMode.COORDS_ONLY, ViewMode.NAMES_AND_COORDS)
    if mode in named_modes and not instance.has_names:
        raise ViewError(f"view {mode.value!r} needs an instance with city names")
    rng = np.random.default_rng(rng_seed)
    if mode is ViewMode.MASKED:
        pts = rng.integers(0, GRID_MAX + 1, size=(instance.n, 2))
        return PromptView(mode, tuple((float(x), float(y)) for x, y in pts.tolist()))
    if mode is ViewMode.SHIFTED:
        dx, dy = rng.integers(SHIFT_OFFSET_RANGE[0], SHIFT_OFFSET_RANGE[1] + 1, size=2).tolist()
        return PromptView(mode, tuple((x + dx, y + dy) for x, y in instance.coordinates))
    if mode is ViewMode.NAMES_ONLY:
        return PromptView(mode, None, instance.labels)
    if mode is ViewMode.NAMES_AND_COORDS:
        return PromptView(mode, instance.coordinates, instance.labels)
    return PromptView(mode, instance.coordinates)


# -- files and fixtures ------------------------------------------------------


def instance_to_dict(instance: TspInstance) -> dict[str, Any]:
    data: dict[str, Any] = {
        "labels": list(instance.labels),
        "coordinates": [list(c) for c in instance.coordinates],
        "metric": instance.metric.value,
    }
    if instance.reference_length is not None:
        data["reference_length"] = instance.reference_length
    return data


def instance_from_dict(data: dict[str, Any]) -> TspInstance:
    try:
        coords = data["coordinates"]
    except KeyError:
        raise InstanceError("instance has no 'coordinates'") from None
    labels = data.get("labels") or [str(i) for i in range(len(coords))]
    ref = data.get("reference_length")
    return TspInstance(
        tuple(labels),
        tuple(tuple(c) for c in coords),
        Metric(data.get("metric", "euclidean")),
        None if ref is None else float(ref),
    )


def load_instance(path: str | Path) -> TspInstance:
    return instance_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_instance(instance: TspInstance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance), indent=2) + "\n", encoding="utf-8")


FIXTURES = ("us_cities15", "grid15", "triangle3")


def load_fixture(name: str) -> TspInstance:
    if name not in FIXTURES:
        raise InstanceError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
    text = resources.files("llmopt.data").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return instance_from_dict(json.loads(text))

"""Scene taxonomy and recording-device tokens."""

SCENE_CLASSES = (
    "airport",
    "bus",
    "metro",
    "metro_station",
    "park",
    "public_square",
    "shopping_mall",
    "street_pedestrian",
    "street_traffic",
    "tram",
)
CLASS_INDEX = {name: i for i, name in enumerate(SCENE_CLASSES)}
NUM_CLASSES = len(SCENE_CLASSES)

# Human-readable names of the ten scenes, keyed by token.
SCENE_DESCRIPTIONS = {
    "airport": "airport",
    "bus": "travelling by a bus",
    "metro": "travelling by an underground metro",
    "metro_station": "metro station",
    "park": "urban park",
    "public_square": "public square",
    "shopping_mall": "indoor shopping mall",
    "street_pedestrian": "pedestrian street",
    "street_traffic": "street with medium level of traffic",
    "tram": "travelling by a tram",
}

REAL_DEVICES = ("A", "B", "C", "D")
SIMULATED_DEVICES = tuple(f"S{i}" for i in range(1, 12))
DEVICES = REAL_DEVICES + SIMULATED_DEVICES

# Devices present in the development training split. Overridable per row in
# the metadata file and from the command line.
DEFAULT_SEEN_DEVICES = frozenset({"A", "B", "C", "S1", "S2", "S3"})

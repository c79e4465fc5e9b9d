"""Lane-change intention prediction on highD-schema trajectory data."""

__version__ = "0.1.0"

CLASSES = ("LK", "LLC", "RLC")
LABEL_INDEX = {name: i for i, name in enumerate(CLASSES)}

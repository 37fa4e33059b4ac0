import re
from pathlib import Path
from typing import Dict, Optional, Tuple

_DEPTH_NAME = re.compile(r"^cam(\d+)(?:_t(\d+))?\.pfm$")


def parse_depth_name(name: str) -> Optional[Tuple[int, int]]:
    """Return (camera, frame) for names like ``cam3_t1.pfm`` or ``cam3.pfm`` (frame 1)."""
    match = _DEPTH_NAME.match(name)
    if not match:
        return None
    camera = int(match.group(1))
    frame = int(match.group(2)) if match.group(2) is not None else 1
    return camera, frame


def list_depth_files(directory: Path, frame: int = 1) -> Dict[int, Path]:
    """Camera index -> depth file for ``frame`` found in ``directory``."""
    found = {}
    for path in sorted(Path(directory).glob("*.pfm")):
        parsed = parse_depth_name(path.name)
        if parsed and parsed[1] == frame:
            found[parsed[0]] = path
    return found


def is_valid_task_id(task_id: str) -> bool:
    """Task ids are uuid4 strings."""
    pattern = r"^[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}$"
    return bool(re.match(pattern, task_id))

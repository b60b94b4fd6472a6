import json
import sys


def dump(result, path=None):
    """Write ``result`` as JSON to ``path`` (or stdout), dropping model objects."""
    clean = {k: v for k, v in result.items() if k != "model"}
    text = json.dumps(clean, indent=2, default=_default)
    if path:
        with open(path, "w") as f:
            f.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _default(o):
    if hasattr(o, "to_json"):
        return o.to_json()
    if hasattr(o, "item"):
        return o.item()
    return str(o)

import json
import logging
import os

from conditioning import ActionClass
from errors import ConfigurationError

logger = logging.getLogger(__name__)

DATA_DIR = os.environ.get("FDSM_DATA_DIR", "data")
DEFAULT_CLASSES_FILE = "classes.json"

RICH_DESCRIPTION_PROMPT = (
    "You are an expert in human movement analysis and skeleton-based vision. Write {n_desc} distinct, "
    "detailed descriptions of the action '{label}'. In each one, name the body parts involved, walk through "
    "the temporal phases of the movement (preparation, execution, recovery) and describe its dynamics: "
    "speed, rhythm and intensity. Describe only what a skeleton sequence would show; avoid generic wording."
)
INTENSITY_PROMPT = (
    "Action class: '{label}'. Answer with a single character giving its motion intensity for skeleton "
    "dynamics. 1 means high-frequency or dynamic motion (fast limb transitions, fine jitter-like movement); "
    "0 means low-frequency or static motion (slow, steady, posture-dominated). Output only 0 or 1."
)


def resolve_path(file_name):
    if os.path.isabs(file_name) or os.path.exists(file_name):
        return file_name
    return os.path.join(DATA_DIR, file_name)


def validate_classes(items):
    """ActionClass list from raw dicts; ids and labels must be unique."""
    if not isinstance(items, list) or not items:
        raise ConfigurationError("class file must hold a non-empty JSON list")
    classes = []
    for item in items:
        try:
            classes.append(ActionClass.from_dict(item))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigurationError(f"invalid class entry {item!r}: {e}") from e
    ids = [a.id for a in classes]
    labels = [a.label for a in classes]
    if len(set(ids)) != len(ids) or len(set(labels)) != len(labels):
        raise ConfigurationError("class ids and labels must be unique")
    return classes


def load_classes(file_name=DEFAULT_CLASSES_FILE):
    path = resolve_path(file_name)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        logger.error(f"error decoding JSON from {path}: {e}")
        raise ConfigurationError(f"class file {path} is not valid JSON") from e
    except OSError as e:
        raise ConfigurationError(f"cannot read class file {path}: {e}") from e
    classes = validate_classes(data)
    logger.debug(f"loaded {len(classes)} classes from {path}")
    return classes


def save_classes(classes, file_name=DEFAULT_CLASSES_FILE):
    path = resolve_path(file_name)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump([a.to_dict() for a in classes], f, indent=2)
    logger.info(f"saved {len(classes)} classes to {path}")
    return path


def prompts_for(action, n_desc=5):
    return {
        "id": action.id,
        "label": action.label,
        "rich_description_prompt": RICH_DESCRIPTION_PROMPT.format(n_desc=n_desc, label=action.label),
        "intensity_prompt": INTENSITY_PROMPT.format(label=action.label),
    }


def build_prompts(classes, n_desc=5):
    if n_desc < 1:
        raise ConfigurationError(f"n_desc must be >= 1, got {n_desc}")
    return [prompts_for(a, n_desc) for a in classes]

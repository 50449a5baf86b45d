import math

import numpy as np


def derive_seeds(seed: int, count: int) -> list[int]:
    """Independent child seeds for shards and sub-streams of one run."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in children]


def binomial_error(successes: int, trials: int) -> float:
    if trials <= 0:
        return float("nan")
    p = successes / trials
    return float(np.sqrt(p * (1.0 - p) / trials))


def humanize_seconds(seconds: float) -> str:
    if seconds < 1:
        return f"{seconds * 1000:.0f}ms"
    seconds = int(seconds)
    hours = seconds // 3600
    minutes = (seconds // 60) % 60
    seconds = seconds % 60
    if hours:
        return f"{hours}h {minutes}m {seconds}s"
    if minutes:
        return f"{minutes}m {seconds}s"
    else:
        return f"{seconds}s"


def to_builtin(value):
    """Recursively convert numpy scalars/arrays so json can serialize them."""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_builtin(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return None if math.isnan(value) else float(value)
    return value

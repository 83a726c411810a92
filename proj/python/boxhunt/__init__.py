"""Active object localization with a deep Q-learning agent.

Configs are plain dicts with the same sections as the CLI's JSON config
(``env``, ``train``, ``features``, ``data``); missing keys take defaults.
"""

import json

from . import _core
from ._core import (
    Box,
    ConfigError,
    Dataset,
    DatasetError,
    FeatureServerError,
    Net,
    Scene,
    clamp,
    iou,
    load_checkpoint,
    load_dataset,
    movement_reward,
    recall,
    split,
    subregion,
    synth,
    transform,
    trigger_reward,
)

__all__ = [
    "Box", "ConfigError", "Dataset", "DatasetError", "Env", "FeatureServerError", "Net", "Scene",
    "TrainResult", "clamp", "evaluate", "iou", "load_checkpoint", "load_dataset", "movement_reward",
    "recall", "render_svg", "split", "subregion", "synth", "train", "transform", "trigger_reward",
]


def _dump(config):
    return json.dumps(config or {})


class Env(_core.Env):
    """One localization episode on ``scene``; call reset() to start over.

    step(action) returns (reward, done, box, iou).
    """

    def __init__(self, scene, config=None):
        super().__init__(scene, _dump(config))


class TrainResult:
    def __init__(self, raw):
        self.checkpoints = list(raw.checkpoints)
        self.variant = raw.variant
        self.log = [json.loads(line) for line in raw.log_jsonl.splitlines()]

    @property
    def policy(self):
        return self.checkpoints[-1]


def train(dataset, config=None, checkpoint_dir=None):
    """Trains an agent; returns one network per epoch plus the epoch log."""
    return TrainResult(_core.train(dataset, _dump(config), checkpoint_dir))


def evaluate(net, dataset, config=None, seed=0):
    """Greedy evaluation of ``net``, or a uniform random policy when ``net`` is None.

    Returns the report dict with an extra ``traces`` list.
    """
    if net is None:
        report, traces = _core.evaluate_random(dataset, _dump(config), seed)
    else:
        report, traces = _core.evaluate(net, dataset, _dump(config))
    out = json.loads(report)
    out["traces"] = [json.loads(line) for line in traces.splitlines()]
    return out


def render_svg(trace, scene):
    """SVG document for a trace dict from evaluate()."""
    return _core.render_svg(json.dumps(trace), scene)

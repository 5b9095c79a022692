"""Five-grade prediction from a tree of binary classifiers.

Every internal node holds a binary model whose sigmoid score is read as the
probability of taking its right branch. A grade's probability is the
product of branch probabilities along its root-to-leaf path, so the five
values always form a distribution; the prediction is their argmax.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Union

import numpy as np

from .dataset import ImageRecord
from .errors import ConfigError, MissingScore, ScoreOutOfRange

GRADES = (0, 1, 2, 3, 4)
CASCADE_FORMAT = "retina-pipeline-cascade"

Branch = Union["CascadeNode", int]


@dataclass(frozen=True)
class CascadeNode:
    id: str
    left: Branch
    right: Branch
    model_ref: str | None = None

    @staticmethod
    def _classes(branch: Branch) -> frozenset[int]:
        return branch.classes if isinstance(branch, CascadeNode) else frozenset([branch])

    @property
    def left_classes(self) -> frozenset[int]:
        return self._classes(self.left)

    @property
    def right_classes(self) -> frozenset[int]:
        return self._classes(self.right)

    @property
    def classes(self) -> frozenset[int]:
        return self.left_classes | self.right_classes

    def children(self) -> list["CascadeNode"]:
        return [b for b in (self.left, self.right) if isinstance(b, CascadeNode)]


@dataclass(frozen=True)
class CascadeTree:
    root: CascadeNode
    classes: tuple[int, ...] = GRADES

    def __post_init__(self):
        leaves = [grade for _, grade in self._leaves()]
        if sorted(leaves) != sorted(self.classes):
            raise ConfigError(f"cascade leaves {sorted(leaves)} must partition grades {list(self.classes)}")
        ids = [n.id for n in self.nodes()]
        if len(set(ids)) != len(ids):
            raise ConfigError("cascade node ids must be unique")

    def _leaves(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            for b in (node.left, node.right):
                if isinstance(b, CascadeNode):
                    stack.append(b)
                else:
                    yield node.id, b

    def nodes(self) -> list[CascadeNode]:
        """Internal nodes, pre-order."""
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(reversed(node.children()))
        return out

    def paths(self) -> dict[int, list[tuple[str, int]]]:
        """For each grade, the (node id, branch) steps from the root; branch 1 = right."""
        out: dict[int, list[tuple[str, int]]] = {}

        def walk(node, prefix):
            for branch, child in ((0, node.left), (1, node.right)):
                step = prefix + [(node.id, branch)]
                if isinstance(child, CascadeNode):
                    walk(child, step)
                else:
                    out[child] = step

        walk(self.root, [])
        return out


def build_default_tree() -> CascadeTree:
    """No DR vs DR, then mild/moderate vs severe/proliferate, then within each pair."""
    return CascadeTree(
        CascadeNode(
            "dr",
            0,
            CascadeNode("severity", CascadeNode("mild_vs_moderate", 1, 2), CascadeNode("severe_vs_proliferate", 3, 4)),
        )
    )


def path_probabilities(tree: CascadeTree, node_scores: Mapping[str, object]) -> np.ndarray:
    """Grade probabilities from per-node right-branch scores.

    Scores may be scalars (returns shape ``(5,)``) or equal-length arrays
    (returns ``(n, 5)``).
    """
    scores = {}
    for node in tree.nodes():
        if node.id not in node_scores:
            raise MissingScore(node.id)
        s = np.asarray(node_scores[node.id], dtype=np.float64)
        if s.size and (np.isnan(s).any() or s.min() < 0 or s.max() > 1):
            raise ScoreOutOfRange(f"scores for node {node.id!r} must lie in [0, 1]")
        scores[node.id] = s
    shape = np.broadcast_shapes(*(s.shape for s in scores.values()))
    paths = tree.paths()
    out = np.empty(shape + (len(tree.classes),))
    for col, grade in enumerate(tree.classes):
        p = np.ones(shape)
        for node_id, branch in paths[grade]:
            s = scores[node_id]
            p = p * (s if branch else 1.0 - s)
        out[..., col] = p
    return out


def cascade_predict(tree: CascadeTree, node_scores: Mapping[str, object]):
    """Argmax grade (lowest index on ties); an int for scalar scores, else an array."""
    probs = path_probabilities(tree, node_scores)
    labels = np.asarray(tree.classes)[probs.argmax(axis=-1)]
    return int(labels) if labels.ndim == 0 else labels


def node_training_records(records: Iterable[ImageRecord], node: CascadeNode) -> list[ImageRecord]:
    """Records whose grade falls under ``node``, relabelled 0 (left) / 1 (right)."""
    right = node.right_classes
    return [replace(r, task_label=int(r.grade in right)) for r in records if r.grade in node.classes]


# ------------------------------------------------------------------- I/O


def _branch_to_json(branch: Branch):
    if isinstance(branch, CascadeNode):
        d = {"id": branch.id, "left": _branch_to_json(branch.left), "right": _branch_to_json(branch.right)}
        if branch.model_ref is not None:
            d["checkpoint"] = branch.model_ref
        return d
    return branch


def _branch_from_json(obj, base: Path | None) -> Branch:
    if isinstance(obj, list):
        if len(obj) != 1:
            raise ConfigError(f"cascade leaves must hold exactly one grade, got {obj}")
        obj = obj[0]
    if isinstance(obj, int):
        return obj
    if not isinstance(obj, dict) or "id" not in obj:
        raise ConfigError(f"invalid cascade node: {obj!r}")
    ref = obj.get("checkpoint")
    if ref is not None and base is not None and not Path(ref).is_absolute():
        ref = str(base / ref)
    return CascadeNode(str(obj["id"]), _branch_from_json(obj["left"], base), _branch_from_json(obj["right"], base), ref)


def tree_to_dict(tree: CascadeTree) -> dict:
    return {"format": CASCADE_FORMAT, "version": 1, "root": _branch_to_json(tree.root)}


def tree_from_dict(doc: dict, base: Path | None = None) -> CascadeTree:
    if doc.get("format", CASCADE_FORMAT) != CASCADE_FORMAT:
        raise ConfigError("not a cascade description")
    root = _branch_from_json(doc["root"], base)
    if not isinstance(root, CascadeNode):
        raise ConfigError("cascade root must be an internal node")
    return CascadeTree(root)


def load_cascade(path) -> CascadeTree:
    """Read a cascade JSON file; relative checkpoint paths resolve against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"cascade file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cascade file {path} is not valid JSON: {exc}") from None
    return tree_from_dict(doc, path.parent)

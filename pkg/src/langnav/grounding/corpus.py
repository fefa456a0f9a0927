"""Labeled training corpus, generated from instruction templates.

Every example carries the utterance and the gold symbol for each phrase of
its parse.  Roughly a third also carry a small synthetic scene plus gold
instance-level symbols, which is what teaches the geometric-consistency
weights: scenes place one figure exactly at the relation model's mean and a
decoy of the same class somewhere implausible, so the gold grounding is the
geometrically consistent one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..grammar import parse_instruction
from ..relations import RelationLibrary
from .model import phrase_key
from .spaces import NO_REF, Vocabulary

VERB_ACTION = {
    "go": "navigate", "navigate": "navigate", "walk": "navigate",
    "drive": "navigate", "head": "navigate", "move": "navigate",
    "proceed": "navigate",
    "retrieve": "retrieve", "get": "retrieve", "fetch": "retrieve",
    "bring": "retrieve", "find": "retrieve",
    "pick": "pick", "grab": "pick",
}

RELATION_PHRASE = {
    "behind": "behind", "near": "near", "inside": "inside", "down": "down",
    "front": "in front of", "left": "left of", "right": "right of",
    "nearest": "nearest to",
}


@dataclass
class LabeledExample:
    utterance: str
    annotation: dict  # phrase key -> gold symbol
    scene: dict | None = None
    behavior: dict | None = None

    def to_json(self) -> dict:
        enc = {f"{k[0]}:{k[1]}:{k[2]}": list(v) for k, v in self.annotation.items()}
        out = {"utterance": self.utterance, "annotation": enc}
        if self.scene is not None:
            out["scene"] = self.scene
            out["behavior"] = {f"{k[0]}:{k[1]}:{k[2]}": list(v)
                               for k, v in self.behavior.items()}
        return out

    @classmethod
    def from_json(cls, payload: dict) -> "LabeledExample":
        def dec(d):
            out = {}
            for key, sym in d.items():
                start, end, cat = key.split(":")
                out[(int(start), int(end), cat)] = tuple(sym)
            return out
        return cls(payload["utterance"], dec(payload["annotation"]),
                   payload.get("scene"),
                   dec(payload["behavior"]) if "behavior" in payload else None)


def _role_of_np(phrase, fig: str, lm: str | None):
    words = [t.text for t in phrase.own_tokens()]
    if lm is not None and lm in words:
        return lm
    if fig in words:
        return fig
    return None


def gold_annotation(tree, fig: str, rel: str | None, lm: str | None) -> dict:
    """Gold symbol per phrase for an instruction about fig (rel lm)."""
    gold = {}
    triple = ("triple", rel, fig, lm) if lm else None
    for phrase in tree.phrases():
        key = phrase_key(phrase)
        span_words = {t.text for t in phrase.tokens()}
        if phrase.category == "NP":
            if lm and fig in span_words and lm in span_words:
                gold[key] = triple
            else:
                name = _role_of_np(phrase, fig, lm)
                gold[key] = ("class", name) if name else ("null",)
        elif phrase.category == "PP":
            if lm and fig in span_words:
                gold[key] = triple  # goal marker passing the content through
            elif lm and lm in span_words and fig not in span_words:
                gold[key] = ("region", rel, lm)
            else:
                gold[key] = ("region", "unknown", fig)
        else:  # VP (both of them when a mode adverb wraps the inner one)
            gold[key] = triple if lm else ("region", "unknown", fig)
    return gold


def gold_behavior(tree, vocab, fig, rel, lm, fig_id, lm_id, mode) -> dict:
    verb = tree.head_word.text
    atype = VERB_ACTION[verb]
    act = ("act", atype, rel or "unknown", fig_id, fig, False,
           lm_id if lm else NO_REF, lm if lm else NO_REF, mode)
    gold = {}
    for phrase in tree.phrases():
        key = phrase_key(phrase)
        span_words = {t.text for t in phrase.tokens()}
        if phrase.category == "VP":
            gold[key] = act
        elif phrase.category == "NP":
            if lm and fig in span_words and lm in span_words:
                gold[key] = ("inst_ctx", fig_id, fig, False, rel, lm_id, lm)
            elif lm and lm in span_words:
                gold[key] = ("inst", lm_id, lm, False)
            elif fig in span_words:
                gold[key] = ("inst", fig_id, fig, False)
            else:
                gold[key] = ("null",)
        else:  # PP
            if lm and fig in span_words:
                gold[key] = ("inst_ctx", fig_id, fig, False, rel, lm_id, lm)
            elif lm and lm in span_words:
                gold[key] = ("reg_inst", rel, lm_id, lm, False)
            else:
                gold[key] = ("reg_inst", "unknown", fig_id, fig, False)
    return gold


def build_scene(rng, relations: RelationLibrary, fig: str, rel: str | None,
                lm: str | None, decoy_cls: str):
    """Scene where o0 (figure) satisfies the relation and o2 is a decoy."""
    robot = (0.0, 0.0)
    objects = []
    if lm:
        lm_xy = np.array([rng.uniform(2.5, 5.0), rng.uniform(-2.0, 2.0)])
        model = relations.get(rel)
        mean, _ = model.mean_cov(np.array(robot), lm_xy)
        fig_xy = mean
        objects.append({"id": "o1", "cls": lm, "xy": [round(float(lm_xy[0]), 3),
                                                      round(float(lm_xy[1]), 3)]})
        # same-class decoy on the wrong side of the landmark
        away = lm_xy - 2.5 * (mean - lm_xy) if np.linalg.norm(mean - lm_xy) > 0.1 \
            else lm_xy + np.array([-3.0, 1.0])
        objects.append({"id": "o2", "cls": fig, "xy": [round(float(away[0]), 3),
                                                       round(float(away[1]), 3)]})
    else:
        fig_xy = np.array([rng.uniform(2.0, 5.0), rng.uniform(-2.0, 2.0)])
    objects.insert(0, {"id": "o0", "cls": fig,
                       "xy": [round(float(fig_xy[0]), 3),
                              round(float(fig_xy[1]), 3)]})
    objects.append({"id": "o3", "cls": decoy_cls,
                    "xy": [round(float(rng.uniform(1.0, 5.0)), 3),
                           round(float(rng.uniform(-4.0, -2.5)), 3)]})
    return {"robot": list(robot), "objects": objects}


def generate_corpus(vocab: Vocabulary, relations: RelationLibrary,
                    seed: int = 17) -> list[LabeledExample]:
    rng = np.random.default_rng(seed)
    objects = [c for c in vocab.object_classes
               if c not in ("unknown", "robot", "wall")]
    locations = [c for c in vocab.location_types if c != "generic"]
    nav_verbs = ["go", "navigate", "walk", "drive"]
    take_verbs = ["retrieve", "get", "fetch", "find"]
    relations_used = [r for r in vocab.spatial_relations if r != "unknown"]
    examples = []

    def add(utterance, fig, rel=None, lm=None, scene_p=0.0, mode=None):
        if mode:
            utterance = f"{utterance} {mode}"
        tree = parse_instruction(utterance)
        ann = gold_annotation(tree, fig, rel, lm)
        ex = LabeledExample(utterance, ann)
        if rng.random() < scene_p:
            # the unrelated-class distractor must not collide with the roles
            pool = [c for c in objects if c not in (fig, lm)]
            decoy = pool[int(rng.integers(len(pool)))]
            scene = build_scene(rng, relations, fig, rel, lm,
                                decoy_cls=decoy)
            lm_id = "o1" if lm else None
            ex.scene = scene
            ex.behavior = gold_behavior(tree, vocab, fig, rel, lm,
                                        "o0", lm_id, mode or "unknown")
        examples.append(ex)

    # goal-only navigation over objects and locations
    for i, obj in enumerate(objects):
        add(f"{nav_verbs[i % len(nav_verbs)]} to the {obj}", obj, scene_p=0.7)
    for i, loc in enumerate(locations):
        add(f"{nav_verbs[(i + 1) % len(nav_verbs)]} to the {loc}", loc)

    # navigation with a relation between figure and landmark
    pair_pool = [(f, l) for f in objects for l in objects if f != l]
    rng.shuffle(pair_pool)
    for i, rel in enumerate(relations_used * 5):
        fig, lm = pair_pool[i % len(pair_pool)]
        if rel == "inside" and lm not in ("box", "suitcase", "car"):
            lm = "box"
            if fig == "box":
                fig = "ball"
        phrase = RELATION_PHRASE[rel]
        verb = nav_verbs[i % len(nav_verbs)]
        add(f"{verb} to the {fig} {phrase} the {lm}", fig, rel, lm, scene_p=0.5)

    # location chained to another location
    for i, loc in enumerate(locations):
        lm = locations[(i + 2) % len(locations)]
        if lm != loc:
            add(f"go to the {loc} down the {lm}", loc, "down", lm)

    # retrieval and manipulation
    for i, obj in enumerate(objects):
        add(f"{take_verbs[i % len(take_verbs)]} the {obj}", obj, scene_p=0.6)
    for i, (fig, lm) in enumerate(pair_pool[:18]):
        rel = ["behind", "near", "inside", "front"][i % 4]
        if rel == "inside":
            lm = "box" if fig != "box" else "suitcase"
        phrase = RELATION_PHRASE[rel]
        add(f"retrieve the {fig} {phrase} the {lm}", fig, rel, lm, scene_p=0.6)
        if i % 3 == 0:
            add(f"pick up the {fig} {phrase} the {lm}", fig, rel, lm,
                scene_p=0.6)

    # mode adverbs
    for i, obj in enumerate(objects[:6]):
        mode = ["quickly", "safely"][i % 2]
        add(f"go to the {obj}", obj, scene_p=0.5, mode=mode)
    add("go to the hydrant behind the cone", "hydrant", "behind", "cone",
        scene_p=1.0, mode="quickly")

    # canonical forms the rest of the stack leans on
    add("go to the hydrant behind the cone", "hydrant", "behind", "cone",
        scene_p=1.0)
    add("retrieve the ball inside the box", "ball", "inside", "box",
        scene_p=1.0)
    add("go to the hydrant", "hydrant", scene_p=1.0)
    add("go to the hydrant nearest to the cone", "hydrant", "nearest", "cone",
        scene_p=1.0)
    add("go to the kitchen down the hallway", "kitchen", "down", "hallway")
    return examples


def save_corpus(examples: list[LabeledExample], path: str) -> None:
    with open(path, "w") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json(), sort_keys=True) + "\n")


def load_corpus(path: str) -> list[LabeledExample]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(LabeledExample.from_json(json.loads(line)))
    return out

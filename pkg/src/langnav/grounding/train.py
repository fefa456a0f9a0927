"""Averaged structured perceptron for the grounding weights.

Both inference modes train against the same weight vector: annotation
examples use the class-level candidate axes, behavior examples the
instance-level candidates built from their scene.  Behavior candidate
generation is conditioned on the gold annotation content during training
(teacher forcing); at inference it conditions on the model's own annotation
MAP, which the annotation examples have taught it to get right.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from ..errors import EmptyCorpus
from ..grammar import parse_instruction
from .model import GroundingContext, GroundingModel, node_features, pair_features, phrase_key
from .spaces import annotation_candidates


def assignment_features(model: GroundingModel, tree, assignment, ctx=None) -> Counter:
    feats: Counter = Counter()
    for phrase in tree.phrases():
        sym = assignment[phrase_key(phrase)]
        feats.update(node_features(phrase, sym, ctx, model.relations,
                                   model.eps_lang))
        for child in phrase.phrase_children():
            feats.update(pair_features(sym, assignment[phrase_key(child)],
                                       child.category))
    return feats


def train_grounding(examples, vocab, relations, epochs: int = 50,
                    seed: int = 13, eps_lang: float = 1e-3,
                    holdout_every: int = 10):
    """Returns (model, metrics).  Weights are the perceptron average."""
    if not examples:
        raise EmptyCorpus("no training examples")
    model = GroundingModel(vocab, relations, eps_lang=eps_lang)
    prepared = []
    for ex in examples:
        tree = parse_instruction(ex.utterance)
        item = {
            "tree": tree,
            "ann_gold": ex.annotation,
            "ann_cands": annotation_candidates(tree, vocab),
        }
        for key, sym in ex.annotation.items():
            if sym not in item["ann_cands"][key]:
                raise EmptyCorpus(
                    f"gold symbol {sym} outside candidate space for "
                    f"{ex.utterance!r} at {key}")
        if ex.scene is not None:
            ctx = GroundingContext.from_scene(ex.scene)
            item["ctx"] = ctx
            item["beh_gold"] = ex.behavior
            item["beh_cands"] = model.behavior_candidates(
                tree, ctx, ann_map=ex.annotation)
            for key, sym in ex.behavior.items():
                if sym not in item["beh_cands"][key]:
                    raise EmptyCorpus(
                        f"gold behavior {sym} outside candidates for "
                        f"{ex.utterance!r} at {key}")
        prepared.append(item)

    holdout = prepared[holdout_every - 1::holdout_every]
    train = [p for i, p in enumerate(prepared)
             if (i + 1) % holdout_every != 0]
    if not train:
        raise EmptyCorpus("corpus too small for a train/holdout split")

    rng = np.random.default_rng(seed)
    w: Counter = Counter()
    u: Counter = Counter()  # for the averaging trick: avg = w - u / t
    t = 1

    def update(tree, cands, gold, ctx):
        nonlocal t
        model.weights = w
        model.invalidate_scores()
        pred, _ = model.map_assignment(tree, cands, ctx, margin_gold=gold)
        if pred != gold:
            good = assignment_features(model, tree, gold, ctx)
            bad = assignment_features(model, tree, pred, ctx)
            delta = Counter(good)
            delta.subtract(bad)
            for key, val in delta.items():
                if val:
                    w[key] += val
                    u[key] += t * val
        t += 1

    for _ in range(epochs):
        order = rng.permutation(len(train))
        for i in order:
            item = train[int(i)]
            update(item["tree"], item["ann_cands"], item["ann_gold"], None)
            if "ctx" in item:
                update(item["tree"], item["beh_cands"], item["beh_gold"],
                       item["ctx"])

    averaged = {k: w[k] - u[k] / t for k in w if w[k] - u[k] / t != 0.0}
    model.weights = averaged
    model.invalidate_scores()

    def accuracy(items):
        ann_hits = beh_hits = beh_total = 0
        for item in items:
            pred, _ = model.map_assignment(item["tree"], item["ann_cands"])
            ann_hits += int(pred == item["ann_gold"])
            if "ctx" in item:
                beh_total += 1
                pred, _ = model.map_assignment(
                    item["tree"], item["beh_cands"], item["ctx"])
                beh_hits += int(pred == item["beh_gold"])
        return {
            "annotation_accuracy": ann_hits / len(items) if items else 0.0,
            "behavior_accuracy": beh_hits / beh_total if beh_total else 1.0,
            "examples": len(items),
        }

    metrics = {"train": accuracy(train), "holdout": accuracy(holdout),
               "features": len(averaged), "epochs": epochs}
    return model, metrics

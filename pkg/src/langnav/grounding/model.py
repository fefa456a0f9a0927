"""Log-linear grounding model with exact tree MAP inference.

Each phrase of a parse carries correspondence variables over its candidate
symbols; exactly one is true per phrase, so an assignment picks one symbol
per phrase.  The joint score decomposes over the tree: a node term for every
(phrase, symbol) and a pair term for every (parent symbol, child symbol)
edge.  That factorization makes bottom-up Viterbi exact, and ties resolve to
the assignment that enumerates first when candidates are visited in their
canonical (sorted-key) order, which the brute-force oracle in the tests
reproduces.

The same weights serve annotation inference (class-level symbols, fixed
candidate axes) and behavior inference (instance-level symbols read from a
map sample), because features fire on class-level signatures in both modes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ..errors import ModelNotFound
from ..relations import RelationLibrary
from .spaces import NO_REF, NULL, Vocabulary, annotation_candidates, sym_key


def packaged_model_path() -> str:
    """Path of the grounding model that ships with the package."""
    return str(resources.files("langnav.data").joinpath("grounding_model.json"))


def packaged_corpus_path() -> str:
    """Path of the labeled corpus that ships with the package."""
    return str(resources.files("langnav.data").joinpath("corpus.jsonl"))


@dataclass(frozen=True)
class Annotation:
    relation: str
    figure_class: str
    landmark_class: str | None = None

    def key(self) -> str:
        return f"{self.relation}|{self.figure_class}|{self.landmark_class or ''}"


@dataclass(frozen=True)
class Behavior:
    action_type: str
    relation: str
    figure_id: object
    figure_class: str
    reference_id: object | None
    mode: str
    hypothesized: bool
    log_prob: float = 0.0


@dataclass(frozen=True)
class Instance:
    """One groundable thing in a map sample: an object or a spatial region."""
    inst_id: object
    cls: str
    xy: tuple
    hypothesized: bool = False
    is_region: bool = False
    points: tuple | None = None  # member positions for elongated regions


class GroundingContext:
    """Uniform view of a map sample for behavior inference and likelihoods."""

    def __init__(self, instances: list[Instance], robot_xy):
        self.instances = {inst.inst_id: inst for inst in instances}
        self.robot_xy = np.asarray(robot_xy, dtype=float)

    @classmethod
    def from_graph(cls, graph, robot_xy) -> "GroundingContext":
        out = []
        means = graph.solve_means() if graph.nodes else {}
        for node in graph.nodes.values():
            if node.kind != "object":
                continue
            out.append(Instance(
                inst_id=node.node_id, cls=node.label,
                xy=tuple(means[node.node_id]),
                hypothesized=(node.status == "hypothesized")))
        for rid in graph.spatial_regions():
            label = graph.region_label_mode(rid)
            if label == "generic":
                continue
            pts = graph.region_nodes_xy(rid)
            out.append(Instance(
                inst_id=f"r{rid}", cls=label, xy=tuple(pts.mean(axis=0)),
                hypothesized=(graph.regions[rid].status == "hypothesized"),
                is_region=True, points=tuple(map(tuple, pts))))
        return cls(out, robot_xy)

    @classmethod
    def from_scene(cls, scene: dict) -> "GroundingContext":
        out = [Instance(inst_id=o["id"], cls=o["cls"], xy=tuple(o["xy"]),
                        hypothesized=bool(o.get("hyp", False)),
                        is_region=bool(o.get("region", False)))
               for o in scene.get("objects", [])]
        return cls(out, scene.get("robot", (0.0, 0.0)))

    def of_class(self, name: str) -> list[Instance]:
        return sorted((i for i in self.instances.values() if i.cls == name),
                      key=lambda i: str(i.inst_id))


# ---------------------------------------------------------------------------
# feature extraction


def _atoms(sym: tuple) -> list:
    kind = sym[0]
    if kind == "null":
        return [("null",)]
    if kind == "class":
        return [("class", sym[1])]
    if kind == "region":
        return [("pair",), ("prel", sym[1]), ("pobj", sym[2])]
    if kind == "triple":
        return [("triple",), ("trel", sym[1]), ("tfig", sym[2]), ("tlm", sym[3])]
    if kind == "inst":
        _, _, cls, hyp = sym
        return [("class", cls)] + ([("hyp",)] if hyp else [])
    if kind == "inst_ctx":
        _, _, cls, hyp, s, _, ref_cls = sym
        return ([("triple",), ("trel", s), ("tfig", cls), ("tlm", ref_cls)]
                + ([("hyp",)] if hyp else []))
    if kind == "reg_inst":
        _, s, _, ref_cls, _ = sym
        return [("pair",), ("prel", s), ("pobj", ref_cls)]
    if kind == "act":
        _, atype, s, _, fig_cls, fig_hyp, _, _, mode = sym
        return ([("act", atype), ("actmode", mode), ("actfig", fig_cls),
                 ("actrel", s)] + ([("hyp",)] if fig_hyp else []))
    raise ValueError(f"unknown symbol kind {kind!r}")


def _slots(sym: tuple) -> dict:
    kind = sym[0]
    if kind == "class":
        return {"fig": sym[1]}
    if kind == "region":
        return {"rel": sym[1], "lm": sym[2]}
    if kind == "triple":
        return {"rel": sym[1], "fig": sym[2], "lm": sym[3]}
    if kind == "inst":
        return {"fig": sym[2], "fig_id": sym[1]}
    if kind == "inst_ctx":
        return {"fig": sym[2], "fig_id": sym[1], "rel": sym[4],
                "lm": sym[6], "lm_id": sym[5]}
    if kind == "reg_inst":
        return {"rel": sym[1], "lm": sym[3], "lm_id": sym[2]}
    if kind == "act":
        out = {"act": sym[1], "rel": sym[2], "fig": sym[4], "fig_id": sym[3],
               "mode": sym[8]}
        if sym[6] != NO_REF:
            out["lm"] = sym[7]
            out["lm_id"] = sym[6]
        return out
    return {}


def node_features(phrase, sym: tuple, ctx: GroundingContext | None,
                  relations: RelationLibrary | None, eps: float = 1e-3) -> dict:
    feats: dict[str, float] = {}
    words = [t.text for t in phrase.own_tokens()]
    for atom in _atoms(sym):
        akey = ":".join(map(str, atom))
        feats[f"cat={phrase.category}&{akey}"] = feats.get(
            f"cat={phrase.category}&{akey}", 0.0) + 1.0
        for w in words:
            key = f"w={w}&{akey}"
            feats[key] = feats.get(key, 0.0) + 1.0
    # geometric consistency for relational symbols grounded in a map sample
    if ctx is not None and relations is not None and sym[0] in ("inst_ctx", "act"):
        sl = _slots(sym)
        rel = sl.get("rel")
        fig_id, lm_id = sl.get("fig_id"), sl.get("lm_id")
        if rel and rel != "unknown" and fig_id is not None and lm_id is not None:
            fig = ctx.instances.get(fig_id)
            ref = ctx.instances.get(lm_id)
            if fig is not None and ref is not None:
                model = relations.get(rel)
                if model.comparative:
                    rivals = ctx.of_class(fig.cls)
                    dists = {i.inst_id: float(np.hypot(i.xy[0] - ref.xy[0],
                                                       i.xy[1] - ref.xy[1]))
                             for i in rivals}
                    best = min(dists, key=lambda k: (dists[k], str(k)))
                    val = 1.0 if best == fig_id else eps
                else:
                    val = model.density_ratio(fig.xy, ctx.robot_xy, ref.xy,
                                              ref.points)
                feats["map_sat"] = max(val, eps)
    return feats


def pair_features(parent_sym: tuple, child_sym: tuple, child_category: str) -> dict:
    feats: dict[str, float] = {}
    if child_sym == NULL:
        feats[f"child_null&{child_category}"] = 1.0
        return feats
    if parent_sym == NULL:
        feats[f"parent_null_child_content&{child_category}"] = 1.0
        return feats
    ps, cs = _slots(parent_sym), _slots(child_sym)
    for slot in ("rel", "fig", "lm", "fig_id", "lm_id", "mode", "act"):
        if slot in ps and slot in cs:
            tag = "agree" if ps[slot] == cs[slot] else "clash"
            feats[f"{tag}_{slot}"] = 1.0
    # content handed up from a PP: its landmark slot is the parent's landmark,
    # while a bare class child supplies the parent's figure
    if "lm" in cs and "fig" not in cs and "fig" in ps and "lm" not in ps:
        feats["pp_into_class"] = 1.0
    return feats


# ---------------------------------------------------------------------------


def phrase_key(phrase) -> tuple:
    return (phrase.start, phrase.end, phrase.category)


class GroundingModel:
    def __init__(self, vocab: Vocabulary, relations: RelationLibrary,
                 weights: dict | None = None, eps_lang: float = 1e-3):
        self.vocab = vocab
        self.relations = relations
        self.weights: dict[str, float] = dict(weights or {})
        self.eps_lang = float(eps_lang)
        self._pair_cache: dict = {}

    # --- scoring -----------------------------------------------------------

    def invalidate_scores(self) -> None:
        """Drop memoized scores; call after any weight change."""
        self._pair_cache.clear()

    def _dot(self, feats: dict) -> float:
        w = self.weights
        return sum(w.get(k, 0.0) * v for k, v in feats.items())

    def score_node(self, phrase, sym, ctx=None) -> float:
        return self._dot(node_features(phrase, sym, ctx, self.relations,
                                       self.eps_lang))

    def score_pair(self, parent_sym, child_sym, child_category) -> float:
        # pair features depend only on the symbols, so the score is safe
        # to memoize until the weights change
        key = (parent_sym, child_sym, child_category)
        hit = self._pair_cache.get(key)
        if hit is None:
            hit = self._dot(pair_features(parent_sym, child_sym,
                                          child_category))
            self._pair_cache[key] = hit
        return hit

    # --- exact MAP over a phrase tree ---------------------------------------

    def _solve(self, tree, candidates: dict, ctx=None,
               margin_gold: dict | None = None) -> dict:
        """Viterbi tables for every phrase: key -> (table, cands) where
        table[i] = (best subtree score with this phrase at candidate i,
        per-child best candidate indices).  First maximum wins ties, so the
        choice matches a brute-force enumeration in candidate order.

        With `margin_gold` (a gold assignment) every non-gold candidate
        gets a unit score bonus: loss-augmented decoding for training, so
        the learned weights separate gold by a real margin instead of
        leaning on the tie-break."""
        memo: dict = {}

        def solve(phrase):
            key = phrase_key(phrase)
            if key in memo:
                return memo[key]
            cands = candidates[key]
            children = phrase.phrase_children()
            child_solved = [solve(c) for c in children]
            table = []
            for sym in cands:
                score = self.score_node(phrase, sym, ctx)
                if margin_gold is not None and sym != margin_gold[key]:
                    score += 1.0
                picks = []
                for child, (ctable, ccands) in zip(children, child_solved):
                    best_idx, best_val = 0, -math.inf
                    for idx, csym in enumerate(ccands):
                        val = ctable[idx][0] + self.score_pair(
                            sym, csym, child.category)
                        if val > best_val:
                            best_idx, best_val = idx, val
                    score += best_val
                    picks.append(best_idx)
                table.append((score, picks))
            memo[key] = (table, cands)
            return memo[key]

        solve(tree.phrases()[0])
        return memo

    def map_assignment(self, tree, candidates: dict, ctx=None,
                       clamp_root: tuple | None = None,
                       margin_gold: dict | None = None):
        """Best symbol per phrase; returns (assignment dict, total score).

        `candidates` maps phrase_key -> ordered candidate list.  With
        `clamp_root` the root phrase is fixed to that symbol and the rest of
        the tree optimized around it.  `margin_gold` is passed through for
        loss-augmented training decodes.
        """
        root = tree.phrases()[0]
        memo = self._solve(tree, candidates, ctx, margin_gold)
        table, cands = memo[phrase_key(root)]
        if clamp_root is not None:
            matches = [i for i, s in enumerate(cands) if s == clamp_root]
            if not matches:
                raise KeyError(f"clamped symbol not a candidate: {clamp_root}")
            best_root = matches[0]
        else:
            best_root = 0
            for i in range(1, len(cands)):
                if table[i][0] > table[best_root][0]:
                    best_root = i
        assignment = {}

        def collect(phrase, idx):
            tbl, cnds = memo[phrase_key(phrase)]
            assignment[phrase_key(phrase)] = cnds[idx]
            for child, cidx in zip(phrase.phrase_children(), tbl[idx][1]):
                collect(child, cidx)

        collect(root, best_root)
        return assignment, table[best_root][0]

    # --- annotation inference ------------------------------------------------

    def infer_annotations(self, tree) -> list[Annotation]:
        candidates = annotation_candidates(tree, self.vocab)
        assignment, _ = self.map_assignment(tree, candidates)
        root_sym = assignment[phrase_key(tree.phrases()[0])]
        return self._to_annotations(root_sym)

    def _to_annotations(self, sym: tuple) -> list[Annotation]:
        if sym == NULL:
            return []
        if sym[0] == "class":
            return [Annotation("unknown", sym[1], None)]
        if sym[0] == "region":
            return [Annotation(sym[1], sym[2], None)]
        if sym[0] == "triple":
            return [Annotation(sym[1], sym[2], sym[3])]
        return []

    # --- behavior inference ---------------------------------------------------

    def behavior_candidates(self, tree, ctx: GroundingContext,
                            ann_map: dict | None = None) -> dict:
        """Instance-level candidates for every phrase, from the map sample.

        `ann_map` overrides the annotation assignment the candidates are
        derived from; by default the model's own MAP is used.
        """
        if ann_map is None:
            ann_cands = annotation_candidates(tree, self.vocab)
            ann_map, _ = self.map_assignment(tree, ann_cands)
        words = {t.text for t in tree.tokens()}
        modes = ["unknown"] + [m for m in self.vocab.modes
                               if m != "unknown" and m in words]
        out = {}

        def content_of(sym):
            sl = _slots(sym)
            return sl.get("fig"), sl.get("rel"), sl.get("lm")

        for phrase in tree.phrases():
            key = phrase_key(phrase)
            fig_cls, rel, lm_cls = content_of(ann_map[key])
            cands = [NULL]
            if phrase.category == "NP":
                if rel and lm_cls:  # relational noun phrase
                    for fig in ctx.of_class(fig_cls) if fig_cls else []:
                        for ref in ctx.of_class(lm_cls):
                            if ref.inst_id == fig.inst_id:
                                continue
                            for s in dict.fromkeys([rel, "unknown"]):
                                cands.append(("inst_ctx", fig.inst_id, fig.cls,
                                              fig.hypothesized, s,
                                              ref.inst_id, ref.cls))
                elif fig_cls:
                    for fig in ctx.of_class(fig_cls):
                        cands.append(("inst", fig.inst_id, fig.cls,
                                      fig.hypothesized))
            elif phrase.category == "PP":
                if fig_cls and lm_cls:
                    # passed-through triple ("to the hydrant behind the cone"):
                    # the phrase grounds a figure in relational context
                    for fig in ctx.of_class(fig_cls):
                        for ref in ctx.of_class(lm_cls):
                            if ref.inst_id == fig.inst_id:
                                continue
                            cands.append(("inst_ctx", fig.inst_id, fig.cls,
                                          fig.hypothesized, rel or "unknown",
                                          ref.inst_id, ref.cls))
                elif lm_cls:
                    # plain region pair ("behind the cone", "to the hydrant")
                    for s in dict.fromkeys([rel or "unknown", "unknown"]):
                        for ref in ctx.of_class(lm_cls):
                            cands.append(("reg_inst", s, ref.inst_id, ref.cls,
                                          ref.hypothesized))
            out[key] = sorted(set(cands), key=sym_key)

        # verb phrases compose actions from their child content; deepest
        # first so a VP wrapping another VP (adverb attachment) sees the
        # inner phrase's act candidates
        for phrase in reversed(tree.phrases()):
            if phrase.category != "VP":
                continue
            key = phrase_key(phrase)
            cands = [NULL]
            child_syms = []
            for child in phrase.phrase_children():
                child_syms.extend(out[phrase_key(child)])
            groundings = set()
            for sym in child_syms:
                sl = _slots(sym)
                if "fig_id" in sl:
                    fig = ctx.instances[sl["fig_id"]]
                    groundings.add((sl["fig_id"], fig.cls, fig.hypothesized,
                                    sl.get("rel", "unknown"),
                                    sl.get("lm_id", NO_REF),
                                    sl.get("lm", NO_REF)))
                elif "lm_id" in sl:  # region induced by a PP: head for goals
                    ref = ctx.instances[sl["lm_id"]]
                    groundings.add((sl["lm_id"], ref.cls, ref.hypothesized,
                                    sl.get("rel", "unknown"), NO_REF, NO_REF))
                elif sym[0] == "act":
                    groundings.add((sl["fig_id"], sl["fig"],
                                    sym[5], sl["rel"],
                                    sl.get("lm_id", NO_REF),
                                    sl.get("lm", NO_REF)))
            for atype in self.vocab.actions:
                if atype == "unknown":
                    continue
                for fig_id, fig_cls2, fig_hyp, s, ref_id, ref_cls2 in groundings:
                    for mode in modes:
                        cands.append(("act", atype, s, fig_id, fig_cls2,
                                      fig_hyp, ref_id, ref_cls2, mode))
            out[key] = sorted(set(cands), key=sym_key)
        return out

    def infer_behaviors(self, tree, ctx: GroundingContext) -> list[Behavior]:
        """Distribution over executable behaviors for one map sample."""
        root = tree.phrases()[0]
        if root.category != "VP":
            return []
        candidates = self.behavior_candidates(tree, ctx)
        root_key = phrase_key(root)
        memo = self._solve(tree, candidates, ctx)
        table, cands = memo[root_key]
        actions, scores = [], []
        for sym, (score, _) in zip(cands, table):
            if sym[0] == "act":
                actions.append(sym)
                scores.append(score)
        if not actions:
            return []
        arr = np.asarray(scores)
        logz = float(arr.max() + np.log(np.exp(arr - arr.max()).sum()))
        behaviors = []
        for sym, score in zip(actions, scores):
            _, atype, s, fig_id, fig_cls, fig_hyp, ref_id, _, mode = sym
            behaviors.append(Behavior(
                action_type=atype, relation=s, figure_id=fig_id,
                figure_class=fig_cls,
                reference_id=None if ref_id == NO_REF else ref_id,
                mode=mode, hypothesized=bool(fig_hyp),
                log_prob=float(score - logz)))
        behaviors.sort(key=lambda b: (-b.log_prob, str(b.figure_id),
                                      b.action_type, b.relation, b.mode))
        return behaviors

    # --- annotation likelihood -------------------------------------------------

    def annotation_likelihood(self, ctx: GroundingContext,
                              annotation: Annotation) -> float:
        """How plausible a map sample makes an annotation, in (0, 1]."""
        eps = self.eps_lang
        figures = ctx.of_class(annotation.figure_class)
        if not figures:
            return eps
        if not annotation.landmark_class:
            return 1.0
        landmarks = ctx.of_class(annotation.landmark_class)
        if not landmarks:
            return eps
        model = self.relations.get(annotation.relation)
        if model.comparative or annotation.relation == "unknown":
            return 1.0
        best = 0.0
        for fig in figures:
            for ref in landmarks:
                if fig.inst_id == ref.inst_id:
                    continue
                best = max(best, model.density_ratio(
                    fig.xy, ctx.robot_xy, ref.xy, ref.points))
        return float(min(1.0, max(best, eps)))

    # --- serialization -----------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "weights": {k: self.weights[k] for k in sorted(self.weights)},
            "vocabulary": {
                "object_classes": list(self.vocab.object_classes),
                "location_types": list(self.vocab.location_types),
                "spatial_relations": list(self.vocab.spatial_relations),
                "actions": list(self.vocab.actions),
                "modes": list(self.vocab.modes),
            },
            "eps_lang": self.eps_lang,
        }

    def save(self, path: str, meta: dict | None = None) -> None:
        payload = dict(meta or {})
        payload.update(self.to_json())
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, payload: dict, relations: RelationLibrary) -> "GroundingModel":
        vocab = Vocabulary.from_config(payload["vocabulary"])
        return cls(vocab, relations, payload["weights"],
                   payload.get("eps_lang", 1e-3))

    @classmethod
    def load(cls, path: str, relations: RelationLibrary) -> "GroundingModel":
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except FileNotFoundError as exc:
            raise ModelNotFound(f"grounding model not found: {path}") from exc
        return cls.from_json(payload, relations)

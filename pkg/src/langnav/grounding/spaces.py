"""Symbol spaces for grounding.

Symbols are plain tuples so they hash, sort, and serialize cleanly:

- ``("null",)``                          phrase expresses no environment content
- ``("class", c)``                       object class or location type
- ``("region", s, c)``                   region induced by relation s to class c
- ``("triple", s, f, l)``                figure class f stands in relation s to
                                         landmark class l
- ``("inst", id, cls, hyp)``             concrete object/region instance
- ``("inst_ctx", id, cls, hyp, s, ref, ref_cls)``  instance plus its relational
                                         context from an attached phrase
- ``("reg_inst", s, ref, ref_cls, hyp)`` region induced by relation s to a
                                         concrete instance
- ``("act", atype, s, fig, fig_cls, fig_hyp, ref, ref_cls, mode)``  executable
                                         behavior over concrete instances

The full annotation space is the union of classes, location types, relations,
region classes (relations x classes), and relation classes (relations x
classes x classes), every axis containing "unknown".  Candidate generation
for a specific parse narrows each axis to the names that occur among the
sentence words (plus "unknown"), which keeps exact inference small without
touching model scores.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import InvalidVocabulary

NULL = ("null",)
NO_REF = ""


def sym_key(sym: tuple) -> str:
    return "|".join(str(part) for part in sym)


@dataclass(frozen=True)
class Vocabulary:
    object_classes: tuple
    location_types: tuple
    spatial_relations: tuple
    actions: tuple
    modes: tuple

    @classmethod
    def from_config(cls, section: dict) -> "Vocabulary":
        v = cls(
            tuple(section["object_classes"]),
            tuple(section["location_types"]),
            tuple(section["spatial_relations"]),
            tuple(section["actions"]),
            tuple(section["modes"]),
        )
        for name, axis in (("object_classes", v.object_classes),
                           ("spatial_relations", v.spatial_relations),
                           ("actions", v.actions),
                           ("modes", v.modes)):
            if len(set(axis)) != len(axis):
                raise InvalidVocabulary(f"duplicate entries in {name}")
            if name != "object_classes" and "unknown" not in axis:
                raise InvalidVocabulary(f"{name} must contain 'unknown'")
        if "unknown" not in v.object_classes:
            raise InvalidVocabulary("object_classes must contain 'unknown'")
        return v

    @property
    def content_classes(self) -> tuple:
        """Names usable as figure or landmark content."""
        return self.object_classes + self.location_types

    def is_location(self, name: str) -> bool:
        return name in self.location_types


@dataclass(frozen=True)
class AnnotationSpace:
    classes: tuple          # ("class", c)
    relations: tuple        # bare relation names
    region_classes: tuple   # ("region", s, c)
    relation_classes: tuple  # ("triple", s, f, l)

    @classmethod
    def build(cls, vocab: Vocabulary) -> "AnnotationSpace":
        names = vocab.content_classes
        rels = vocab.spatial_relations
        return cls(
            classes=tuple(("class", c) for c in names),
            relations=rels,
            region_classes=tuple(("region", s, c) for s in rels for c in names),
            relation_classes=tuple(
                ("triple", s, f, l) for s in rels for f in names for l in names
            ),
        )

    def sizes(self) -> dict:
        return {
            "classes": len(self.classes),
            "relations": len(self.relations),
            "region_classes": len(self.region_classes),
            "relation_classes": len(self.relation_classes),
        }


def lexical_names(words, names) -> list:
    """The subset of `names` mentioned verbatim in the sentence, plus unknown."""
    present = [n for n in names if n != "unknown" and n in words]
    return ["unknown"] + present


def annotation_candidates(tree, vocab: Vocabulary) -> dict:
    """Per-phrase candidate symbols for annotation inference.

    Keyed by (start, end, category).  Axes are narrowed to sentence words;
    inference over the returned sets is exact.
    """
    words = {t.text for t in tree.tokens()}
    classes = lexical_names(words, vocab.content_classes)
    rels = lexical_names(words, vocab.spatial_relations)
    pairs = [("region", s, c) for s in rels for c in classes]
    triples = [("triple", s, f, l) for s in rels for f in classes for l in classes]
    out = {}
    for phrase in tree.phrases():
        has_pp_child = any(p.category == "PP" for p in phrase.phrase_children())
        if phrase.category == "NP":
            cands = [NULL] + [("class", c) for c in classes]
            if has_pp_child:
                cands += triples
        else:  # PP and VP
            cands = [NULL] + pairs + triples
        key = (phrase.start, phrase.end, phrase.category)
        out[key] = sorted(set(cands), key=sym_key)
    return out

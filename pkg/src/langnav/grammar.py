"""Tokenizer and chart parser for the instruction fragment.

The grammar is a small CFG shipped as JSON (lexicon plus rules whose right
hand sides have one to three symbols).  Sentences in scope are imperatives
such as "go to the hydrant behind the cone" or "pick up the ball inside the
box".  All rules carry weight one, so parse selection reduces to a
deterministic tie break: leftmost-longest noun phrases first, then the parse
with fewer nodes, then a canonical serialization.  Sentences are short
(a dozen tokens), so the chart keeps every parse per cell rather than a
single back-pointer.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from .errors import EmptyInstruction, ParseFailure, UnknownWord

TERMINAL_CATEGORIES = frozenset({"VB", "NN", "DT", "IN", "RB"})
PHRASE_CATEGORIES = frozenset({"VP", "NP", "PP"})
ALL_CATEGORIES = TERMINAL_CATEGORIES | PHRASE_CATEGORIES


@dataclass(frozen=True)
class Token:
    text: str
    index: int


@dataclass(frozen=True)
class ParseTree:
    """Node of a parse.  Leaves carry exactly one token and no children."""

    category: str
    start: int
    end: int  # exclusive
    children: tuple = ()
    token: Token | None = None

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    @property
    def is_leaf(self) -> bool:
        return self.token is not None

    def leaves(self) -> list["ParseTree"]:
        if self.is_leaf:
            return [self]
        out = []
        for c in self.children:
            out.extend(c.leaves())
        return out

    def tokens(self) -> list[Token]:
        return [leaf.token for leaf in self.leaves()]

    @property
    def head_word(self) -> Token | None:
        """Lexical head: the verb of a VP, noun of an NP, preposition of a PP."""
        if self.is_leaf:
            return self.token
        want = {"VP": "VB", "NP": "NN", "PP": "IN"}.get(self.category)
        for c in self.children:
            if c.category == want and c.is_leaf:
                return c.token
        for c in self.children:
            if c.category == self.category:
                return c.head_word
        for c in self.children:
            h = c.head_word
            if h is not None:
                return h
        return None

    def phrases(self) -> list["ParseTree"]:
        """All VP/NP/PP nodes in preorder."""
        out = []
        if self.category in PHRASE_CATEGORIES:
            out.append(self)
        for c in self.children:
            out.extend(c.phrases())
        return out

    def phrase_children(self) -> list["ParseTree"]:
        """Maximal phrase descendants (not crossing another phrase node)."""
        out = []
        for c in self.children:
            if c.category in PHRASE_CATEGORIES:
                out.append(c)
            else:
                out.extend(c.phrase_children())
        return out

    def own_tokens(self) -> list[Token]:
        """Tokens dominated by this node but by none of its phrase children."""
        covered = set()
        for p in self.phrase_children():
            covered.update(range(p.start, p.end))
        return [t for t in self.tokens() if t.index not in covered]

    def to_dict(self) -> dict:
        d = {"category": self.category, "span": [self.start, self.end]}
        if self.is_leaf:
            d["token"] = self.token.text
        else:
            d["children"] = [c.to_dict() for c in self.children]
        return d

    def pretty(self) -> str:
        if self.is_leaf:
            return f"({self.category} {self.token.text})"
        return "(" + self.category + " " + " ".join(c.pretty() for c in self.children) + ")"


class Grammar:
    def __init__(self, lexicon: dict, rules: list, start: list):
        for lhs, rhs in rules:
            if not 1 <= len(rhs) <= 3:
                raise ValueError(f"rule arity out of range: {lhs} -> {rhs}")
        self.lexicon = {w: frozenset(cats) for w, cats in lexicon.items()}
        self.rules = [(lhs, tuple(rhs)) for lhs, rhs in rules]
        self.start = list(start)

    @classmethod
    def from_json(cls, payload: dict) -> "Grammar":
        return cls(payload["lexicon"], payload["rules"], payload["start"])

    def categories_for(self, word: str) -> frozenset:
        if word not in self.lexicon:
            raise UnknownWord(word)
        return self.lexicon[word]


@lru_cache(maxsize=1)
def default_grammar() -> Grammar:
    text = resources.files("langnav.data").joinpath("grammar.json").read_text()
    return Grammar.from_json(json.loads(text))


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def tokenize(text: str) -> list[Token]:
    """Lowercase, strip punctuation, split on whitespace."""
    words = text.lower().translate(_PUNCT_TABLE).split()
    if not words:
        raise EmptyInstruction("instruction contains no tokens")
    return [Token(w, i) for i, w in enumerate(words)]


def _tie_key(tree: ParseTree):
    nps = []
    count = 0
    stack = [tree]
    while stack:
        node = stack.pop()
        count += 1
        if node.category == "NP":
            nps.append((node.start, node.end - node.start))
        stack.extend(reversed(node.children))
    # preorder NP spans, earliest start first and longer span preferred
    key_spans = tuple((s, -ln) for s, ln in nps)
    return (key_spans, count, tree.pretty())


def _splits(start: int, end: int, parts: int):
    """Ways to cut [start, end) into `parts` non-empty contiguous chunks."""
    if parts == 1:
        yield ((start, end),)
        return
    for mid in range(start + 1, end - parts + 2):
        for rest in _splits(mid, end, parts - 1):
            yield ((start, mid),) + rest


def all_parses(tokens: list[Token], grammar: Grammar | None = None) -> dict:
    """Full chart: maps (start, end, category) to the list of parses."""
    grammar = grammar or default_grammar()
    n = len(tokens)
    chart: dict[tuple, list[ParseTree]] = {}
    for tok in tokens:
        for cat in sorted(grammar.categories_for(tok.text)):
            chart.setdefault((tok.index, tok.index + 1, cat), []).append(
                ParseTree(cat, tok.index, tok.index + 1, token=tok)
            )
    for length in range(1, n + 1):
        for start in range(0, n - length + 1):
            end = start + length
            # iterate until no new entries appear so same-span (unary) rules chain
            added = True
            while added:
                added = False
                for lhs, rhs in grammar.rules:
                    if len(rhs) > length:
                        continue
                    for cuts in _splits(start, end, len(rhs)):
                        options = [chart.get((a, b, sym), []) for (a, b), sym in zip(cuts, rhs)]
                        if any(not opt for opt in options):
                            continue
                        for combo in _combinations(options):
                            tree = ParseTree(lhs, start, end, children=tuple(combo))
                            cell = chart.setdefault((start, end, lhs), [])
                            if not any(t.pretty() == tree.pretty() for t in cell):
                                cell.append(tree)
                                added = True
    return chart


def _combinations(options):
    if len(options) == 1:
        for x in options[0]:
            yield (x,)
        return
    for x in options[0]:
        for rest in _combinations(options[1:]):
            yield (x,) + rest


def parse(tokens: list[Token], grammar: Grammar | None = None) -> ParseTree:
    """Best full-span parse, root VP preferred over NP, deterministic ties."""
    if not tokens:
        raise EmptyInstruction("no tokens to parse")
    grammar = grammar or default_grammar()
    chart = all_parses(tokens, grammar)
    n = len(tokens)
    for root_cat in grammar.start:
        cell = chart.get((0, n, root_cat), [])
        if cell:
            return min(cell, key=_tie_key)
    raise ParseFailure("no parse spans the instruction: " + " ".join(t.text for t in tokens))


def parse_instruction(text: str, grammar: Grammar | None = None) -> ParseTree:
    return parse(tokenize(text), grammar)

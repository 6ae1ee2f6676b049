"""Candidate token tree: confidence-ranked construction, path enumeration,
and linearization for single-pass verification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import sample_index
from .errors import RejectedInput
from .models import DraftModel, draft_forward

CONF_ATOL = 1e-12


@dataclass
class DraftNode:
    token: int
    parent: int            # index into DraftTree.nodes, -1 for the root
    prob: float             # drafter probability of this token at its parent
    confidence: float       # product of probs along the root path
    depth: int
    dist: np.ndarray = field(repr=False, default=None)     # drafter dist for children
    feature: np.ndarray = field(repr=False, default=None)  # drafter pseudo-feature


@dataclass
class DraftTree:
    nodes: list[DraftNode]
    root_dist: np.ndarray
    budget: int
    branching: int
    max_depth: int

    def children_of(self) -> list[list[int]]:
        """Child index lists, position 0 holding the root's children."""
        kids: list[list[int]] = [[] for _ in range(len(self.nodes) + 1)]
        for i, node in enumerate(self.nodes):
            kids[node.parent + 1].append(i)
        return kids


@dataclass
class TokenPath:
    tokens: list[int]
    probs: list[float]

    def __post_init__(self):
        if len(self.tokens) != len(self.probs) or not self.tokens:
            raise RejectedInput("path needs aligned, nonempty tokens and probs")

    @property
    def confidence(self) -> float:
        return float(np.prod(self.probs))

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class LinearizedTree:
    """Pending (previously skip-accepted) tokens followed by tree nodes in
    insertion order, with exact root-path visibility per position."""

    tokens: list[int]
    ancestors: list[frozenset]   # flat indices on each position's root path, self excluded
    pending_len: int
    tree: DraftTree


def build_tree(draft: DraftModel, features, tokens, k_b: int, D: int,
               budget: int, rng: np.random.Generator | None = None) -> DraftTree:
    """Breadth-synchronous expansion with global confidence pruning.

    Each round expands every frontier node by k_b candidate tokens, then the
    whole node set is cut back to the budget-many highest cumulative
    confidences (ties: smaller token id, then earlier insertion), keeping
    ancestor closure.

    Without an rng, each node expands by its top-k_b tokens.  With an rng,
    children are drawn sequentially without replacement from the node's
    draft distribution; paired with the verifier's sequential residual
    bookkeeping this is the arrangement that preserves the target
    distribution end to end, so the decoding engine always drafts this way.
    Stored per-child probs are always taken from the node's original
    distribution.
    """
    if k_b < 2 or D < 1 or budget < k_b:
        raise RejectedInput("need k_b >= 2, D >= 1, budget >= k_b")
    context = [int(t) for t in tokens]
    if len(context) < draft.window:
        raise RejectedInput(f"context shorter than drafter window {draft.window}")

    if not 1 <= len(features) <= len(context):
        raise RejectedInput("features must cover a nonempty suffix of the context")
    root_dist = draft_forward(draft, features, context[len(context) - len(features):])
    root_feature = np.asarray(features[-1], dtype=np.float64)

    # Entries: (node, insertion_seq). Node indices are assigned after pruning.
    entries: list[tuple[DraftNode, int]] = []
    seq = 0
    frontier = [-1]  # parent slots; -1 is the virtual root
    by_slot: dict[int, DraftNode] = {}

    def node_dist(slot: int) -> np.ndarray:
        return root_dist if slot == -1 else by_slot[slot].dist

    def node_conf(slot: int) -> float:
        return 1.0 if slot == -1 else by_slot[slot].confidence

    def path_tokens(slot: int) -> list[int]:
        out = []
        while slot != -1:
            node = by_slot[slot]
            out.append(node.token)
            slot = node.parent
        return context + out[::-1]

    for depth in range(1, D + 1):
        if not frontier:
            break
        for slot in frontier:
            dist = node_dist(slot)
            if rng is None:
                order = [int(t) for t in np.lexsort((np.arange(dist.size), -dist))[:k_b]]
            else:
                order = []
                avail = dist.copy()
                for _ in range(k_b):
                    total = avail.sum()
                    if total <= 0.0:
                        break
                    tok = sample_index(avail / total, rng)
                    order.append(tok)
                    avail[tok] = 0.0
            parent_feature = root_feature if slot == -1 else by_slot[slot].feature
            hist = path_tokens(slot)
            for tok in order:
                p = float(dist[tok])
                if p <= 0.0:
                    continue
                feat = draft.extend_feature(parent_feature, hist[-draft.window], tok)
                child = DraftNode(token=tok, parent=slot, prob=p,
                                  confidence=node_conf(slot) * p, depth=depth,
                                  feature=feat)
                entries.append((child, seq))
                seq += 1

        # Global retention over all nodes created so far.
        ranked = sorted(range(len(entries)),
                        key=lambda i: (-entries[i][0].confidence,
                                       entries[i][0].token, entries[i][1]))
        keep = set(ranked[:budget])
        # Ancestor closure: a kept node's parent must be kept. Parents have
        # confidence >= child and shallower depth, so repair is a rare
        # tie-breaking correction.
        changed = True
        while changed:
            changed = False
            seq_to_idx = {entries[i][1]: i for i in range(len(entries))}
            for i in list(keep):
                parent_slot = entries[i][0].parent
                if parent_slot != -1 and seq_to_idx[parent_slot] not in keep:
                    worst = max(keep - {seq_to_idx[parent_slot]},
                                key=lambda j: ranked.index(j))
                    keep.discard(worst)
                    keep.add(seq_to_idx[parent_slot])
                    changed = True
        entries = [entries[i] for i in sorted(keep, key=lambda i: entries[i][1])]
        by_slot = {s: n for n, s in entries}

        # Next frontier: surviving nodes of this round; compute their child
        # distributions lazily here (only survivors ever draft).
        frontier = []
        if depth < D:
            for node, slot in entries:
                if node.depth == depth:
                    if node.dist is None:
                        node.dist = draft.next_dist(node.feature, node.token)
                    frontier.append(slot)

    # Renumber slots into dense insertion-order indices.
    slot_to_idx = {slot: i for i, (_, slot) in enumerate(entries)}
    nodes = []
    for node, slot in entries:
        node.parent = -1 if node.parent == -1 else slot_to_idx[node.parent]
        nodes.append(node)
    if not nodes:
        raise RejectedInput("tree construction produced no nodes")
    return DraftTree(nodes=nodes, root_dist=root_dist, budget=budget,
                     branching=k_b, max_depth=D)


def enumerate_paths(tree: DraftTree) -> list[TokenPath]:
    """One root-to-leaf path per leaf, by descending confidence, ties
    broken lexicographically on token ids."""
    if not tree.nodes:
        raise RejectedInput("empty tree")
    has_child = [False] * len(tree.nodes)
    for node in tree.nodes:
        if node.parent != -1:
            has_child[node.parent] = True
    paths = []
    for i, node in enumerate(tree.nodes):
        if has_child[i]:
            continue
        toks, probs = [], []
        j = i
        while j != -1:
            toks.append(tree.nodes[j].token)
            probs.append(tree.nodes[j].prob)
            j = tree.nodes[j].parent
        paths.append(TokenPath(toks[::-1], probs[::-1]))
    paths.sort(key=lambda p: (-p.confidence, p.tokens))
    return paths


def linearize(tree: DraftTree, pending) -> LinearizedTree:
    """Flatten pending tokens (as a linear chain) followed by tree nodes."""
    pending = [int(t) for t in pending]
    n_pending = len(pending)
    tokens = list(pending)
    ancestors: list[frozenset] = [frozenset(range(i)) for i in range(n_pending)]
    pending_anc = frozenset(range(n_pending))
    for i, node in enumerate(tree.nodes):
        anc = set(pending_anc)
        j = node.parent
        while j != -1:
            anc.add(n_pending + j)
            j = tree.nodes[j].parent
        tokens.append(node.token)
        ancestors.append(frozenset(anc))
    return LinearizedTree(tokens=tokens, ancestors=ancestors,
                          pending_len=n_pending, tree=tree)


def serialize_tree(tree: DraftTree) -> str:
    """Line-oriented text form: one node per line, 'index parent token prob'."""
    lines = [f"{i} {n.parent} {n.token} {n.prob:.12g}" for i, n in enumerate(tree.nodes)]
    return "\n".join(lines) + "\n"

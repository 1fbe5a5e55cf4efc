"""
Reading a label matrix
======================

Build one small cloze instance by hand, turn it into the word+entity token
sequence, and print the relative-position label of every cell next to the
entity graph it came from.
"""

import numpy as np

from gesa.corpus import PLC, ClozeInstance, Mention, build_vocab
from gesa.graph import build_graph
from gesa.labels import build_label_matrix
from gesa.sequence import build_sequence

###############################################################################
# Two sentences, four mentions. "Labour" appears in both sentences, so its two
# entity tokens get a MATCH edge; mentions sharing a sentence get SENT_BASED.

inst = ClozeInstance(
    id="demo",
    question_tokens=["the", PLC, "opposed", "the", "VAT", "rise"],
    sentences=[["Labour", "won", "."], ["Ed", "Balls", "of", "Labour", "criticised", "VAT", "."]],
    mentions=[Mention("Labour", 0, 0, 1), Mention("Ed Balls", 1, 0, 2),
              Mention("Labour", 1, 3, 4), Mention("VAT", 1, 5, 6)],
    candidates=[0, 1, 2, 3],
    gold_answers=["Ed Balls"],
)
vocab = build_vocab([inst])
seq = build_sequence(inst, vocab, max_len=128, max_q_len=32)
graph = build_graph(seq.entity_tokens, inst.mentions)

for i, j, kind in graph.sorted_edges():
    print(f"entity {i} -- entity {j}: {kind.name}")

###############################################################################
# The entity block of the label matrix. Entity 0 is the missing entity that
# stands in for the placeholder; it reaches every mention through a PLC edge.

lm = build_label_matrix(seq, graph, k=2)
names = vocab.to_list()
rows = [names[t] for t in seq.word_ids] + [f"<e{e}>" for e in range(seq.n_entities)]
W = seq.n_words
print(f"\n{W} word tokens, {seq.n_entities} entity tokens, {len(lm.vocab)} labels")
for r in range(W, lm.P):
    cells = " ".join(f"{lm.vocab.name_of(lm.labels[r, c]):>11}" for c in range(W, lm.P))
    print(f"{rows[r]:>6} {cells}")

###############################################################################
# A row from the word block: the document word "criticised" sees the question
# through GLOB_Q and its neighbours through clipped window labels.

r = rows.index("criticised")
print()
print(" ".join(f"{rows[c]}:{lm.vocab.name_of(lm.labels[r, c])}" for c in range(W)))
print("distinct labels in the whole matrix:", len(np.unique(lm.labels)))

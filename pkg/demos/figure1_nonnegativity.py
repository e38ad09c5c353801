"""How often is a rectangular-kernel long-run variance estimate nonnegative?

With a rectangular kernel the weights matrix W is indefinite, so
n^-1 u'Wu can be negative. For i.i.d. errors and a polynomial design of
degree k - 1 we compute P(u'Wu >= 0) exactly by Imhof inversion, over the
bandwidth fraction b = M / n. Once b is large enough that every lag gets
weight one, W is the all-ones matrix and the probability is 1.
"""

from hardiag.diagnostics import figure1_table

n = 150
bs = [0.05, 0.1, 0.2, 0.3, 0.35, 0.5, 0.7, 0.9, 0.994]
rows = figure1_table(n=n, ks=(2, 4, 6, 10), bs=bs)

table: dict[float, dict[int, float]] = {}
for k, b, p in rows:
    table.setdefault(b, {})[k] = p

print("b       " + "".join(f"k={k:<7}" for k in (2, 4, 6, 10)))
for b in bs:
    print(f"{b:<8}" + "".join(f"{table[b][k]:<9.4f}" for k in (2, 4, 6, 10)))

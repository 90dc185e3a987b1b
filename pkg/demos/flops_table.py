"""Print per-tail costs for the DeiT-sized presets and compare with published numbers.

Two views are printed per tail: the encoder alone, and the encoder plus the
patch-embedding projection at two FLOPs per multiply-add.
"""

from mtvit import flops as F

PUBLISHED = {"deit-ti": (0.31, 0.61, 1.25), "deit-s": (1.14, 2.3, 4.6), "deit-b": (4.41, 8.9, 17.6)}

for key, ref in PUBLISHED.items():
    spec = F.PRESETS[key]
    enc = spec.encoder
    print(spec.name)
    print(f"  {'N':>4} {'encoder':>9} {'+embed':>9} {'published':>10}")
    for tail, total, want in zip(spec.tails, spec.per_tail_flops(), ref):
        n = tail.tokens + 1
        e = F.encoder_flops(enc.depth, n, enc.dim, enc.mlp_ratio) / 1e9
        print(f"  {n:>4} {e:9.3f} {total / 1e9:9.3f} {want:10.2f}")

"""Forward-pass cost versus sequence length: attention against the recurrent stack.

Attention builds an S x S score matrix per head, so its time grows roughly
quadratically; the xLSTM stack does constant work per position.  The slopes
are least-squares fits in log-log space.

Run:  python3 demos/05_scaling.py
"""
from xdistill.checks import scaling_benchmark

res = scaling_benchmark([128, 256, 512, 1024], repeats=3)
print("   S   attention ms   stack ms")
for r in res["rows"]:
    print(f"{r['seq_len']:>4} {r['attention_ms']:>14.2f} {r['stack_ms']:>10.2f}")
print(f"slopes: attention {res['attention_slope']:.2f}, stack {res['stack_slope']:.2f}")

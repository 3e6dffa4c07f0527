"""The soft-target weight and temperature schedule, without training anything.

Within an epoch each value decays as ``final + (anchor - final) / (1 + ln(k + 1))``;
between epochs the anchor itself drops by a fixed delta until it reaches the
final value.

Run:  python3 demos/03_annealing_schedule.py
"""
from xdistill.config import make_config
from xdistill.pipeline import schedule_rows

cfg = make_config(overrides=["epochs=10", "steps_per_epoch=6"])
rows = schedule_rows(cfg)

print(" epoch  step  alpha_k  temp_k")
for r in rows:
    if r["step"] in (0, 5):
        print(f"{r['epoch']:>6} {r['step']:>5}  {r['alpha_k']:.4f}  {r['temp_k']:.4f}")

# With the Frobenius term annealed as well, beta follows its own pair.
cfg = make_config(overrides=["epochs=3", "steps_per_epoch=3", "beta_mode=annealed"])
print("\nannealed beta:", [round(r["beta_k"], 4) for r in schedule_rows(cfg)])

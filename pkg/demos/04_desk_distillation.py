"""Teacher pretraining and student distillation end to end, at a reduced budget.

This mirrors ``xdistill pretrain-teacher`` followed by ``xdistill distill`` and
``xdistill eval``; artifacts land in ``demo_out/``.  The full desk-scale
settings live in ``configs/desk.json`` (about ten minutes on one core); here
the budget is cut so the script finishes in well under two minutes.

Run:  python3 demos/04_desk_distillation.py
"""
from pathlib import Path

from xdistill.config import load_config
from xdistill.pipeline import distill, epoch_trends, evaluate_checkpoints, pretrain_teacher
from xdistill.io import read_metrics

out = Path("demo_out")
cfg = load_config(Path(__file__).parents[1] / "configs" / "desk.json",
                  ["teacher_steps=200", "epochs=3", "steps_per_epoch=8"])

info = pretrain_teacher(cfg, out / "teacher")
print(f"teacher: {info['steps']} steps, held-out CE {info['held_out_ce']:.3f} (ln V = {info['ln_vocab']:.3f})")

before = evaluate_checkpoints(cfg, out / "initial", teacher_path=out / "teacher" / "teacher.ntck")
print(f"student before distillation: CE {before['student_ce']:.3f}, KL(T=1) {before['kl_t1']:.3f}")

res = distill(cfg, out / "student", teacher_path=out / "teacher" / "teacher.ntck")
print(f"distilled {res['steps']} optimizer steps; trainable fraction {res['trainable_fraction']:.3f}")

after = evaluate_checkpoints(cfg, out / "student", teacher_path=out / "teacher" / "teacher.ntck")
print(f"student after distillation:  CE {after['student_ce']:.3f}, KL(T=1) {after['kl_t1']:.3f}")

for e in epoch_trends(read_metrics(out / "student" / "metrics.jsonl")):
    print(f"epoch {e['epoch']}: loss {e['head']:.3f} -> {e['tail']:.3f}")

import json
import math

import numpy as np
import pytest

from xdistill import cli
from xdistill.autodiff import ops
from xdistill.autodiff import ops as ops_module
from xdistill.distill import trainer
from xdistill.distill.losses import combine_values
from xdistill.io import load_checkpoint, read_metrics

TINY = {
    "synthetic_chars": 6000,
    "context_size": 16,
    "d_model": 16,
    "teacher_layers": 2,
    "teacher_heads": 2,
    "teacher_steps": 15,
    "epochs": 2,
    "steps_per_epoch": 2,
    "batch_size": 4,
    "grad_accum": 2,
    "lr": 3e-3,
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


@pytest.fixture
def teacher_dir(tmp_path, tiny_config):
    out = tmp_path / "run"
    assert cli.main(["pretrain-teacher", "--config", tiny_config, "--out", str(out)]) == 0
    return out


def run(*args):
    return cli.main([str(a) for a in args])


def test_pretrain_writes_checkpoint_trace_and_echo(teacher_dir):
    names = {p.name for p in teacher_dir.iterdir()}
    assert {"teacher.ntck", "teacher.meta.json", "teacher_trace.jsonl", "config.json"} <= names
    trace = read_metrics(teacher_dir / "teacher_trace.jsonl")
    assert len(trace) == 15 and trace[0]["step"] == 0


def test_zero_epochs_saves_initial_weights(tmp_path, tiny_config):
    from xdistill.teacher import TeacherConfig, TeacherModel

    out = tmp_path / "z"
    assert run("pretrain-teacher", "--config", tiny_config, "--out", out, "--override", "epochs=0") == 0
    init = TeacherModel(TeacherConfig(vocab=60, d_model=16, n_layers=2, n_heads=2, max_seq=16), seed=0)
    saved = load_checkpoint(out / "teacher.ntck")
    for name, t in init.named_parameters():
        assert np.array_equal(saved[name], t.data)


def test_pretrain_is_byte_deterministic(tmp_path, tiny_config):
    for d in ("a", "b"):
        assert run("pretrain-teacher", "--config", tiny_config, "--out", tmp_path / d) == 0
    assert (tmp_path / "a/teacher.ntck").read_bytes() == (tmp_path / "b/teacher.ntck").read_bytes()


def test_missing_corpus_is_validation_error(tmp_path, tiny_config, capsys):
    code = run("pretrain-teacher", "--config", tiny_config, "--out", tmp_path / "x",
               "--override", "corpus_path=/no/such/file.txt")
    assert code == 1
    assert "corpus_path" in capsys.readouterr().err


def test_custom_corpus_file(tmp_path, tiny_config):
    corpus = tmp_path / "corpus.txt"
    corpus.write_text("the cat sat on the mat. " * 200)
    out = tmp_path / "c"
    assert run("pretrain-teacher", "--config", tiny_config, "--out", out, "--override", f"corpus_path={corpus}") == 0
    meta = json.loads((out / "teacher.meta.json").read_text())
    assert meta["model"]["vocab"] == len(set("the cat sat on the mat. ")) + 1


def test_distill_metrics_contract(teacher_dir):
    assert run("distill", "--out", teacher_dir, "--config", teacher_dir / "config.json") == 0
    rows = read_metrics(teacher_dir / "metrics.jsonl")
    assert len(rows) == 4
    assert list(rows[0]) == ["epoch", "step", "alpha_k", "temp_k", "beta_k", "loss_ce", "loss_kd", "loss_frob",
                             "loss_total", "grad_norm", "lr", "wall_ms"]
    assert (rows[0]["epoch"], rows[0]["step"], rows[0]["alpha_k"], rows[0]["temp_k"]) == (1, 0, 0.8, 2.0)
    numel = TINY["batch_size"] * TINY["context_size"] * TINY["d_model"]
    for r in rows:
        rebuilt = combine_values(r["loss_ce"], r["loss_kd"], r["loss_frob"], r["alpha_k"], r["temp_k"],
                                 r["beta_k"], numel)
        assert abs(rebuilt - r["loss_total"]) < 1e-9


def test_distill_keeps_reused_weights_bitwise(teacher_dir):
    assert run("distill", "--config", teacher_dir / "config.json", "--out", teacher_dir) == 0
    teacher = load_checkpoint(teacher_dir / "teacher.ntck")
    student = load_checkpoint(teacher_dir / "student.ntck")
    for name in ("embedding", "lnf_g", "lnf_b", "head"):
        assert student[name].tobytes() == teacher[name].tobytes()


def test_distill_frobenius_modes_log_beta(teacher_dir):
    for mode, first_beta in (("fixed", 0.1), ("annealed", 0.2)):
        out = teacher_dir / mode
        assert run("distill", "--config", teacher_dir / "config.json", "--out", out,
                   "--teacher", teacher_dir / "teacher.ntck", "--override", f"beta_mode={mode}") == 0
        rows = read_metrics(out / "metrics.jsonl")
        assert rows[0]["beta_k"] == first_beta
        assert rows[0]["alpha_k"] == 0.3


def test_distill_is_deterministic(teacher_dir):
    for d in ("d1", "d2"):
        assert run("distill", "--config", teacher_dir / "config.json", "--out", teacher_dir / d,
                   "--teacher", teacher_dir / "teacher.ntck") == 0
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_ms"} for r in rows]
    assert strip(read_metrics(teacher_dir / "d1/metrics.jsonl")) == strip(read_metrics(teacher_dir / "d2/metrics.jsonl"))
    assert (teacher_dir / "d1/student.ntck").read_bytes() == (teacher_dir / "d2/student.ntck").read_bytes()


def test_distill_dimension_mismatch(teacher_dir, capsys):
    code = run("distill", "--config", teacher_dir / "config.json", "--out", teacher_dir, "--override", "d_model=32")
    assert code == 1
    assert "d_model" in capsys.readouterr().err


def test_distill_without_teacher_is_validation_error(tmp_path, tiny_config):
    assert run("distill", "--config", tiny_config, "--out", tmp_path / "empty") == 1


def test_non_finite_loss_aborts_with_checkpoint(teacher_dir, monkeypatch):
    real = trainer.cross_entropy
    monkeypatch.setattr(trainer, "cross_entropy", lambda z, y: ops.scale(real(z, y), math.nan))
    out = teacher_dir / "abort"
    code = run("distill", "--config", teacher_dir / "config.json", "--out", out, "--teacher", teacher_dir / "teacher.ntck")
    assert code == 2
    assert (out / "student.abort.ntck").is_file()
    assert not (out / "student.ntck").exists()


def test_eval_report(teacher_dir, capsys):
    assert run("eval", "--config", teacher_dir / "config.json", "--out", teacher_dir) == 0
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert report["student"] == "initial"
    assert set(report) >= {"student_ce", "teacher_ce", "kl_t1", "frobenius", "student_ppl", "teacher_ppl"}
    assert read_metrics(teacher_dir / "eval.jsonl") == [report]
    assert report["teacher_ppl"] == pytest.approx(math.exp(report["teacher_ce"]))


def test_eval_after_distill_uses_student_checkpoint(teacher_dir, capsys):
    run("distill", "--config", teacher_dir / "config.json", "--out", teacher_dir)
    capsys.readouterr()
    assert run("eval", "--config", teacher_dir / "config.json", "--out", teacher_dir) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["student"].endswith("student.ntck")


def test_schedule_command(tmp_path, capsys):
    assert run("schedule", "--out", tmp_path, "--override", "steps_per_epoch=3", "--override", "epochs=8") == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert len(rows) == 24
    assert (rows[0]["alpha_k"], rows[0]["temp_k"]) == (0.8, 2.0)
    for e in range(1, 9):
        a = [r["alpha_k"] for r in rows if r["epoch"] == e]
        assert a == sorted(a, reverse=True)
    assert rows[-3]["alpha_k"] == 0.5
    assert read_metrics(tmp_path / "schedule.jsonl") == rows


def test_schedule_counts_steps_from_corpus(tmp_path, tiny_config, capsys):
    assert run("schedule", "--config", tiny_config, "--out", tmp_path, "--override", "steps_per_epoch=null") == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    # 5400 training tokens -> 337 windows of 16 -> 84 batches of 4 -> 42 steps of 2 micro-batches
    assert len(rows) == 2 * 42


def test_gradcheck_command_reports_all_components(tmp_path, capsys):
    assert run("gradcheck", "--out", tmp_path) == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [r["component"] for r in rows] == ["vanilla_lstm", "slstm", "mlstm", "attention", "combined_loss"]
    assert all(r["max_rel_err"] < 1e-4 for r in rows)


def test_gradcheck_fails_on_corrupted_rule(tmp_path, monkeypatch, capsys):
    fwd, _ = ops_module.UNARY_RULES["sigmoid"]
    monkeypatch.setitem(ops_module.UNARY_RULES, "sigmoid", (fwd, lambda x, y: y))
    assert run("gradcheck", "--out", tmp_path) == 2
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert not all(r["passed"] for r in rows)


def test_benchmark_schema_is_stable(tmp_path, capsys):
    args = ["benchmark", "--out", tmp_path, "--override", "benchmark_lengths=[8,16]", "--override",
            "benchmark_repeats=1", "--override", "d_model=16", "--override", "teacher_heads=2"]
    tables = []
    for _ in range(2):
        assert run(*args) == 0
        tables.append([sorted(json.loads(line)) for line in capsys.readouterr().out.splitlines()])
    assert tables[0] == tables[1]
    assert tables[0][-1] == ["attention_slope", "stack_slope"]


def test_seed_flag_overrides_config(tmp_path):
    assert run("schedule", "--out", tmp_path, "--seed", "17", "--override", "steps_per_epoch=1",
               "--override", "epochs=1") == 0
    assert json.loads((tmp_path / "config.json").read_text())["seed"] == 17


def test_bad_override_is_validation_error(tmp_path):
    assert run("schedule", "--out", tmp_path, "--override", "nonsense") == 1
    assert run("schedule", "--out", tmp_path, "--override", "no_such_field=1") == 1

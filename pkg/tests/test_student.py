import numpy as np
import pytest

from xdistill.autodiff import Tensor, backward, no_grad
from xdistill.distill.losses import cross_entropy
from xdistill.distill.student import (
    StudentConfig,
    StudentModel,
    derive_student_config,
    frozen_names,
    init_student_from_teacher,
    parameter_count,
    roundup,
)
from xdistill.teacher import TeacherConfig, TeacherModel


def test_roundup():
    assert [roundup(x, 4) for x in (1, 4, 5, 6, 8)] == [4, 4, 8, 8, 8]


def test_heuristic_for_desk_teacher():
    cfg = derive_student_config(4, 6, 64, 60)
    assert (cfg.n_blocks, cfg.n_heads) == (2, 8)


@pytest.mark.parametrize("lt,ht,expect", [(28, 12, (14, 12)), (5, 3, (2, 4)), (2, 1, (1, 4))])
def test_heuristic_floors_depth_and_rounds_heads(lt, ht, expect):
    cfg = derive_student_config(lt, ht, 96, 10)
    assert (cfg.n_blocks, cfg.n_heads) == expect


def test_heuristic_rejects_indivisible_width():
    with pytest.raises(ValueError, match="divide"):
        derive_student_config(4, 6, 60, 10)


def test_heuristic_rejects_shallow_teacher():
    with pytest.raises(ValueError):
        derive_student_config(1, 4, 64, 10)


def test_reused_weights_are_frozen_copies():
    teacher = TeacherModel(TeacherConfig(vocab=9, d_model=16, n_layers=2, n_heads=2, max_seq=8), seed=0)
    student, frac = init_student_from_teacher(teacher, StudentConfig(1, 4, 16, 9), seed=0)
    assert set(frozen_names(student)) == {"embedding", "lnf_g", "lnf_b", "head"}
    assert np.array_equal(student.embedding.data, teacher.embedding.data)
    assert student.embedding.data is not teacher.embedding.data
    trainable = sum(t.size for t in student.trainable_parameters())
    assert frac == pytest.approx(trainable / parameter_count(student))


def test_frozen_weights_receive_no_gradient():
    teacher = TeacherModel(TeacherConfig(vocab=9, d_model=16, n_layers=2, n_heads=2, max_seq=8), seed=0)
    student, _ = init_student_from_teacher(teacher, StudentConfig(2, 4, 16, 9), seed=0)
    tokens = np.array([[1, 2, 3, 4]])
    logits, _ = student.forward(tokens)
    backward(cross_entropy(logits, np.array([[2, 3, 4, 5]])))
    assert student.embedding.grad is None and student.head.grad is None
    assert all(p.grad is not None for p in student.trainable_parameters())


def test_mismatched_dims_raise():
    teacher = TeacherModel(TeacherConfig(vocab=9, d_model=16, n_layers=2, n_heads=2, max_seq=8), seed=0)
    with pytest.raises(ValueError):
        init_student_from_teacher(teacher, StudentConfig(1, 4, 32, 9))


def test_fresh_student_predicts_near_uniform():
    v = 40
    student = StudentModel.fresh(StudentConfig(2, 4, 16, v), seed=0)
    tokens = np.random.default_rng(0).integers(0, v, size=(4, 10))
    with no_grad():
        logits, h = student.forward(tokens)
    ce = float(cross_entropy(logits, tokens).data)
    assert abs(ce - np.log(v)) < 0.05 * np.log(v)
    assert h.shape == (4, 10, 16)


def test_config_validation():
    with pytest.raises(ValueError):
        StudentConfig(0, 4, 16, 9)
    with pytest.raises(ValueError):
        StudentConfig(1, 3, 16, 9)
    with pytest.raises(ValueError):
        StudentConfig(1, 4, 16, 9, forget_gate_kind="relu")

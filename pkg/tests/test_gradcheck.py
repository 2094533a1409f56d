from aibe import gradcheck
from aibe.cli import main


def test_every_objective_passes():
    result = gradcheck.run_suite(seed=3, n_instances=20)
    assert set(result.errors) == set(gradcheck.OBJECTIVES)
    assert all(len(v) == 20 for v in result.errors.values())
    assert result.failing() == []


def test_verdict_stable_across_seeds():
    for seed in range(20):
        assert gradcheck.run_suite(seed=seed, n_instances=2).failing() == []


def test_corrupted_gradient_is_caught():
    result = gradcheck.run_suite(seed=0, n_instances=2, corrupt="ssa")
    assert result.failing() == ["ssa"]


def test_cli_exit_codes(capsys):
    assert main(["gradcheck", "--instances", "2"]) == 0
    assert "semantic_total" in capsys.readouterr().out
    assert main(["gradcheck", "--instances", "2", "--corrupt", "usa"]) == 3
    assert "usa" in capsys.readouterr().err

from pathlib import Path

import numpy as np
import pytest

from config.run_config import load_run_config, parse_run_config
from config.settings import get_tolerances, set_tolerances
from core.errors import ConfigError
from core.model.io import spec_from_block
from core.model.spec import lambda_of

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"

EXPERIMENT = """\
task: experiment:clt_check
seed: 42
model:
  builder: two_allelic
  params: {a: 1.0, b: 2.0, p: 0.5, q: 1.5}
experiment:
  n_grid: [10, 20]
  replicates: 50
  horizon: 1.0
"""


@pytest.fixture(autouse=True)
def default_tolerances():
    yield
    set_tolerances("default")


def test_parse_validate_task():
    """测试最简单的 validate 文档"""
    config = parse_run_config("task: validate\nmodel:\n  builder: two_allelic\n  params: {a: 1, b: 2, p: 0.5, q: 1.5}\n")
    assert config.task_kind == "validate"
    assert config.task_name == "validate"
    assert spec_from_block(config.model).size == 2


def test_missing_task_reports_location():
    """测试缺少 task 时报出键名与行号"""
    with pytest.raises(ConfigError) as info:
        parse_run_config("model:\n  builder: two_allelic\n")
    assert "missing key 'task'" in str(info.value)
    assert info.value.line == 1
    assert info.value.exit_code == 1


def test_unknown_key_reports_line():
    """测试未知键指向它所在的行"""
    text = "task: validate\nmodel:\n  builder: two_allelic\nextra: 1\n"
    with pytest.raises(ConfigError) as info:
        parse_run_config(text)
    assert "unknown key 'extra'" in str(info.value)
    assert info.value.line == 4


def test_yaml_syntax_error_has_position():
    """测试 YAML 语法错误带行列号"""
    with pytest.raises(ConfigError) as info:
        parse_run_config("task: validate\nmodel: [unclosed\n")
    assert "YAML syntax error" in str(info.value)
    assert info.value.line is not None
    assert info.value.column is not None


def test_unknown_task_and_missing_blocks():
    """测试任务名与任务块的一致性检查"""
    model = "model:\n  builder: two_allelic\n"
    with pytest.raises(ConfigError, match="unknown task"):
        parse_run_config("task: run-everything\n" + model)
    with pytest.raises(ConfigError, match="needs a 'simulate' block"):
        parse_run_config("task: simulate\n" + model)
    with pytest.raises(ConfigError, match="needs an 'experiment' block"):
        parse_run_config("task: experiment:poc_rate\n" + model)
    with pytest.raises(ConfigError, match="contradicts"):
        parse_run_config(EXPERIMENT.replace("  n_grid", "  check: poc_rate\n  n_grid"))


def test_model_block_needs_exactly_one_source():
    """测试 builder 与内联 mutation 二选一"""
    with pytest.raises(ConfigError, match="exactly one"):
        parse_run_config("task: validate\nmodel:\n  size: 2\n")
    with pytest.raises(ConfigError, match="square"):
        parse_run_config("task: validate\nmodel:\n  mutation: [[0, 1], [1, 0, 2]]\n")


def test_experiment_block_inherits_check_and_seed():
    """测试实验块从任务与顶层继承 check 和 seed"""
    config = parse_run_config(EXPERIMENT)
    plan = config.experiment_plan()
    assert plan.check == "clt_check"
    assert plan.seed == 42
    assert plan.model == "two_allelic"
    assert plan.n_grid == [10, 20]


def test_config_hash_is_canonical():
    """测试配置哈希与输出目录无关、随种子变化"""
    base = parse_run_config(EXPERIMENT)
    moved = parse_run_config(EXPERIMENT + "output_dir: elsewhere\n")
    reseeded = parse_run_config(EXPERIMENT.replace("seed: 42", "seed: 43"))
    assert base.config_hash() == moved.config_hash()
    assert base.config_hash() != reseeded.config_hash()
    assert len(base.config_hash()) == 64


def test_inline_model_with_expressions():
    """测试内联模型：零对角补齐与表达式核"""
    text = """\
task: validate
model:
  name: inline-3
  mutation: [[0, 1, 0], [1, 0, 1], [0, 1, 0]]
  selection:
    death: "c * x"
    birth: 0.5
    params: {c: 0.2}
"""
    spec = spec_from_block(parse_run_config(text).model)
    assert spec.name == "inline-3"
    assert np.allclose(spec.mutation.row_sums(), 0.0)
    assert spec.mutation.entries[1, 1] == pytest.approx(-2.0)
    assert np.allclose(lambda_of(spec).values, 0.5 - 0.2 * np.arange(1, 4))


def test_inline_model_bad_expression():
    """测试表达式错误报配置错误"""
    text = "task: validate\nmodel:\n  mutation: [[0, 1], [1, 0]]\n  selection:\n    death: \"import os\"\n"
    with pytest.raises(ConfigError):
        spec_from_block(parse_run_config(text).model)


def test_tolerance_overrides():
    """测试容差配置与逐项覆盖"""
    with pytest.raises(ConfigError, match="unknown tolerances"):
        parse_run_config("task: validate\nmodel:\n  builder: two_allelic\ntolerances: {bogus: 1.0}\n")
    active = set_tolerances("strict", {"flow": 1e-9})
    assert active.flow == 1e-9
    assert get_tolerances().eigen == 1e-12
    with pytest.raises(ValueError):
        set_tolerances("loose")


def test_missing_file():
    """测试配置文件不存在"""
    with pytest.raises(ConfigError, match="cannot read"):
        load_run_config("/nonexistent/run.yaml")


@pytest.mark.parametrize("name", ["two_allelic.yaml", "birth_death.yaml", "counterexample.yaml"])
def test_shipped_configs_parse(name):
    """测试随附的配置文件都能解析并构造模型"""
    config = load_run_config(CONFIG_DIR / name)
    assert spec_from_block(config.model).size >= 2

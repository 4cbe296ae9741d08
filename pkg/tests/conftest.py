import json

import pytest

from toolpath.domain import DATA_DIR, load_knowledge_dir
from toolpath.executor import Runtime
from toolpath.learning import (
    ContrastMiner,
    LearningConfig,
    build_datasets,
    learn,
    sample_stream,
)
from toolpath.rules import RuleTable
from toolpath.sim import build_reference_battery, load_sim


@pytest.fixture(scope="session")
def knowledge():
    return load_knowledge_dir()


@pytest.fixture(scope="session")
def env():
    return load_sim()


@pytest.fixture(scope="session")
def learning_env():
    return load_sim(DATA_DIR / "sim_learning.json")


@pytest.fixture(scope="session")
def table():
    return RuleTable.from_doc(json.loads((DATA_DIR / "rules.json").read_text()))


@pytest.fixture(scope="session")
def runtime(knowledge, env):
    return Runtime(knowledge, env, seed=42)


@pytest.fixture(scope="session")
def battery(knowledge, env):
    return build_reference_battery(42, env, knowledge, n=120)


@pytest.fixture(scope="session")
def learning_run(knowledge, learning_env):
    """The default 200-task learning run from an empty table."""
    cfg = LearningConfig()
    rt = Runtime(knowledge, learning_env, seed=cfg.seed)
    stream = sample_stream(learning_env, knowledge, cfg.stream_size, cfg.seed)
    held_out = sample_stream(learning_env, knowledge, cfg.eval_size, cfg.seed, prefix="eval")
    datasets = build_datasets(learning_env, knowledge, cfg)
    miner = ContrastMiner(knowledge.features, knowledge.tdg)
    return learn(stream, RuleTable(), rt, miner, datasets, held_out, cfg)

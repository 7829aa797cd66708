import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from corpora import (  # noqa: E402
    is_linked_record,
    planted_config,
    planted_fixture,
    planted_rl_config,
)
from qvadgen.trainer import Trainer  # noqa: E402


@pytest.fixture(scope="session")
def planted_run(tmp_path_factory):
    """Train the planted-association pipeline once; several tests inspect it.

    Returns a dict with the corpus, graph, per-epoch stage-2 selections, and
    the final stage-3 parameters.
    """
    records, vocab, graph, planted_id = planted_fixture()
    linked = [r for r in records if is_linked_record(r)]
    workdir = tmp_path_factory.mktemp("planted")
    cfg1 = planted_config()
    cfg2 = planted_rl_config()
    r1 = Trainer(records, vocab, graph, cfg1, workdir).stage1()
    rl_trainer = Trainer(linked, vocab, graph, cfg2, workdir, collect_traces=True)
    r2 = rl_trainer.stage2(r1.checkpoint)
    r3 = Trainer(records, vocab, graph, cfg2, workdir).stage3(r2.checkpoint)
    return {
        "records": records,
        "linked_records": linked,
        "vocab": vocab,
        "graph": graph,
        "planted_id": planted_id,
        "cfg1": cfg1,
        "cfg2": cfg2,
        "stage1": r1,
        "stage2": r2,
        "stage3": r3,
        "workdir": workdir,
    }

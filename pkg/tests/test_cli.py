import json

import pytest

from kbenrich.cli import main
from kbenrich.config import ConfigError, load_config
from kbenrich.kb import Fact, save_kb, synthetic_kb
from kbenrich.sources import Claim, save_claims


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("ws")
    save_kb(synthetic_kb(n_classes=2, entities_per_class=22, properties_per_class=12, seed=1),
            d / "kb.tsv")
    (d / "cfg.ini").write_text(
        "[paths]\nkb = kb.tsv\ngraph = graph.json\ncheckpoint = gnn.json\nworld = world\n"
        "output = out\n[pipeline]\nseed = 3\n[similarity]\nk = 4\n[gnn]\nd1 = 8\nd2 = 8\n"
        "epochs = 5\n[eval]\nn_train = 12\nn_val = 3\nn_test = 5\nselect_every = 0\n")
    return d


def run(ws, *argv):
    return main(["--config", str(ws / "cfg.ini"), *argv])


class TestConfig:
    def test_defaults(self):
        cfg = load_config(None)
        assert cfg.m == 10 and cfg.truth.beta == (5.0, 5.0) and cfg.gnn.init_std == 0.1

    def test_master_seed(self, workspace):
        cfg = load_config(workspace / "cfg.ini")
        assert cfg.gnn.seed == 3 and cfg.protocol.seed == 3 and cfg.gnn.k == 4
        assert cfg.paths["kb"] == workspace / "kb.tsv"

    @pytest.mark.parametrize("text", ["[gnn]\nd1 = zero\n", "[gnn]\nbogus = 1\n", "[nope]\n",
                                      "[truth]\nepsilon = 2\n", "[eval]\nseed = 1\n",
                                      "[similarity]\nalpha1 = 0.9\n", "[gnn]\nd1 = 0\n"])
    def test_rejects(self, tmp_path, text):
        p = tmp_path / "c.ini"
        p.write_text(text)
        with pytest.raises(ConfigError):
            load_config(p)


class TestCommands:
    def test_pipeline(self, workspace, capsys):
        assert run(workspace, "kb", "stats") == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["entities"] == 44
        assert run(workspace, "sim", "topk", "--entity", "c0_e000", "--k", "3") == 0
        assert len(capsys.readouterr().out.splitlines()) == 3
        assert run(workspace, "graph", "build", "--symmetrize-ee") == 0
        assert run(workspace, "gnn", "train") == 0
        assert run(workspace, "gnn", "rank", "--entity", "c0_e001", "--m", "4") == 0
        capsys.readouterr()
        assert run(workspace, "gnn", "train", "--per-role-attention",
                   "--out", str(workspace / "pr.json")) == 0
        assert run(workspace, "world", "generate") == 0
        assert run(workspace, "verify") == 0
        header = (workspace / "out" / "facts.tsv").read_text().splitlines()[0]
        assert header == "entity\tproperty\tvalue\tkind\tz\tlabel"
        assert (workspace / "out" / "sources.tsv").exists()
        assert run(workspace, "enrich", "--entity", "c0_e000", "--write-back") == 0
        assert (workspace / "out" / "enrichment.json").exists()

    def test_eval_run_deterministic(self, workspace):
        a, b = workspace / "a" / "report.json", workspace / "b" / "report.json"
        assert run(workspace, "eval", "run", "--out", str(a)) == 0
        assert run(workspace, "eval", "run", "--out", str(b), "--no-figures") == 0
        assert a.read_bytes() == b.read_bytes()
        assert list((workspace / "a").glob("*.png"))

    def test_enrich_without_claims(self, workspace, tmp_path):
        save_claims([Claim(Fact("nobody", "p", "v"), "s", 1.0)], tmp_path / "c.jsonl")
        assert run(workspace, "graph", "build") == 0
        assert run(workspace, "gnn", "train") == 0
        assert run(workspace, "enrich", "--entity", "c0_e000", "--claims",
                   str(tmp_path / "c.jsonl"), "--out", str(tmp_path / "o")) == 0
        doc = json.loads((tmp_path / "o" / "enrichment.json").read_text())
        assert doc["facts"] == []

    def test_exit_codes(self, workspace, tmp_path, capsys):
        assert main(["--config", str(tmp_path / "missing.ini"), "kb", "stats"]) == 1
        assert main(["kb", "stats"]) == 1  # no kb configured
        bad = tmp_path / "bad.tsv"
        bad.write_text("a\tb\n")
        assert main(["kb", "stats", "--kb", str(bad)]) == 2
        assert run(workspace, "sim", "topk", "--entity", "ghost") == 2
        assert run(workspace, "verify", "--claims", str(bad)) == 2

    def test_non_convergence_exit(self, workspace, tmp_path):
        (tmp_path / "c.ini").write_text(f"[paths]\nworld = {workspace / 'world'}\n"
                                        f"output = {tmp_path / 'o'}\n[truth]\nmax_iter = 1\n"
                                        "tol = 1e-12\n")
        assert main(["--config", str(tmp_path / "c.ini"), "verify"]) == 3

    def test_config_example_parses(self, tmp_path, capsys):
        assert main(["config", "example"]) == 0
        p = tmp_path / "e.ini"
        p.write_text(capsys.readouterr().out)
        assert load_config(p).m == 10

import json

import pytest

from wadcmsn.cli import main
from wadcmsn.data import load_features
from wadcmsn.semantics import SemanticTable, Taxonomy, TextEmbeddingTable
from wadcmsn.trainer import checkpoint_load, init_bundle, TrainConfig
from wadcmsn.model import Architecture

SMALL = ["--n-classes", "6", "--n-seen", "4", "--n-sketch", "6", "--n-image", "6",
         "--feature-dim", "20", "--text-dim", "8"]


def run_ok(*argv):
    assert main([str(a) for a in argv]) == 0


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    fx, sem, run = root / "fx", root / "sem", root / "run"
    run_ok("gen-synth", "--out", fx, "--seed", 1, "--text-sources", 2, *SMALL)
    run_ok("embed", "--features", fx / "features.csv", "--taxonomy", fx / "taxonomy.json",
           "--text", fx / "embeddings.txt", "--code-dim", 4, "--steps", 200, "--out", sem)
    run_ok("train", "--features", fx / "features.csv", "--semantic", sem / "semantic.json",
           "--max-iter", 30, "--batch-size", 8, "--lr", 1e-3, "--out", run)
    return root


def test_gen_synth_files_load(pipeline):
    fx = pipeline / "fx"
    assert {"features.csv", "taxonomy.json", "embeddings.txt"} <= set(snapshot(fx))
    records = load_features(fx / "features.csv")
    assert len(records) == 6 * 12 and records[0].feature.size == 20
    Taxonomy.load(fx / "taxonomy.json")
    assert TextEmbeddingTable.load(fx / "embeddings.txt").dim == 8


def test_default_gen_synth_writes_three_files(tmp_path):
    run_ok("gen-synth", "--out", tmp_path, *SMALL)
    assert sorted(snapshot(tmp_path)) == ["embeddings.txt", "features.csv", "taxonomy.json"]


def test_gen_synth_deterministic(tmp_path):
    run_ok("gen-synth", "--out", tmp_path / "a", "--seed", 4, *SMALL)
    run_ok("gen-synth", "--out", tmp_path / "b", "--seed", 4, *SMALL)
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")


def test_embed_measures_differ_and_rerun_identical(pipeline, tmp_path):
    fx = pipeline / "fx"
    common = ["--features", fx / "features.csv", "--taxonomy", fx / "taxonomy.json",
              "--text", fx / "embeddings.txt", "--code-dim", 4, "--steps", 100]
    run_ok("embed", *common, "--measure", "path", "--out", tmp_path / "p")
    run_ok("embed", *common, "--measure", "jc", "--out", tmp_path / "j")
    run_ok("embed", *common, "--measure", "jc", "--out", tmp_path / "j2")
    p, j = (tmp_path / d / "semantic.json" for d in ("p", "j"))
    assert p.read_bytes() != j.read_bytes()
    assert j.read_bytes() == (tmp_path / "j2" / "semantic.json").read_bytes()
    table = SemanticTable.load(j)
    assert table.provenance["measure"] == "jc" and table.code_dim == 4


def test_embed_grid_emits_four_files(pipeline, tmp_path):
    fx = pipeline / "fx"
    run_ok("embed", "--features", fx / "features.csv", "--taxonomy", fx / "taxonomy.json",
           "--text", fx / "embeddings.txt", "--text", fx / "embeddings_2.txt", "--grid",
           "--code-dim", 4, "--steps", 50, "--out", tmp_path)
    assert len(list(tmp_path.glob("semantic_*.json"))) == 4


def test_embed_reports_uncovered_classes(pipeline, tmp_path, capsys):
    fx = pipeline / "fx"
    lines = (fx / "embeddings.txt").read_text().splitlines()
    (tmp_path / "partial.txt").write_text("\n".join(l for l in lines
                                                    if not l.startswith("class_03")) + "\n")
    code = main(["embed", "--features", str(fx / "features.csv"), "--taxonomy",
                 str(fx / "taxonomy.json"), "--text", str(tmp_path / "partial.txt"),
                 "--out", str(tmp_path)])
    assert code == 3 and "class_03" in capsys.readouterr().err


def test_zero_iterations_checkpoint_is_initialisation(pipeline, tmp_path):
    fx, sem = pipeline / "fx", pipeline / "sem"
    run_ok("train", "--features", fx / "features.csv", "--semantic", sem / "semantic.json",
           "--max-iter", 0, "--seed", 3, "--out", tmp_path)
    loaded = checkpoint_load(tmp_path / "checkpoint.ckpt")
    from wadcmsn.cli import _split_from_file
    split = _split_from_file(fx / "features.csv")
    init = init_bundle(split, TrainConfig(seed=3, architecture=Architecture(
        feature_dim=20, code_dim=4)))
    for name, net in init.nets.items():
        for a, b in zip(net.params(), loaded.nets[name].params()):
            assert (a == b).all()


def test_training_lowers_ps_total(pipeline):
    log = json.loads((pipeline / "run" / "train_log.json").read_text())
    assert log["iterations"][-1]["ps_total"] < log["iterations"][0]["ps_total"]


def test_ablation_flags_select_adversarial_only(pipeline, tmp_path):
    fx, sem = pipeline / "fx", pipeline / "sem"
    run_ok("train", "--features", fx / "features.csv", "--semantic", sem / "semantic.json",
           "--max-iter", 3, "--no-wd", "--no-cyc", "--no-cls", "--no-iml", "--out", tmp_path)
    from wadcmsn.trainer import checkpoint_manifest
    cfg = checkpoint_manifest(tmp_path / "checkpoint.ckpt")["extra"]["train_config"]
    assert cfg["adversarial"] == "standard"
    assert cfg["weights"] == {"adv": 1.0, "cyc": 0.0, "cls": 0.0, "iml": 0.0}
    log = json.loads((tmp_path / "train_log.json").read_text())
    assert all(e["ps_total"] == pytest.approx(e["gen"]) for e in log["iterations"])


def test_eval_report_and_determinism(pipeline, tmp_path):
    run = pipeline / "run"
    args = ["eval", "--checkpoint", run / "checkpoint.ckpt", "--features",
            pipeline / "fx" / "features.csv", "--rankings", "--codes"]
    run_ok(*args, "--out", tmp_path / "a")
    run_ok(*args, "--out", tmp_path / "b")
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert {"mAP", "prec@100", "per_class_ap", "n_queries", "config"} <= set(report)
    assert report["config"]["eval"]["metric"] == "euclidean"
    assert report["config"]["train"]["max_iterations"] == 30
    assert report["n_queries"] == 2 * 6


def test_retrieve_matches_eval_ranking(pipeline, tmp_path):
    run, fx = pipeline / "run", pipeline / "fx"
    run_ok("eval", "--checkpoint", run / "checkpoint.ckpt", "--features",
           fx / "features.csv", "--rankings", "--out", tmp_path / "e")
    query = next(r.id for r in load_features(fx / "features.csv")
                 if r.split == "test" and r.modality == "sketch")
    run_ok("retrieve", "--checkpoint", run / "checkpoint.ckpt", "--features",
           fx / "features.csv", "--query", query, "-k", 10, "--out", tmp_path / "r")
    rows = (tmp_path / "r" / "retrieval.csv").read_text().splitlines()[1:]
    assert len(rows) == 10
    full = [l for l in (tmp_path / "e" / "rankings.csv").read_text().splitlines()[1:]
            if l.startswith(query + ",")][:10]
    assert rows == full
    classes = {r.id: r.cls for r in load_features(fx / "features.csv")}
    for row in rows:
        q, _, gid, _, rel = row.split(",")
        assert int(rel) == (classes[gid] == classes[q])


def test_unknown_query_lists_valid_ids(pipeline, capsys):
    code = main(["retrieve", "--checkpoint", str(pipeline / "run" / "checkpoint.ckpt"),
                 "--features", str(pipeline / "fx" / "features.csv"), "--query", "nope"])
    err = capsys.readouterr().err
    assert code == 2 and "nope" in err and "sk_class_00_0000" in err


def test_config_file_and_flag_precedence(pipeline, tmp_path):
    fx, sem = pipeline / "fx", pipeline / "sem"
    cfg = {"features": str(fx / "features.csv"), "semantic": str(sem / "semantic.json"),
           "max_iterations": 4, "batch_size": 8, "out": str(tmp_path / "fromfile")}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    run_ok("train", "--config", tmp_path / "c.json", "--max-iter", 2)
    log = json.loads((tmp_path / "fromfile" / "train_log.json").read_text())
    assert log["iterations"][-1]["iteration"] == 2


@pytest.mark.parametrize("payload, code", [
    ({"bogus": 1}, 2),
    ({"features": "/no/such/file.csv", "semantic": "/no/such.json"}, 2),
    ({"weights": {"adv": 1, "typo": 2}}, 2),
])
def test_config_errors(pipeline, tmp_path, payload, code):
    base = {"features": str(pipeline / "fx" / "features.csv"),
            "semantic": str(pipeline / "sem" / "semantic.json"), "out": str(tmp_path)}
    (tmp_path / "c.json").write_text(json.dumps({**base, **payload}))
    assert main(["train", "--config", str(tmp_path / "c.json")]) == code


def test_data_errors(pipeline, tmp_path):
    (tmp_path / "bad.csv").write_text("dim=3\na,c,sketch,train,1,x,3\n")
    assert main(["train", "--features", str(tmp_path / "bad.csv"), "--semantic",
                 str(pipeline / "sem" / "semantic.json"), "--out", str(tmp_path)]) == 3
    # checkpoint trained on 20-D features cannot score 8-D data
    (tmp_path / "small.csv").write_text("dim=2\na,c,sketch,test,1,2\nb,c,image,test,1,2\n")
    assert main(["eval", "--checkpoint", str(pipeline / "run" / "checkpoint.ckpt"),
                 "--features", str(tmp_path / "small.csv"), "--out", str(tmp_path)]) == 3


def test_numeric_failure_exit_code(pipeline, tmp_path):
    table = SemanticTable.load(pipeline / "sem" / "semantic.json")
    huge = SemanticTable({c: v * 0 + 1e200 for c, v in table.codes.items()})
    huge.save(tmp_path / "huge.json")
    assert main(["train", "--features", str(pipeline / "fx" / "features.csv"), "--semantic",
                 str(tmp_path / "huge.json"), "--max-iter", "2", "--out", str(tmp_path)]) == 4


def test_commands_do_not_touch_inputs(pipeline, tmp_path):
    before = {d: snapshot(pipeline / d) for d in ("fx", "sem", "run")}
    run_ok("eval", "--checkpoint", pipeline / "run" / "checkpoint.ckpt", "--features",
           pipeline / "fx" / "features.csv", "--out", tmp_path)
    assert {d: snapshot(pipeline / d) for d in before} == before


def test_output_may_not_overwrite_input(pipeline, tmp_path):
    # features stored under the name train writes its log to
    trap = tmp_path / "train_log.json"
    trap.write_bytes((pipeline / "fx" / "features.csv").read_bytes())
    assert main(["train", "--features", str(trap), "--semantic",
                 str(pipeline / "sem" / "semantic.json"), "--max-iter", "1",
                 "--out", str(tmp_path)]) == 2
    assert trap.read_bytes() == (pipeline / "fx" / "features.csv").read_bytes()


@pytest.mark.slow
def test_untrained_model_near_class_prior(tmp_path):
    run_ok("gen-synth", "--out", tmp_path / "fx", "--seed", 0)
    fx = tmp_path / "fx"
    run_ok("embed", "--features", fx / "features.csv", "--taxonomy", fx / "taxonomy.json",
           "--text", fx / "embeddings.txt", "--out", tmp_path / "sem")
    run_ok("train", "--features", fx / "features.csv", "--semantic",
           tmp_path / "sem" / "semantic.json", "--max-iter", 0, "--out", tmp_path / "run")
    run_ok("eval", "--checkpoint", tmp_path / "run" / "checkpoint.ckpt", "--features",
           fx / "features.csv", "--out", tmp_path / "ev")
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    prior = 1 / report["n_classes"]
    assert report["mAP"] < 2 * prior

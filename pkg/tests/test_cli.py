import json
import threading
import urllib.request

import numpy as np
import pytest
from click.testing import CliRunner

from vaseq import records
from vaseq.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    result = runner.invoke(main, [str(a) for a in args], catch_exceptions=False)
    return result


def test_match_reproduces_worked_example(runner, tmp_path):
    ann = tmp_path / "ann"
    ann.mkdir()
    table = "0.010 121\n0.030 122\n0.041 123\n0.057 124\n0.089 125\n0.102 126\n0.119 127\n"
    (ann / "valence.txt").write_text(table)
    (ann / "arousal.txt").write_text(table)
    out = tmp_path / "merged.txt"
    result = invoke(runner, "match", "--annotations", ann,
                    "--frames-count", 2, "--out", out)
    assert result.exit_code == 0
    rows = out.read_text().strip().splitlines()
    assert rows[1] == "2\t124\t124"


def test_match_missing_file_fails_cleanly(runner, tmp_path):
    ann = tmp_path / "ann"
    ann.mkdir()
    (ann / "valence.txt").write_text("0.1 5\n")
    result = runner.invoke(main, ["match", "--annotations", str(ann),
                                  "--frames-count", "2",
                                  "--out", str(tmp_path / "x.txt")])
    assert result.exit_code == 1
    assert "error:" in result.output


def test_synth_then_stats_and_pack_round_trip(runner, tmp_path):
    out = tmp_path / "corpus"
    result = invoke(runner, "--seed", 3, "synth", "--videos", 2,
                    "--frames", 40, "--out", out)
    assert result.exit_code == 0
    containers = sorted((out / "records").glob("*.vasq"))
    assert len(containers) == 2
    assert len(records.read_container(containers[0])) == 40

    stats_dir = tmp_path / "stats"
    result = invoke(runner, "stats", "--records", out / "records",
                    "--out", stats_dir)
    assert result.exit_code == 0
    hist = (stats_dir / "hist_valence.csv").read_text().splitlines()
    assert hist[0] == "bin_low,bin_high,count"
    total = sum(int(r.split(",")[2]) for r in hist[1:])
    assert total == 80


def test_synth_deterministic_with_seed(runner, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    invoke(runner, "--seed", 9, "synth", "--videos", 1, "--frames", 10, "--out", a)
    invoke(runner, "--seed", 9, "synth", "--videos", 1, "--frames", 10, "--out", b)
    fa = (a / "records" / "synth00.vasq").read_bytes()
    fb = (b / "records" / "synth00.vasq").read_bytes()
    assert fa == fb


def test_pack_from_frames(runner, tmp_path):
    rng = np.random.default_rng(0)
    frames = tmp_path / "frames"
    frames.mkdir()
    for n in (1, 2):
        np.save(frames / f"{n}.npy",
                rng.integers(0, 256, (96, 96, 3), dtype=np.uint8))
    merged = tmp_path / "clip.txt"
    merged.write_text("1\t10\t20\n2\t30\t40\n")
    out = tmp_path / "clip.vasq"
    result = invoke(runner, "pack", "--merged", merged, "--frames-dir", frames,
                    "--out", out)
    assert result.exit_code == 0
    back = records.read_container(out)
    assert [r.frame_id for r in back] == ["clip/1", "clip/2"]


def test_partition_command(runner, tmp_path):
    rows = []
    cats = ["mainly_positive", "mainly_negative", "both_valence", "neutral"]
    for i in range(24):
        rows.append({"id": f"v{i:02d}", "frames": 100, "fps": 30,
                     "gender": "f" if i % 2 else "m", "subject": f"s{i}",
                     "category": cats[i % 4]})
    meta = tmp_path / "meta.json"
    meta.write_text(json.dumps(rows))
    out = tmp_path / "splits.csv"
    result = invoke(runner, "--seed", 1, "partition", "--meta", meta, "--out", out)
    assert result.exit_code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "video,split"
    assert len(lines) == 25
    splits = [ln.split(",")[1] for ln in lines[1:]]
    assert splits.count("train") == 17  # 24 - floor(24*.16)=3 - floor(24*.2)=4
    assert splits.count("validate") == 3
    assert splits.count("test") == 4


def test_filter_command(runner, tmp_path):
    from PIL import Image

    rng = np.random.default_rng(1)
    cand = tmp_path / "cands"
    cand.mkdir()
    ref_arr = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    for i, arr in enumerate([rng.integers(0, 256, (32, 32, 3), dtype=np.uint8),
                             ref_arr.copy(),
                             rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)]):
        Image.fromarray(arr).save(cand / f"obj_{i}.png")
    ref = tmp_path / "ref.png"
    Image.fromarray(ref_arr).save(ref)
    out = tmp_path / "picked.json"
    result = invoke(runner, "filter", "--candidates-dir", cand,
                    "--reference", ref, "--out", out)
    assert result.exit_code == 0
    manifest = json.loads(out.read_text())
    assert manifest["cands"]["index"] == 1


def test_train_eval_test_flow(runner, tmp_path):
    corpus = tmp_path / "corpus"
    invoke(runner, "--seed", 5, "synth", "--videos", 2, "--frames", 32,
           "--out", corpus)
    ckpt_dir = tmp_path / "ckpt"
    result = invoke(runner, "--seed", 5, "train",
                    "--records", corpus / "records",
                    "--case", 0, "--width", 1, "--hidden", 4,
                    "--attention", "off", "--seq-len", 4, "--batch", 2,
                    "--steps", 4, "--ckpt-every", 2, "--log-every", 0,
                    "--ckpt-dir", ckpt_dir)
    assert result.exit_code == 0
    ckpts = sorted(ckpt_dir.glob("*.vack"))
    assert len(ckpts) == 2
    assert (ckpt_dir / "config.json").exists()

    result = invoke(runner, "eval", "--ckpt-dir", ckpt_dir,
                    "--records", corpus / "records",
                    "--poll", 0.01, "--idle-limit", 2)
    assert result.exit_code == 0
    eval_rows = (ckpt_dir / "eval.csv").read_text().strip().splitlines()
    assert eval_rows[0] == "step,ccc_valence,ccc_arousal,mse_valence,mse_arousal,split"
    assert len(eval_rows) == 3

    preds_dir = tmp_path / "preds"
    result = invoke(runner, "test", "--ckpt", ckpts[-1],
                    "--records", corpus / "records",
                    "--out", tmp_path / "test.csv",
                    "--predictions-dir", preds_dir)
    assert result.exit_code == 0
    assert "test" in (tmp_path / "test.csv").read_text()
    pred_files = sorted(preds_dir.glob("*.csv"))
    assert len(pred_files) == 2
    assert pred_files[0].read_text().startswith("k,valence,arousal")


def test_case0_cli_shows_frozen_backbone(runner, tmp_path):
    from vaseq import checkpoint as ckpt_mod

    corpus = tmp_path / "corpus"
    invoke(runner, "--seed", 2, "synth", "--videos", 1, "--frames", 24,
           "--out", corpus)
    ckpt_dir = tmp_path / "ckpt"
    invoke(runner, "--seed", 2, "train", "--records", corpus / "records",
           "--case", 0, "--width", 1, "--hidden", 4, "--attention", "off",
           "--seq-len", 4, "--batch", 1, "--steps", 4, "--ckpt-every", 2,
           "--log-every", 0, "--ckpt-dir", ckpt_dir)
    ckpts = ckpt_mod.list_checkpoints(ckpt_dir)
    _, first, _ = ckpt_mod.load(ckpts[0][1])
    _, last, _ = ckpt_mod.load(ckpts[-1][1])
    cnn_names = [n for n in first if n.startswith("cnn/")]
    assert cnn_names
    for name in cnn_names:
        np.testing.assert_array_equal(first[name], last[name])
    assert any(not np.array_equal(first[n], last[n])
               for n in first if n.startswith(("rnn/", "fc/")))


# --- serve ----------------------------------------------------------------------


@pytest.fixture
def served_corpus(tmp_path_factory):
    from vaseq import server as server_mod
    from vaseq import synth

    corpus = tmp_path_factory.mktemp("served")
    synth.generate(corpus, videos=2, frames=12, seed=4)
    httpd = server_mod.serve(corpus, 0)
    thread = threading.Thread(target=httpd.serve_forever)
    thread.start()
    port = httpd.server_address[1]
    yield corpus, f"http://127.0.0.1:{port}"
    httpd.shutdown()
    thread.join()
    httpd.server_close()


def get_json(url):
    with urllib.request.urlopen(url) as resp:
        return json.loads(resp.read())


def test_serve_videos_and_frames(served_corpus):
    corpus, base = served_corpus
    videos = get_json(f"{base}/videos")
    assert [v["id"] for v in videos] == ["synth00", "synth01"]
    assert videos[0]["frames"] == 12
    assert set(videos[0]["annotated_dims"]) == {"valence", "arousal"}

    with urllib.request.urlopen(f"{base}/videos/synth00/frames/3") as resp:
        data = resp.read()
    assert resp.headers["Content-Type"] == "image/png"
    assert data[:8] == b"\x89PNG\r\n\x1a\n"

    with pytest.raises(urllib.error.HTTPError):
        get_json(f"{base}/videos/synth00/frames/999")


def test_serve_groundtruth_and_predictions(served_corpus):
    corpus, base = served_corpus
    rows = get_json(f"{base}/videos/synth00/groundtruth")
    assert len(rows) == 12
    assert set(rows[0]) == {"k", "valence", "arousal"}

    preds = corpus / "predictions"
    preds.mkdir()
    (preds / "synth00.csv").write_text("k,valence,arousal\n1,0.5,-0.25\n")
    got = get_json(f"{base}/videos/synth00/predictions")
    assert got == [{"k": 1, "valence": 0.5, "arousal": -0.25}]


def test_serve_post_annotations_round_trip(served_corpus):
    corpus, base = served_corpus
    samples = [{"t": 0.0, "v": 0}, {"t": 0.5, "v": 310}, {"t": 1.0, "v": -200}]
    req = urllib.request.Request(
        f"{base}/videos/synth01/annotations/valence",
        data=json.dumps(samples).encode(),
        headers={"Content-Type": "application/json"}, method="POST")
    with urllib.request.urlopen(req) as resp:
        assert resp.status == 204
    track_file = corpus / "tracks" / "synth01.valence.txt"
    lines = track_file.read_text().strip().splitlines()
    assert lines[1] == "0.5000 310"
    # parses under the corpus grammar
    from vaseq.corpus import AnnotationTrack

    track = AnnotationTrack.parse(track_file)
    assert [v for _, v in track.entries] == [0, 310, -200]


def test_serve_rejects_out_of_range_values(served_corpus):
    corpus, base = served_corpus
    req = urllib.request.Request(
        f"{base}/videos/synth00/annotations/arousal",
        data=json.dumps([{"t": 0.1, "v": 5000}]).encode(), method="POST")
    with pytest.raises(urllib.error.HTTPError) as err:
        urllib.request.urlopen(req)
    assert err.value.code == 400
    assert not (corpus / "tracks" / "synth00.arousal.txt").read_text().startswith("0.1")

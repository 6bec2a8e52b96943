import pytest

from wealthmap.cli import main


@pytest.fixture(scope="session")
def small_world(tmp_path_factory):
    """A compact synthetic world plus the ingest/train/predict chain, shared
    by CLI-level tests. Two countries, 100 tiles each."""
    root = tmp_path_factory.mktemp("small_world")
    w = root / "world"
    assert main([
        "synth", "-o", str(w), "--seed", "11", "--countries", "2", "--tiles", "100",
        "--clusters", "30", "--households", "4", "--target-households", "80",
    ]) == 0
    ingest = root / "ingest"
    assert main([
        "ingest", "-o", str(ingest), "--seed", "11",
        "--features", str(w / "features.csv"), "--population", str(w / "population.csv"),
        "--clusters", str(w / "clusters.csv"), "--households", str(w / "households.csv"),
    ]) == 0
    train = root / "train"
    assert main([
        "train", "-o", str(train), "--seed", "11",
        "--training", str(ingest / "training.csv"), "--norm-stats", str(ingest / "norm_stats.csv"),
        "--n-trees", "25", "--learning-rate", "0.25",
    ]) == 0
    predict = root / "predict"
    assert main([
        "predict", "-o", str(predict), "--seed", "11", "--model", str(train / "model.txt"),
        "--features", str(w / "features.csv"), "--population", str(w / "population.csv"),
    ]) == 0
    agg = root / "agg"
    assert main([
        "aggregate", "-o", str(agg), "--seed", "11", "--rwi", str(predict / "rwi.csv"),
        "--admin", str(w / "admin_assignment.csv"), "--truth", str(w / "unit_truth.csv"),
    ]) == 0
    return {
        "root": root, "world": w, "ingest": ingest, "train": train,
        "predict": predict, "agg": agg,
    }

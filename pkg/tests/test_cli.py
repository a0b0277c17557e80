import numpy as np

from irsfd.channels import sample_full_csi
from irsfd.cli import main
from irsfd.scenario import save_scenario, unit_scenario


def tiny_config(tmp_path):
    path = tmp_path / "scen.ini"
    save_scenario(unit_scenario(), path)
    return path


def test_dump_config(capsys):
    assert main(["--dump-config"]) == 0
    out = capsys.readouterr().out
    assert "[system]" in out and "[power]" in out


def test_no_command_prints_help(capsys):
    assert main([]) == 2


def test_overhead_command(tmp_path, capsys):
    assert main(["overhead", "--out", str(tmp_path), "--values", "0,100"]) == 0
    assert (tmp_path / "overhead.csv").exists()
    assert (tmp_path / "overhead.png").exists()


def test_convergence_command(tmp_path):
    cfg = tiny_config(tmp_path)
    rc = main(["convergence", "--config", str(cfg), "--out", str(tmp_path),
               "--seeds", "0", "--ssca-iters", "5"])
    assert rc == 0
    assert (tmp_path / "convergence_bcd.csv").exists()
    assert (tmp_path / "convergence_ssca.csv").exists()
    assert (tmp_path / "convergence.png").exists()


def test_sweep_command(tmp_path):
    cfg = tiny_config(tmp_path)
    rc = main(["sweep", "--param", "quantization", "--values", "1,3",
               "--schemes", "random-irs,no-irs", "--seeds", "0,1",
               "--config", str(cfg), "--out", str(tmp_path),
               "--n-eval", "2", "--n-pool", "4", "--ssca-iters", "5"])
    assert rc == 0
    assert (tmp_path / "quantization.csv").exists()
    assert (tmp_path / "quantization.png").exists()


def test_seed_range_parsing(tmp_path):
    from irsfd.cli import _parse_seeds
    assert _parse_seeds("0..3") == [0, 1, 2, 3]
    assert _parse_seeds("5, 7") == [5, 7]
    assert _parse_seeds("0..2,9") == [0, 1, 2, 9]


def test_train_and_eval_commands(tmp_path):
    scen = unit_scenario(N=4, T=8, M=2, D=1, K=1, L=1)
    cfg = tmp_path / "tiny.ini"
    save_scenario(scen, cfg)
    rc = main(["train-unfolding", "--config", str(cfg), "--out", str(tmp_path),
               "--layers", "1", "--epochs", "2", "--samples", "10"])
    assert rc == 0
    ckpt = tmp_path / "unfolding.npz"
    assert ckpt.exists()
    assert (tmp_path / "training_trace.csv").exists()
    assert (tmp_path / "training.png").exists()

    rc = main(["eval", "--config", str(cfg), "--out", str(tmp_path),
               "--checkpoint", str(ckpt), "--schemes", "unfolding,random-irs",
               "--seeds", "0", "--n-eval", "2", "--n-pool", "4",
               "--ssca-iters", "4"])
    assert rc == 0
    assert (tmp_path / "eval.csv").exists()


def test_eval_requires_checkpoint_for_unfolding(tmp_path):
    cfg = tiny_config(tmp_path)
    rc = main(["eval", "--config", str(cfg), "--out", str(tmp_path),
               "--schemes", "unfolding", "--seeds", "0"])
    assert rc == 2

import numpy as np
import pytest

from bogodisp import harness
from bogodisp.cli import main
from bogodisp.harness import ConfigError, ExperimentConfig, parse_config, read_summary, run_experiment

SMALL_FREE = """
[grid]
n = 256
L = 64.0
[potential]
g = 0.0
[time]
dt = 1e-3
sample_every = 50
transient = 1.0
[experiment]
kind = hartree_decay
"""

SMALL_FLOW = """
[grid]
n = 64
L = 16.0
[potential]
g = 0.1
R = 2.0
[time]
sample_every = 5
kernel_samples = 8
transient = 0.5
t0 = 0.5 1.5
"""


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_defaults_and_given():
    cfg = parse_config("[grid]\nn = 512\n")
    assert cfg.n == 512 and cfg.L == 256.0
    assert cfg.given == frozenset({"n"})


@pytest.mark.parametrize(
    "text,field",
    [
        ("[experiment]\nkind = bogus\n", "experiment.kind"),
        ("[grid]\nsize = 3\n", "grid.size"),
        ("[nonsense]\nx = 1\n", "nonsense"),
        ("[grid]\nn = many\n", "grid.n"),
        ("[grid]\nn = 100\n", "grid.n"),
        ("[time]\ndt = 0.1\n", "time.dt"),
        ("[potential]\nR = 100\n", "potential.R"),
        ("[fock]\nmodes = 5\n", "fock.modes"),
    ],
)
def test_config_errors_name_field(text, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.field == field
    assert field in str(exc.value)


def test_free_hartree_summary_and_reproducibility(tmp_path):
    cfg = parse_config(SMALL_FREE + "[fit]\nt_lo = 2\n")
    s1 = run_experiment(cfg, tmp_path / "a")
    s2 = run_experiment(cfg, tmp_path / "b")
    kv1 = (tmp_path / "a" / "summary.kv").read_text()
    assert kv1 == (tmp_path / "b" / "summary.kv").read_text()
    vals = read_summary(tmp_path / "a" / "summary.kv")
    assert float(vals["closed_form_error"]) < 1e-10
    assert "fit.phi_linf.r2" in vals and "fit.phi_linf.t_lo" in vals
    assert (tmp_path / "a" / "hartree.csv").exists()
    assert "phi_linf" in (tmp_path / "a" / "summary.txt").read_text()
    assert s1.all_passed and s2.values == s1.values


def test_failure_leaves_nothing(tmp_path, monkeypatch):
    def boom(st, out, summary):
        (out / "partial.csv").write_text("x")
        raise RuntimeError("boom")

    monkeypatch.setitem(harness.RUNNERS, "hartree_decay", boom)
    with pytest.raises(RuntimeError):
        run_experiment(parse_config(SMALL_FREE), tmp_path / "out")
    assert list(tmp_path.iterdir()) == []


def test_certificates_short_run(tmp_path):
    cfg = parse_config(SMALL_FLOW + "[experiment]\nkind = certificates\n")
    s = run_experiment(cfg, tmp_path / "c")
    names = list(s.certificates)
    assert "gronwall.gamma_op" in names and "gronwall.sigma_hs" in names
    assert sum(n.startswith("kernel.") for n in names) == 10
    assert s.all_passed
    assert (tmp_path / "c" / "gronwall.csv").exists()


def test_flow_free_comparison(tmp_path):
    cfg = parse_config(SMALL_FLOW + "[experiment]\nkind = free_comparison\n")
    s = run_experiment(cfg, tmp_path / "f")
    assert "free_residual.ratio_late_early" in s.values
    assert s.values["defect_max"] < 1e-8
    assert (tmp_path / "f" / "free_comparison_t0_0.5.csv").exists()
    assert (tmp_path / "f" / "flow.csv").exists()


def test_fit_command_reads_csv(tmp_path):
    t = np.linspace(0, 30, 61)
    lines = ["t,y"] + [f"{float(a)!r},{float(b)!r}" for a, b in zip(t, 2 * (1 + t) ** -0.75)]
    data = write(tmp_path, "\n".join(lines) + "\n", "series.csv")
    cfg = write(tmp_path, f"[fit]\ninput = {data}\ncolumn = y\nt_lo = 1\n")
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "fit")]) == 0
    vals = read_summary(tmp_path / "fit" / "summary.kv")
    assert abs(float(vals["fit.y.exponent"]) - 0.75) < 1e-9


def test_cli_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, "[experiment]\nkind = nope\n", "bad.ini")
    assert main(["hartree", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "kind" in capsys.readouterr().err
    mismatch = write(tmp_path, "[experiment]\nkind = kernel_decay\n", "mm.ini")
    assert main(["hartree", "--config", str(mismatch), "--out", str(tmp_path / "x")]) == 2
    good = write(tmp_path, SMALL_FREE.replace("kind = hartree_decay", "seed = 3"))
    assert main(["hartree", "--config", str(good), "--out", str(tmp_path / "ok")]) == 0
    assert "all certificates: PASS" in capsys.readouterr().out
    assert not (tmp_path / "x").exists()


def test_cli_fock_oracle(tmp_path):
    cfg = write(tmp_path, "[fock]\nn_max = 12\nfock_T = 0.5\nfock_dt = 1e-3\n")
    assert main(["oracle", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    vals = read_summary(tmp_path / "o" / "summary.kv")
    assert float(vals["fock.nmax_12.rel_N"]) < 1e-4
    assert (tmp_path / "o" / "fock_nmax_16.csv").exists()


def test_config_dataclass_defaults():
    cfg = ExperimentConfig()
    assert (cfg.n, cfg.L, cfg.g, cfg.R, cfg.dt) == (1024, 256.0, 0.1, 2.0, 1e-2)
